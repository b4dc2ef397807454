use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::TrpoConfig;
use super::gae::compute_advantages;
use super::rollout::{collect_rollouts, evaluate_policy, Task};
use super::step::{trpo_step, StepInfo, TaskBatch};
use crate::dst::CachedEncoder;
use crate::env::{DialogEnv, DomainSpec, RewardConfig};
use crate::policy::{MultiDomainPolicy, PolicyConfig, ValueBaselines};
use crate::rng::{label, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Mtl,
    Tl,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Single, Mode::Mtl, Mode::Tl];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Mtl => "mtl",
            Mode::Tl => "tl",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Mode::Single),
            "mtl" => Ok(Mode::Mtl),
            "tl" => Ok(Mode::Tl),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected single, mtl or tl)"))),
        }
    }
}

/// Training length and evaluation cadence, per domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Training dialogs per domain.
    pub budget: usize,
    /// Evaluate whenever this many more training dialogs have been seen.
    pub checkpoint_interval: usize,
    /// Held-out dialogs per evaluation; not counted as training dialogs.
    pub eval_dialogs: usize,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.checkpoint_interval == 0 || self.eval_dialogs == 0 {
            return Err(Error::Config("budget, checkpoint interval and eval dialogs must be at least 1".into()));
        }
        if self.budget < self.checkpoint_interval {
            return Err(Error::Config("budget must be at least the checkpoint interval".into()));
        }
        Ok(())
    }
}

/// One line of the iteration log. Evaluation columns are filled only at
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub run_id: String,
    pub mode: Mode,
    pub domain: String,
    pub seed: u64,
    pub dialogs_seen: usize,
    pub success_rate: Option<f64>,
    pub avg_length: Option<f64>,
    pub mean_kl: f64,
    pub surrogate_gain: f64,
    pub accepted: bool,
}

/// The log of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub run_id: String,
    pub mode: Mode,
    pub domains: Vec<String>,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
}

/// An evaluated point of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub dialogs_seen: usize,
    pub success_rate: f64,
    pub avg_length: f64,
}

impl TrainRun {
    /// Evaluated checkpoints of `domain`, in training order.
    pub fn checkpoints(&self, domain: &str) -> Vec<Checkpoint> {
        self.records
            .iter()
            .filter(|r| r.domain == domain)
            .filter_map(|r| {
                Some(Checkpoint {
                    dialogs_seen: r.dialogs_seen,
                    success_rate: r.success_rate?,
                    avg_length: r.avg_length?,
                })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_records(w, &self.records)
    }
}

pub fn write_records<W: Write>(w: W, records: &[IterationRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if records.is_empty() {
        out.write_record([
            "run_id",
            "mode",
            "domain",
            "seed",
            "dialogs_seen",
            "success_rate",
            "avg_length",
            "mean_kl",
            "surrogate_gain",
            "accepted",
        ])
        .map_err(csv_err)?;
    }
    for r in records {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<IterationRecord>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(csv_err))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("iteration log: {e}"))
}

/// Shared ingredients of every training mode.
#[derive(Debug, Clone, Copy)]
pub struct TrainSetup<'a> {
    pub encoder: &'a CachedEncoder,
    pub policy: PolicyConfig,
    pub trpo: TrpoConfig,
    pub schedule: Schedule,
    pub reward: RewardConfig,
    pub noise_p: f64,
}

impl TrainSetup<'_> {
    fn envs(&self, domains: &[DomainSpec]) -> Vec<DialogEnv> {
        domains
            .iter()
            .map(|d| DialogEnv::new(d.clone(), self.reward, self.noise_p))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        self.trpo.validate()?;
        self.schedule.validate()?;
        self.policy.validate()?;
        self.reward.validate()
    }
}

/// A finished run together with the networks it produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run: TrainRun,
    pub policy: MultiDomainPolicy,
    pub values: ValueBaselines,
}

struct Loop<'a> {
    setup: &'a TrainSetup<'a>,
    run_id: String,
    mode: Mode,
    seed: u64,
    phase: &'static str,
}

impl Loop<'_> {
    /// Alternates rollouts, one joint trust-region step and value fitting
    /// until every task has seen the budget.
    fn run(
        &self,
        policy: &mut MultiDomainPolicy,
        values: &mut ValueBaselines,
        envs: &[DialogEnv],
    ) -> Result<Vec<IterationRecord>> {
        let cfg = &self.setup.trpo;
        let sched = &self.setup.schedule;
        let mut records = Vec::new();
        let mut seen = 0usize;
        let mut next_checkpoint = sched.checkpoint_interval;
        let mut iteration = 0u64;
        while seen < sched.budget {
            let n = cfg.dialogs_per_iteration.min(sched.budget - seen);
            let tasks: Vec<Task> = envs
                .iter()
                .map(|e| Task::new(e, self.setup.encoder, policy))
                .collect::<Result<_>>()?;
            let mut batches = Vec::with_capacity(tasks.len());
            let mut fits = Vec::with_capacity(tasks.len());
            for task in &tasks {
                let trajs = collect_rollouts(policy, task, n, self.seed, self.phase, seen as u64)?;
                let vd = values.domain_index(task.name())?;
                let adv = compute_advantages(&trajs, |o| values.predict(vd, o), cfg.discount, cfg.gae_lambda, true)?;
                batches.push(TaskBatch::new(task.policy_domain, &trajs, &adv)?);
                fits.push((vd, trajs, adv.targets));
            }
            let info = trpo_step(policy, &batches, cfg)?;
            for (vd, trajs, targets) in &fits {
                let obs: Vec<&[f64]> = trajs.iter().flat_map(|t| t.observations.iter().map(|o| o.as_slice())).collect();
                let flat: Vec<f64> = targets.iter().flatten().copied().collect();
                let mut rng = stream(self.seed, &[label(self.phase), label("value"), *vd as u64, iteration]);
                values.fit(*vd, &obs, &flat, cfg.value_epochs, &mut rng)?;
            }
            seen += n;
            iteration += 1;
            let evaluate = seen >= next_checkpoint || seen == sched.budget;
            while next_checkpoint <= seen {
                next_checkpoint += sched.checkpoint_interval;
            }
            let tasks: Vec<Task> = envs
                .iter()
                .map(|e| Task::new(e, self.setup.encoder, policy))
                .collect::<Result<_>>()?;
            for task in &tasks {
                let (success, length) = if evaluate {
                    let (s, l) = evaluate_policy(policy, task, sched.eval_dialogs, self.seed, seen as u64)?;
                    (Some(s), Some(l))
                } else {
                    (None, None)
                };
                records.push(self.record(task.name(), seen, success, length, &info));
            }
            if evaluate {
                log::info!(
                    "{} {}: {seen} dialogs/domain, success {}",
                    self.run_id,
                    self.phase,
                    records
                        .iter()
                        .rev()
                        .take(tasks.len())
                        .map(|r| format!("{}={:.3}", r.domain, r.success_rate.unwrap_or(f64::NAN)))
                        .collect::<Vec<_>>()
                        .join(" ")
                );
            }
        }
        Ok(records)
    }

    fn record(
        &self,
        domain: &str,
        seen: usize,
        success_rate: Option<f64>,
        avg_length: Option<f64>,
        info: &StepInfo,
    ) -> IterationRecord {
        IterationRecord {
            run_id: self.run_id.clone(),
            mode: self.mode,
            domain: domain.to_string(),
            seed: self.seed,
            dialogs_seen: seen,
            success_rate,
            avg_length,
            mean_kl: info.mean_kl,
            surrogate_gain: info.surrogate_gain,
            accepted: info.accepted,
        }
    }
}

pub fn run_id(mode: Mode, domain: &str, seed: u64) -> String {
    format!("{mode}-{domain}-s{seed}")
}

fn fresh_networks(setup: &TrainSetup<'_>, domains: &[DomainSpec], seed: u64) -> Result<(MultiDomainPolicy, ValueBaselines)> {
    let width = setup.encoder.model().observation_width();
    let mut rng = stream(seed, &[label("policy-init")]);
    let policy = MultiDomainPolicy::new(domains, width, setup.policy, &mut rng)?;
    let mut rng = stream(seed, &[label("value-init")]);
    let values = ValueBaselines::new(domains, width, &setup.policy, &mut rng)?;
    Ok((policy, values))
}

/// A separate agent for one domain.
pub fn train_single(setup: &TrainSetup<'_>, domain: &DomainSpec, seed: u64) -> Result<TrainOutcome> {
    setup.validate()?;
    let (mut policy, mut values) = fresh_networks(setup, std::slice::from_ref(domain), seed)?;
    let run_id = run_id(Mode::Single, &domain.name, seed);
    let lp = Loop {
        setup,
        run_id: run_id.clone(),
        mode: Mode::Single,
        seed,
        phase: "single",
    };
    let records = lp.run(&mut policy, &mut values, &setup.envs(std::slice::from_ref(domain)))?;
    Ok(TrainOutcome {
        run: TrainRun {
            run_id,
            mode: Mode::Single,
            domains: vec![domain.name.clone()],
            seed,
            records,
        },
        policy,
        values,
    })
}

/// One agent trained on all `domains` at once with averaged shared-layer
/// gradients. The budget applies to each domain.
pub fn train_mtl(setup: &TrainSetup<'_>, domains: &[DomainSpec], seed: u64) -> Result<TrainOutcome> {
    train_mtl_as(setup, domains, seed, "mtl", &format!("mtl-all-s{seed}"))
}

fn train_mtl_as(
    setup: &TrainSetup<'_>,
    domains: &[DomainSpec],
    seed: u64,
    phase: &'static str,
    run_id: &str,
) -> Result<TrainOutcome> {
    setup.validate()?;
    if domains.len() < 2 {
        return Err(Error::Config("multi-task training needs at least two domains".into()));
    }
    let (mut policy, mut values) = fresh_networks(setup, domains, seed)?;
    let lp = Loop {
        setup,
        run_id: run_id.to_string(),
        mode: Mode::Mtl,
        seed,
        phase,
    };
    let records = lp.run(&mut policy, &mut values, &setup.envs(domains))?;
    Ok(TrainOutcome {
        run: TrainRun {
            run_id: run_id.to_string(),
            mode: Mode::Mtl,
            domains: domains.iter().map(|d| d.name.clone()).collect(),
            seed,
            records,
        },
        policy,
        values,
    })
}

/// Result of a transfer run: the target-domain log and the source phase.
#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub target: TrainOutcome,
    pub source_run: TrainRun,
}

/// Multi-task pre-training on `sources`, then fine-tuning a fresh head on
/// `target`. Only target dialogs count in the returned target run.
pub fn train_tl(
    setup: &TrainSetup<'_>,
    sources: &[DomainSpec],
    target: &DomainSpec,
    seed: u64,
) -> Result<TransferOutcome> {
    if sources.iter().any(|s| s.name == target.name) {
        return Err(Error::Config(format!("target {} is also a source", target.name)));
    }
    let id = run_id(Mode::Tl, &target.name, seed);
    let source = train_mtl_as(setup, sources, seed, "tl-source", &format!("{id}-source"))?;
    let mut rng = stream(seed, &[label("transfer-head"), label(&target.name)]);
    let mut policy = source.policy.clone_for_transfer(target, &mut rng)?;
    let mut rng = stream(seed, &[label("value-init"), label(&target.name)]);
    let mut values = ValueBaselines::new(
        std::slice::from_ref(target),
        setup.encoder.model().observation_width(),
        &setup.policy,
        &mut rng,
    )?;
    let lp = Loop {
        setup,
        run_id: id.clone(),
        mode: Mode::Tl,
        seed,
        phase: "tl-target",
    };
    let records = lp.run(&mut policy, &mut values, &setup.envs(std::slice::from_ref(target)))?;
    Ok(TransferOutcome {
        target: TrainOutcome {
            run: TrainRun {
                run_id: id,
                mode: Mode::Tl,
                domains: vec![target.name.clone()],
                seed,
                records,
            },
            policy,
            values,
        },
        source_run: source.run,
    })
}
