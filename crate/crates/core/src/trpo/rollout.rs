use rayon::prelude::*;

use crate::dst::CachedEncoder;
use crate::env::DialogEnv;
use crate::policy::{ground_action, sample_action, MultiDomainPolicy};
use crate::rng::{label, stream};
use crate::{Error, Result};

/// One simulated episode as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Policy head index.
    pub domain: usize,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub old_probs: Vec<Vec<f64>>,
    /// Undiscounted sum of rewards.
    pub episode_return: f64,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Everything needed to simulate dialogs of one domain.
#[derive(Debug, Clone, Copy)]
pub struct Task<'a> {
    pub env: &'a DialogEnv,
    pub encoder: &'a CachedEncoder,
    /// Index of the domain in the tracker.
    pub dst_domain: usize,
    /// Index of the domain's head in the policy.
    pub policy_domain: usize,
}

impl<'a> Task<'a> {
    /// Resolves indices by domain name.
    pub fn new(env: &'a DialogEnv, encoder: &'a CachedEncoder, policy: &MultiDomainPolicy) -> Result<Self> {
        let name = &env.domain().name;
        Ok(Self {
            env,
            encoder,
            dst_domain: encoder.model().domain_index(name)?,
            policy_domain: policy.domain_index(name)?,
        })
    }

    pub fn name(&self) -> &str {
        &self.env.domain().name
    }
}

/// Runs one episode with its own generator seeded from `(seed, stream_labels)`.
pub fn run_episode(policy: &MultiDomainPolicy, task: &Task<'_>, seed: u64, stream_labels: &[u64]) -> Result<Trajectory> {
    let mut rng = stream(seed, stream_labels);
    let env = task.env;
    let domain = env.domain();
    let mut state = env.reset(&mut rng);
    env.greeting_exchange(&mut state)?;
    let (mut obs, mut hidden) = task.encoder.opening(task.dst_domain)?;
    let mut t = Trajectory {
        domain: task.policy_domain,
        observations: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        old_log_probs: Vec::new(),
        old_probs: Vec::new(),
        episode_return: 0.0,
        success: false,
    };
    while !state.done {
        let probs = policy.action_probs(&obs, task.policy_domain)?;
        let a = sample_action(&probs, &mut rng);
        let beliefs = task.encoder.beliefs(&obs, task.dst_domain)?;
        let act = ground_action(a, &beliefs, domain)?;
        let outcome = env.step(&mut state, &act, &mut rng)?;
        let lp = probs[a].ln();
        if !lp.is_finite() {
            return Err(Error::Numeric(format!("log-probability of sampled action in {}", domain.name)));
        }
        t.observations.push(obs.0);
        t.actions.push(a);
        t.rewards.push(outcome.reward);
        t.old_log_probs.push(lp);
        t.old_probs.push(probs);
        if !outcome.done {
            let next = task.encoder.step(task.dst_domain, &hidden, &act, &outcome.user)?;
            obs = next.0;
            hidden = next.1;
        } else {
            obs = crate::dst::Observation(Vec::new());
        }
    }
    t.episode_return = state.total_return;
    t.success = state.success;
    Ok(t)
}

/// `n` episodes numbered from `first`, each on its own generator stream
/// derived from `(seed, phase, domain, episode number)`.
pub fn collect_rollouts(
    policy: &MultiDomainPolicy,
    task: &Task<'_>,
    n: usize,
    seed: u64,
    phase: &str,
    first: u64,
) -> Result<Vec<Trajectory>> {
    let (p, d) = (label(phase), label(task.name()));
    (0..n as u64)
        .into_par_iter()
        .map(|i| run_episode(policy, task, seed, &[p, d, first + i]))
        .collect()
}

/// Success rate and mean number of turns over `n` sampled episodes.
pub fn evaluate_policy(
    policy: &MultiDomainPolicy,
    task: &Task<'_>,
    n: usize,
    seed: u64,
    checkpoint: u64,
) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Config("evaluation needs at least one dialog".into()));
    }
    let (p, d) = (label("eval"), label(task.name()));
    let runs: Vec<Trajectory> = (0..n as u64)
        .into_par_iter()
        .map(|i| run_episode(policy, task, seed, &[p, d, checkpoint, i]))
        .collect::<Result<_>>()?;
    let success = runs.iter().filter(|t| t.success).count() as f64 / n as f64;
    let length = runs.iter().map(|t| t.len() as f64).sum::<f64>() / n as f64;
    Ok((success, length))
}
