use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::baseline::{calibrate_noise, BaselineCache, CalibrationPoint, RuleBasedEstimate};
use super::config::ExperimentConfig;
use super::metrics::{dialogs_to_beat, MetricsTable};
use crate::dst::{
    generate_corpus, joint_accuracy, read_corpus, train_dst, write_corpus, CachedEncoder, DstConfig, DstModel,
    DstTrainingReport, LabeledDialog,
};
use crate::env::{DialogEnv, DomainSpec};
use crate::nn::{read_checkpoint, write_checkpoint};
use crate::policy::{MultiDomainPolicy, PolicyConfig};
use crate::rng::{label, stream};
use crate::trpo::{
    evaluate_policy, read_records, train_mtl, train_single, train_tl, write_records, Mode, Task, TrainRun, TrainSetup,
    TrpoConfig, DIALOGS_PER_ITERATION_GRID, MAX_KL_GRID,
};
use crate::{Error, Result};

/// File layout of an output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn noise(&self) -> PathBuf {
        self.root.join("noise.json")
    }

    pub fn corpus(&self, domain: &str, split: &str) -> PathBuf {
        self.root.join("corpus").join(format!("{domain}.{split}.jsonl"))
    }

    pub fn dst_checkpoint(&self) -> PathBuf {
        self.root.join("dst").join("model.ckpt")
    }

    pub fn dst_meta(&self) -> PathBuf {
        self.root.join("dst").join("meta.json")
    }

    pub fn baselines(&self) -> PathBuf {
        self.root.join("baselines.json")
    }

    pub fn references(&self) -> PathBuf {
        self.root.join("references.csv")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    /// Source-phase logs of transfer runs, kept apart from the result logs.
    pub fn sources(&self) -> PathBuf {
        self.root.join("sources")
    }

    pub fn run_log(&self, run_id: &str) -> PathBuf {
        self.runs().join(format!("{run_id}.csv"))
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn policy_checkpoint(&self, run_id: &str) -> PathBuf {
        self.root.join("policies").join(format!("{run_id}.ckpt"))
    }

    pub fn policy_meta(&self, run_id: &str) -> PathBuf {
        self.root.join("policies").join(format!("{run_id}.json"))
    }

    pub fn grid(&self, domain: &str) -> PathBuf {
        self.root.join("grid").join(domain)
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Writes through a temporary file so that an interrupted cell leaves no
/// partial log behind.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    create_parent(path)?;
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub noise_p: f64,
    pub sweep: Vec<CalibrationPoint>,
}

/// The configured noise, else a stored calibration, else a fresh one.
pub fn resolve_noise(config: &ExperimentConfig, artifacts: &Artifacts, seed: u64) -> Result<f64> {
    if let Some(p) = config.experiment.noise_p {
        return Ok(p);
    }
    let path = artifacts.noise();
    if path.exists() {
        let rec: NoiseRecord = serde_json::from_str(&fs::read_to_string(&path)?)?;
        return Ok(rec.noise_p);
    }
    let domains = config.domains()?;
    let (noise_p, sweep) = calibrate_noise(&domains, config.experiment.calibration_episodes, config.reward, seed)?;
    log::info!("calibrated noise_p = {noise_p}");
    write_atomic(&path, |w| Ok(serde_json::to_writer_pretty(w, &NoiseRecord { noise_p, sweep })?))?;
    Ok(noise_p)
}

/// Generates train and test corpora for every configured domain.
pub fn gen_corpus(config: &ExperimentConfig, artifacts: &Artifacts, noise_p: f64, seed: u64) -> Result<()> {
    let domains = config.domains()?;
    for d in &domains {
        for (split, n) in [("train", config.experiment.corpus_train), ("test", config.experiment.corpus_test)] {
            let mut rng = stream(seed, &[label("corpus"), label(&d.name), label(split)]);
            let dialogs = generate_corpus(d, n, noise_p, &config.corpus, &mut rng)?;
            write_atomic(&artifacts.corpus(&d.name, split), |w| write_corpus(w, &dialogs, &domains))?;
        }
    }
    Ok(())
}

pub fn load_corpus(artifacts: &Artifacts, domains: &[DomainSpec], domain: &str, split: &str) -> Result<Vec<LabeledDialog>> {
    let path = artifacts.corpus(domain, split);
    let file = File::open(&path).map_err(|_| {
        Error::MissingArtifact(format!("corpus {} not found; run gen-corpus first", path.display()))
    })?;
    read_corpus(BufReader::new(file), domains)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DstMeta {
    config: DstConfig,
    domains: Vec<DomainSpec>,
    noise_p: f64,
    epoch_losses: Vec<f64>,
    validation_accuracy: Vec<f64>,
    best_epoch: usize,
}

/// Trains the tracker on the stored training corpora and saves it.
pub fn train_dst_stage(
    config: &ExperimentConfig,
    artifacts: &Artifacts,
    noise_p: f64,
    seed: u64,
) -> Result<(DstModel, DstTrainingReport)> {
    let domains = config.domains()?;
    let corpora = domains
        .iter()
        .map(|d| Ok((d.clone(), load_corpus(artifacts, &domains, &d.name, "train")?)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = stream(seed, &[label("dst-train")]);
    let (model, report) = train_dst(&corpora, &config.dst, &mut rng)?;
    write_atomic(&artifacts.dst_checkpoint(), |w| write_checkpoint(w, model.params()))?;
    let meta = DstMeta {
        config: config.dst,
        domains,
        noise_p,
        epoch_losses: report.epoch_losses.clone(),
        validation_accuracy: report.validation_accuracy.clone(),
        best_epoch: report.best_epoch,
    };
    write_atomic(&artifacts.dst_meta(), |w| Ok(serde_json::to_writer_pretty(w, &meta)?))?;
    Ok((model, report))
}

/// Loads the saved tracker.
pub fn load_dst(artifacts: &Artifacts) -> Result<DstModel> {
    let missing = || {
        Error::MissingArtifact(format!(
            "no trained tracker in {}; run train-dst first",
            artifacts.root.display()
        ))
    };
    let meta = fs::read_to_string(artifacts.dst_meta()).map_err(|_| missing())?;
    let meta: DstMeta = serde_json::from_str(&meta)?;
    let file = File::open(artifacts.dst_checkpoint()).map_err(|_| missing())?;
    let params = read_checkpoint(BufReader::new(file))?;
    DstModel::from_params(&meta.domains, meta.config, params)
}

/// Test-set joint accuracy per domain.
pub fn eval_dst(config: &ExperimentConfig, artifacts: &Artifacts, model: &DstModel) -> Result<Vec<(String, f64)>> {
    let domains = config.domains()?;
    domains
        .iter()
        .map(|d| {
            let test = load_corpus(artifacts, &domains, &d.name, "test")?;
            Ok((d.name.clone(), joint_accuracy(model, &test, &d.name)?))
        })
        .collect()
}

/// Rule-based estimates for every domain, measured once per noise level and
/// cached in the output directory.
pub fn references(
    config: &ExperimentConfig,
    artifacts: &Artifacts,
    noise_p: f64,
    seed: u64,
) -> Result<BTreeMap<String, RuleBasedEstimate>> {
    let mut cache = BaselineCache::load(&artifacts.baselines())?;
    let mut out = BTreeMap::new();
    for d in config.domains()? {
        let e = cache.get_or_measure(&d, config.experiment.rule_episodes, noise_p, config.reward, seed)?;
        out.insert(d.name.clone(), e);
    }
    cache.save(&artifacts.baselines())?;
    write_references(&artifacts.references(), &out)?;
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ReferenceRow {
    domain: String,
    success: f64,
    success_stderr: f64,
    length: f64,
    length_stderr: f64,
    episodes: usize,
}

fn write_references(path: &Path, refs: &BTreeMap<String, RuleBasedEstimate>) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        for (d, e) in refs {
            out.serialize(ReferenceRow {
                domain: d.clone(),
                success: e.success,
                success_stderr: e.success_stderr,
                length: e.length,
                length_stderr: e.length_stderr,
                episodes: e.episodes,
            })
            .map_err(|e| Error::Parse(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    })
}

pub fn read_references(path: &Path) -> Result<BTreeMap<String, RuleBasedEstimate>> {
    let file = File::open(path)
        .map_err(|_| Error::MissingArtifact(format!("{} not found; run train first", path.display())))?;
    let mut out = BTreeMap::new();
    for row in csv::Reader::from_reader(file).deserialize::<ReferenceRow>() {
        let r = row.map_err(|e| Error::Parse(e.to_string()))?;
        out.insert(
            r.domain,
            RuleBasedEstimate {
                success: r.success,
                success_stderr: r.success_stderr,
                length: r.length,
                length_stderr: r.length_stderr,
                episodes: r.episodes,
            },
        );
    }
    Ok(out)
}

/// One independent unit of work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell {
    Single { domain: String, seed: u64 },
    Mtl { seed: u64 },
    Tl { target: String, seed: u64 },
}

impl Cell {
    pub fn run_id(&self) -> String {
        match self {
            Cell::Single { domain, seed } => crate::trpo::run_id(Mode::Single, domain, *seed),
            Cell::Mtl { seed } => format!("mtl-all-s{seed}"),
            Cell::Tl { target, seed } => crate::trpo::run_id(Mode::Tl, target, *seed),
        }
    }
}

/// Every cell of the configured modes, domains and seeds.
pub fn cells(config: &ExperimentConfig) -> Result<Vec<Cell>> {
    let domains = config.domains()?;
    let mut out = Vec::new();
    for &mode in &config.experiment.modes {
        for &seed in &config.experiment.seeds {
            match mode {
                Mode::Single => out.extend(domains.iter().map(|d| Cell::Single {
                    domain: d.name.clone(),
                    seed,
                })),
                Mode::Mtl => out.push(Cell::Mtl { seed }),
                Mode::Tl => out.extend(domains.iter().map(|d| Cell::Tl {
                    target: d.name.clone(),
                    seed,
                })),
            }
        }
    }
    Ok(out)
}

/// Trains one cell unless its log already exists, and returns the log.
pub fn run_cell(
    config: &ExperimentConfig,
    artifacts: &Artifacts,
    encoder: &CachedEncoder,
    noise_p: f64,
    cell: &Cell,
) -> Result<TrainRun> {
    let path = artifacts.run_log(&cell.run_id());
    if path.exists() {
        return load_run(&path);
    }
    let setup = TrainSetup {
        encoder,
        policy: config.policy,
        trpo: config.trpo,
        schedule: config.schedule(),
        reward: config.reward,
        noise_p,
    };
    let domains = config.domains()?;
    let find = |name: &str| -> Result<&DomainSpec> {
        domains
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDomain(name.to_string()))
    };
    log::info!("running {}", cell.run_id());
    let outcome = match cell {
        Cell::Single { domain, seed } => train_single(&setup, find(domain)?, *seed)?,
        Cell::Mtl { seed } => train_mtl(&setup, &domains, *seed)?,
        Cell::Tl { target, seed } => {
            let sources: Vec<DomainSpec> = domains.iter().filter(|d| d.name != *target).cloned().collect();
            let out = train_tl(&setup, &sources, find(target)?, *seed)?;
            let src = artifacts.sources().join(format!("{}.csv", out.source_run.run_id));
            write_atomic(&src, |w| write_records(w, &out.source_run.records))?;
            out.target
        }
    };
    save_policy(artifacts, &outcome.run.run_id, &outcome.policy)?;
    write_atomic(&path, |w| write_records(w, &outcome.run.records))?;
    Ok(outcome.run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PolicyMeta {
    domains: Vec<DomainSpec>,
    obs_width: usize,
    config: PolicyConfig,
}

fn save_policy(artifacts: &Artifacts, run_id: &str, policy: &MultiDomainPolicy) -> Result<()> {
    let meta = PolicyMeta {
        domains: policy.domains().to_vec(),
        obs_width: policy.obs_width(),
        config: *policy.config(),
    };
    write_atomic(&artifacts.policy_checkpoint(run_id), |w| write_checkpoint(w, policy.params()))?;
    write_atomic(&artifacts.policy_meta(run_id), |w| Ok(serde_json::to_writer_pretty(w, &meta)?))
}

/// Loads the final policy of a finished cell.
pub fn load_policy(artifacts: &Artifacts, run_id: &str) -> Result<MultiDomainPolicy> {
    let missing = || Error::MissingArtifact(format!("no saved policy for run {run_id}; run train first"));
    let meta = fs::read_to_string(artifacts.policy_meta(run_id)).map_err(|_| missing())?;
    let meta: PolicyMeta = serde_json::from_str(&meta)?;
    let file = File::open(artifacts.policy_checkpoint(run_id)).map_err(|_| missing())?;
    let params = read_checkpoint(BufReader::new(file))?;
    MultiDomainPolicy::from_params(&meta.domains, meta.obs_width, meta.config, params)
}

/// Evaluates a saved policy on the given domains (all of its domains when
/// empty): `(domain, success rate, mean length)`.
pub fn evaluate_saved_policy(
    config: &ExperimentConfig,
    artifacts: &Artifacts,
    run_id: &str,
    domains: &[String],
    episodes: usize,
    seed: u64,
) -> Result<Vec<(String, f64, f64)>> {
    let policy = load_policy(artifacts, run_id)?;
    let model = load_dst(artifacts)?;
    let noise_p = resolve_noise(config, artifacts, seed)?;
    let encoder = CachedEncoder::new(Arc::new(model));
    let names: Vec<String> = if domains.is_empty() {
        policy.domains().iter().map(|d| d.name.clone()).collect()
    } else {
        domains.to_vec()
    };
    names
        .iter()
        .map(|name| {
            let idx = policy.domain_index(name)?;
            let env = DialogEnv::new(policy.domains()[idx].clone(), config.reward, noise_p);
            let task = Task::new(&env, &encoder, &policy)?;
            let (s, l) = evaluate_policy(&policy, &task, episodes, seed, u64::MAX)?;
            Ok((name.clone(), s, l))
        })
        .collect()
}

/// Rebuilds a run from its log.
pub fn load_run(path: &Path) -> Result<TrainRun> {
    let records = read_records(File::open(path)?)?;
    let first = records
        .first()
        .ok_or_else(|| Error::Empty(format!("run log {} has no rows", path.display())))?;
    let mut domains: Vec<String> = Vec::new();
    for r in &records {
        if !domains.contains(&r.domain) {
            domains.push(r.domain.clone());
        }
    }
    Ok(TrainRun {
        run_id: first.run_id.clone(),
        mode: first.mode,
        domains,
        seed: first.seed,
        records,
    })
}

/// Every run log in a directory, sorted by file name.
pub fn load_runs(dir: &Path) -> Result<Vec<TrainRun>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    paths.sort();
    paths.iter().map(|p| load_run(p)).collect()
}

/// Runs every cell (skipping finished ones) and writes the report.
pub fn run_experiment(config: &ExperimentConfig, artifacts: &Artifacts, seed: u64) -> Result<MetricsTable> {
    config.validate()?;
    let model = load_dst(artifacts)?;
    check_dst_domains(&model, config)?;
    let noise_p = resolve_noise(config, artifacts, seed)?;
    references(config, artifacts, noise_p, seed)?;
    let encoder = CachedEncoder::new(Arc::new(model));
    for cell in cells(config)? {
        run_cell(config, artifacts, &encoder, noise_p, &cell)?;
    }
    report(config, artifacts)
}

fn check_dst_domains(model: &DstModel, config: &ExperimentConfig) -> Result<()> {
    for d in config.domains()? {
        model.domain_index(&d.name).map_err(|_| {
            Error::MissingArtifact(format!("the saved tracker has no head for {}; rerun train-dst", d.name))
        })?;
    }
    Ok(())
}

/// Rebuilds the tables from the run logs and references on disk.
pub fn report(config: &ExperimentConfig, artifacts: &Artifacts) -> Result<MetricsTable> {
    let refs = read_references(&artifacts.references())?;
    let runs = load_runs(&artifacts.runs())?;
    let domains: Vec<String> = config.domains()?.into_iter().map(|d| d.name).collect();
    let table = MetricsTable::build(
        &runs,
        &refs,
        &domains,
        config.experiment.budget,
        config.experiment.success_cut,
    )?;
    write_atomic(&artifacts.report_csv(), |w| table.write_csv(w))?;
    write_atomic(&artifacts.report_txt(), |w| {
        use std::io::Write;
        w.write_all(table.to_text().as_bytes())?;
        Ok(())
    })?;
    Ok(table)
}

/// Outcome of one grid cell, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub max_kl: f64,
    pub dialogs_per_iteration: usize,
    pub final_success: f64,
    /// Mean dialogs-to-beat with unreached seeds counted at the budget.
    pub dialogs_to_beat: f64,
}

/// Best cell: highest mean final success, then fewer dialogs-to-beat, then
/// smaller trust region.
pub fn select_best(cells: &[GridCell]) -> Option<&GridCell> {
    cells.iter().min_by(|a, b| {
        b.final_success
            .total_cmp(&a.final_success)
            .then(a.dialogs_to_beat.total_cmp(&b.dialogs_to_beat))
            .then(a.max_kl.total_cmp(&b.max_kl))
    })
}

/// Exhaustive single-domain sweep over `max_kls` × `batch_sizes`. Each
/// (cell, seed) log is stored so the sweep can resume.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    config: &ExperimentConfig,
    artifacts: &Artifacts,
    domain: &str,
    max_kls: &[f64],
    batch_sizes: &[usize],
    seed: u64,
) -> Result<(GridCell, Vec<GridCell>)> {
    if max_kls.is_empty() || batch_sizes.is_empty() {
        return Err(Error::Config("grid search needs non-empty grids".into()));
    }
    let model = load_dst(artifacts)?;
    check_dst_domains(&model, config)?;
    let noise_p = resolve_noise(config, artifacts, seed)?;
    let refs = references(config, artifacts, noise_p, seed)?;
    let reference = refs
        .get(domain)
        .ok_or_else(|| Error::UnknownDomain(domain.to_string()))?
        .success;
    let spec = config
        .domains()?
        .into_iter()
        .find(|d| d.name == domain)
        .ok_or_else(|| Error::UnknownDomain(domain.to_string()))?;
    let encoder = CachedEncoder::new(Arc::new(model));
    let budget = config.experiment.budget;
    let mut out = Vec::new();
    for &max_kl in max_kls {
        for &dpi in batch_sizes {
            let trpo = TrpoConfig {
                max_kl,
                dialogs_per_iteration: dpi,
                ..config.trpo
            };
            let setup = TrainSetup {
                encoder: &encoder,
                policy: config.policy,
                trpo,
                schedule: config.schedule(),
                reward: config.reward,
                noise_p,
            };
            let mut finals = Vec::new();
            let mut beats = Vec::new();
            for &s in &config.experiment.seeds {
                let path = artifacts.grid(domain).join(format!("kl{max_kl}-n{dpi}-s{s}.csv"));
                let run = if path.exists() {
                    load_run(&path)?
                } else {
                    let run = train_single(&setup, &spec, s)?.run;
                    write_atomic(&path, |w| write_records(w, &run.records))?;
                    run
                };
                let cps = run.checkpoints(domain);
                let last = cps.last().ok_or_else(|| Error::Empty("grid run without checkpoints".into()))?;
                finals.push(last.success_rate);
                beats.push(dialogs_to_beat(&cps, reference).unwrap_or(budget as f64));
            }
            let n = finals.len() as f64;
            out.push(GridCell {
                max_kl,
                dialogs_per_iteration: dpi,
                final_success: finals.iter().sum::<f64>() / n,
                dialogs_to_beat: beats.iter().sum::<f64>() / n,
            });
        }
    }
    let best = select_best(&out).expect("non-empty grid").clone();
    let summary = artifacts.grid(domain).join("summary.csv");
    write_atomic(&summary, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for c in &out {
            csv.serialize(c).map_err(|e| Error::Parse(e.to_string()))?;
        }
        csv.flush()?;
        Ok(())
    })?;
    Ok((best, out))
}

/// The full search grids.
pub fn full_grids() -> (Vec<f64>, Vec<usize>) {
    (MAX_KL_GRID.to_vec(), DIALOGS_PER_ITERATION_GRID.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(kl: f64, s: f64, b: f64) -> GridCell {
        GridCell {
            max_kl: kl,
            dialogs_per_iteration: 50,
            final_success: s,
            dialogs_to_beat: b,
        }
    }

    #[test]
    fn selection_breaks_ties_in_order() {
        let cells = [cell(0.1, 0.9, 500.0), cell(0.01, 0.95, 900.0), cell(0.03, 0.95, 700.0)];
        assert_eq!(select_best(&cells).unwrap().max_kl, 0.03);
        let cells = [cell(0.1, 0.9, 500.0), cell(0.05, 0.9, 500.0)];
        assert_eq!(select_best(&cells).unwrap().max_kl, 0.05);
        let single = [cell(0.5, 0.1, 3000.0)];
        assert_eq!(select_best(&single).unwrap(), &single[0]);
        let best = select_best(&cells).unwrap();
        assert!(cells.iter().all(|c| best.final_success >= c.final_success));
    }

    #[test]
    fn cell_enumeration_covers_modes() {
        let c = ExperimentConfig::for_scale(super::super::Scale::Desk);
        let all = cells(&c).unwrap();
        // 6 single + 1 mtl + 6 tl per seed
        assert_eq!(all.len(), 5 * 13);
        let mut ids: Vec<String> = all.iter().map(Cell::run_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), all.len());
    }

    #[test]
    fn missing_tracker_is_a_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let a = Artifacts::new(dir.path());
        assert!(matches!(load_dst(&a), Err(Error::MissingArtifact(_))));
        let c = ExperimentConfig::for_scale(super::super::Scale::Desk);
        assert!(matches!(run_experiment(&c, &a, 0), Err(Error::MissingArtifact(_))));
    }
}
