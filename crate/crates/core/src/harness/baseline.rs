use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{NOISE_GRID, TARGET_RULE_SUCCESS};
use crate::env::{run_rule_based_episode, DialogEnv, DomainSpec, RewardConfig, RuleBasedPolicy};
use crate::rng::{label, stream};
use crate::{Error, Result};

/// Confidence threshold of the baseline policy in experiments.
pub const RULE_CONFIRM_THRESHOLD: f64 = 0.5;

/// Monte Carlo estimate of the baseline on one domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleBasedEstimate {
    pub success: f64,
    pub success_stderr: f64,
    /// Mean number of turns, greeting included.
    pub length: f64,
    pub length_stderr: f64,
    pub episodes: usize,
}

/// Mean and standard error of the mean (sample standard deviation / √n).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs the rule-based policy for `n` episodes, each on its own stream.
pub fn measure_rule_based(
    domain: &DomainSpec,
    n: usize,
    noise_p: f64,
    reward: RewardConfig,
    seed: u64,
) -> Result<RuleBasedEstimate> {
    if n == 0 {
        return Err(Error::Config("rule-based estimate needs at least one episode".into()));
    }
    let env = DialogEnv::new(domain.clone(), reward, noise_p);
    let policy = RuleBasedPolicy::new(RULE_CONFIRM_THRESHOLD);
    let d = label(&domain.name);
    let outcomes: Vec<(f64, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[label("rule"), d, i]);
            let s = run_rule_based_episode(&env, &policy, &mut rng)?;
            Ok((if s.success { 1.0 } else { 0.0 }, s.turn_index as f64))
        })
        .collect::<Result<_>>()?;
    let (success, success_stderr) = mean_stderr(&outcomes.iter().map(|o| o.0).collect::<Vec<_>>());
    let (length, length_stderr) = mean_stderr(&outcomes.iter().map(|o| o.1).collect::<Vec<_>>());
    Ok(RuleBasedEstimate {
        success,
        success_stderr,
        length,
        length_stderr,
        episodes: n,
    })
}

/// One row of a noise sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub noise_p: f64,
    pub mean_success: f64,
    pub per_domain: Vec<f64>,
}

/// Picks the grid noise whose average rule-based success over `domains` is
/// closest to the target; ties go to the smaller noise.
pub fn calibrate_noise(
    domains: &[DomainSpec],
    episodes: usize,
    reward: RewardConfig,
    seed: u64,
) -> Result<(f64, Vec<CalibrationPoint>)> {
    if domains.is_empty() {
        return Err(Error::Empty("calibration needs at least one domain".into()));
    }
    let mut sweep = Vec::with_capacity(NOISE_GRID.len());
    for &p in &NOISE_GRID {
        let per_domain = domains
            .iter()
            .map(|d| measure_rule_based(d, episodes, p, reward, seed).map(|e| e.success))
            .collect::<Result<Vec<_>>>()?;
        let mean_success = per_domain.iter().sum::<f64>() / per_domain.len() as f64;
        sweep.push(CalibrationPoint {
            noise_p: p,
            mean_success,
            per_domain,
        });
    }
    let best = sweep
        .iter()
        .min_by(|a, b| {
            let da = (a.mean_success - TARGET_RULE_SUCCESS).abs();
            let db = (b.mean_success - TARGET_RULE_SUCCESS).abs();
            da.total_cmp(&db)
        })
        .expect("grid is non-empty");
    Ok((best.noise_p, sweep))
}

/// Rule-based estimates stored on disk, keyed by domain and noise level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineCache {
    entries: BTreeMap<String, RuleBasedEstimate>,
}

impl BaselineCache {
    fn key(domain: &str, noise_p: f64, episodes: usize, seed: u64) -> String {
        format!("{domain}@{noise_p:.4}#{episodes}s{seed}")
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Returns the cached estimate or measures and stores it.
    pub fn get_or_measure(
        &mut self,
        domain: &DomainSpec,
        n: usize,
        noise_p: f64,
        reward: RewardConfig,
        seed: u64,
    ) -> Result<RuleBasedEstimate> {
        let key = Self::key(&domain.name, noise_p, n, seed);
        if let Some(e) = self.entries.get(&key) {
            return Ok(*e);
        }
        let e = measure_rule_based(domain, n, noise_p, reward, seed)?;
        self.entries.insert(key, e);
        Ok(e)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_baseline_always_succeeds() {
        for d in DomainSpec::all_builtin() {
            let e = measure_rule_based(&d, 200, 0.0, RewardConfig::default(), 1).unwrap();
            assert_eq!(e.success, 1.0);
            assert_eq!(e.success_stderr, 0.0);
        }
    }

    #[test]
    fn stderr_halves_with_four_times_the_episodes() {
        let d = DomainSpec::bus();
        let a = measure_rule_based(&d, 500, 0.3, RewardConfig::default(), 2).unwrap();
        let b = measure_rule_based(&d, 2000, 0.3, RewardConfig::default(), 2).unwrap();
        let ratio = a.success_stderr / b.success_stderr;
        assert!((ratio - 2.0).abs() <= 0.4, "ratio {ratio}");
    }

    #[test]
    fn mean_stderr_matches_hand_computation() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, stderr sqrt(5/12)
        assert!((s - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cache_round_trips_and_reuses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("baselines.json");
        let mut cache = BaselineCache::load(&path).unwrap();
        let d = DomainSpec::micro();
        let e = cache.get_or_measure(&d, 50, 0.2, RewardConfig::default(), 3).unwrap();
        cache.save(&path).unwrap();
        let mut again = BaselineCache::load(&path).unwrap();
        assert_eq!(again.len(), 1);
        assert_eq!(again.get_or_measure(&d, 50, 0.2, RewardConfig::default(), 3).unwrap(), e);
        assert_eq!(again.len(), 1);
    }
}
