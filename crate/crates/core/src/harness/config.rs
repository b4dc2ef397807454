use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dst::{CorpusOptions, DstConfig};
use crate::env::{DomainSpec, RewardConfig};
use crate::policy::PolicyConfig;
use crate::trpo::{Mode, Schedule, TrpoConfig};
use crate::{Error, Result};

/// Preset sizes: `desk` runs on one machine in hours, `paper` uses the
/// full-size network widths and budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Config(format!("unknown scale `{other}` (expected desk or paper)"))),
        }
    }
}

/// Noise levels tried when calibrating the environment.
pub const NOISE_GRID: [f64; 6] = [0.10, 0.15, 0.20, 0.25, 0.30, 0.35];

/// Average rule-based success the calibrated noise aims for.
pub const TARGET_RULE_SUCCESS: f64 = 0.645;

/// The `[experiment]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Built-in domain names.
    pub domains: Vec<String>,
    /// Extra domains loaded from TOML files.
    #[serde(default)]
    pub domain_files: Vec<PathBuf>,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    /// Training dialogs per domain.
    pub budget: usize,
    pub checkpoint_interval: usize,
    pub eval_dialogs: usize,
    /// Dialog count of the early success column of the report.
    pub success_cut: usize,
    /// Fixed user noise; calibrated against the rule-based baseline when absent.
    pub noise_p: Option<f64>,
    /// Episodes per rule-based estimate.
    pub rule_episodes: usize,
    pub calibration_episodes: usize,
    pub corpus_train: usize,
    pub corpus_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub experiment: ExperimentSettings,
    pub dst: DstConfig,
    pub policy: PolicyConfig,
    pub trpo: TrpoConfig,
    pub reward: RewardConfig,
    pub corpus: CorpusOptions,
}

impl ExperimentConfig {
    pub fn for_scale(scale: Scale) -> Self {
        let domains = DomainSpec::all_builtin().into_iter().map(|d| d.name).collect();
        let experiment = match scale {
            Scale::Desk => ExperimentSettings {
                domains,
                domain_files: Vec::new(),
                modes: Mode::ALL.to_vec(),
                seeds: (0..5).collect(),
                budget: 3000,
                checkpoint_interval: 250,
                eval_dialogs: 200,
                success_cut: 1000,
                noise_p: None,
                rule_episodes: 2000,
                calibration_episodes: 2000,
                corpus_train: 300,
                corpus_test: 100,
            },
            Scale::Paper => ExperimentSettings {
                domains,
                domain_files: Vec::new(),
                modes: Mode::ALL.to_vec(),
                seeds: (0..10).collect(),
                budget: 10_000,
                checkpoint_interval: 500,
                eval_dialogs: 500,
                success_cut: 2000,
                noise_p: None,
                rule_episodes: 10_000,
                calibration_episodes: 2000,
                corpus_train: 2000,
                corpus_test: 500,
            },
        };
        Self {
            scale,
            experiment,
            dst: match scale {
                Scale::Desk => DstConfig::desk(),
                Scale::Paper => DstConfig::paper(),
            },
            policy: match scale {
                Scale::Desk => PolicyConfig::desk(),
                Scale::Paper => PolicyConfig::paper(),
            },
            trpo: match scale {
                Scale::Desk => TrpoConfig {
                    max_kl: 0.01,
                    dialogs_per_iteration: 20,
                    ..TrpoConfig::default()
                },
                Scale::Paper => TrpoConfig::default(),
            },
            reward: RewardConfig::default(),
            corpus: CorpusOptions::default(),
        }
    }

    /// Reads a TOML file whose tables override the preset of `scale`
    /// (or of its own `scale` key when `scale` is `None`).
    pub fn from_toml_str(text: &str, scale: Option<Scale>) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let file_scale = match user.get("scale") {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| Error::Config("`scale` must be a string".into()))?
                    .parse()?,
            ),
            None => None,
        };
        let scale = scale.or(file_scale).unwrap_or_default();
        let base = toml::Table::try_from(Self::for_scale(scale)).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = base;
        merge(&mut merged, user);
        merged.insert("scale".into(), toml::Value::String(scale.to_string()));
        let config: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, scale: Option<Scale>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, scale)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if e.modes.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        if e.rule_episodes == 0 || e.calibration_episodes == 0 {
            return Err(Error::Config("rule-based estimates need at least one episode".into()));
        }
        if e.corpus_train == 0 || e.corpus_test == 0 {
            return Err(Error::Config("corpus sizes must be at least 1".into()));
        }
        if e.success_cut == 0 || e.success_cut > e.budget {
            return Err(Error::Config("success_cut must lie in [1, budget]".into()));
        }
        if let Some(p) = e.noise_p {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("noise_p must lie in [0, 1], got {p}")));
            }
        }
        let needs_many = e.modes.iter().any(|m| *m != Mode::Single);
        let domains = self.domains()?;
        if needs_many && domains.len() < 2 {
            return Err(Error::Config("multi-task and transfer modes need at least two domains".into()));
        }
        if e.modes.contains(&Mode::Tl) && domains.len() < 3 {
            return Err(Error::Config("transfer needs at least two source domains besides each target".into()));
        }
        self.schedule().validate()?;
        self.dst.validate()?;
        self.policy.validate()?;
        self.trpo.validate()?;
        self.reward.validate()
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            budget: self.experiment.budget,
            checkpoint_interval: self.experiment.checkpoint_interval,
            eval_dialogs: self.experiment.eval_dialogs,
        }
    }

    /// Resolves the configured domains in order, checking names are unique.
    pub fn domains(&self) -> Result<Vec<DomainSpec>> {
        let mut out = Vec::new();
        for name in &self.experiment.domains {
            out.push(DomainSpec::builtin(name)?);
        }
        for path in &self.experiment.domain_files {
            out.push(DomainSpec::load(path)?);
        }
        if out.is_empty() {
            return Err(Error::Config("no domains configured".into()));
        }
        for (i, d) in out.iter().enumerate() {
            if out[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::DuplicateDomain(d.name.clone()));
            }
        }
        Ok(out)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
