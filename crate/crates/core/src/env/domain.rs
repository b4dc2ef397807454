use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of distinct answers any system slot can take.
pub const ANSWER_CARDINALITY: usize = 20;

/// Names of the six built-in domains.
pub const BUILTIN_DOMAINS: [&str; 6] = ["bus", "movie", "rest", "rest_slot", "rest_style", "weather"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NlgStyle {
    Standard,
    Alternate,
}

impl std::str::FromStr for NlgStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(NlgStyle::Standard),
            "alternate" => Ok(NlgStyle::Alternate),
            other => Err(Error::Config(format!("unknown nlg style `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSlot {
    pub name: String,
    pub cardinality: usize,
}

/// A slot-filling domain: what the user specifies, what the system answers
/// and how utterances are worded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub user_slots: Vec<UserSlot>,
    pub system_slots: Vec<String>,
    pub nlg_style: NlgStyle,
    /// Selects the surface tokens for slot values; domains sharing a seed
    /// share a value vocabulary.
    pub value_vocab_seed: u64,
}

fn slots(spec: &[(&str, usize)]) -> Vec<UserSlot> {
    spec.iter()
        .map(|(name, cardinality)| UserSlot {
            name: (*name).to_string(),
            cardinality: *cardinality,
        })
        .collect()
}

impl DomainSpec {
    fn preset(
        name: &str,
        user: &[(&str, usize)],
        system: &[&str],
        nlg_style: NlgStyle,
        value_vocab_seed: u64,
    ) -> Self {
        Self {
            name: name.to_string(),
            user_slots: slots(user),
            system_slots: system.iter().map(|s| s.to_string()).collect(),
            nlg_style,
            value_vocab_seed,
        }
    }

    pub fn bus() -> Self {
        Self::preset(
            "bus",
            &[("from_loc", 13), ("to_loc", 13), ("datetime", 30)],
            &["arrive_in", "duration"],
            NlgStyle::Standard,
            1,
        )
    }

    pub fn movie() -> Self {
        Self::preset(
            "movie",
            &[("genre", 15), ("years", 7), ("rating", 10)],
            &["title", "director", "showtime"],
            NlgStyle::Standard,
            2,
        )
    }

    pub fn rest() -> Self {
        Self::preset(
            "rest",
            &[("loc", 11), ("food", 13)],
            &["open", "parking", "price"],
            NlgStyle::Standard,
            3,
        )
    }

    /// Same slots and templates as `rest`, different value vocabulary.
    pub fn rest_slot() -> Self {
        let mut d = Self::rest();
        d.name = "rest_slot".into();
        d.value_vocab_seed = 4;
        d
    }

    /// Same slots and values as `rest`, different templates.
    pub fn rest_style() -> Self {
        let mut d = Self::rest();
        d.name = "rest_style".into();
        d.nlg_style = NlgStyle::Alternate;
        d
    }

    pub fn weather() -> Self {
        Self::preset(
            "weather",
            &[("loc", 11), ("datetime", 7)],
            &["temperature", "weather_type"],
            NlgStyle::Standard,
            5,
        )
    }

    /// One binary user slot and one system slot; the smallest domain in
    /// which a dialog can succeed.
    pub fn micro() -> Self {
        Self::preset("micro", &[("item", 2)], &["answer"], NlgStyle::Standard, 9)
    }

    /// Built-in domain by name (the six standard ones plus `micro`).
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "bus" => Ok(Self::bus()),
            "movie" => Ok(Self::movie()),
            "rest" => Ok(Self::rest()),
            "rest_slot" => Ok(Self::rest_slot()),
            "rest_style" => Ok(Self::rest_style()),
            "weather" => Ok(Self::weather()),
            "micro" => Ok(Self::micro()),
            other => Err(Error::UnknownDomain(other.to_string())),
        }
    }

    pub fn all_builtin() -> Vec<Self> {
        BUILTIN_DOMAINS.iter().map(|n| Self::builtin(n).unwrap()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("domain name is empty".into()));
        }
        if self.user_slots.is_empty() || self.system_slots.is_empty() {
            return Err(Error::Config(format!(
                "domain `{}` needs at least one user slot and one system slot",
                self.name
            )));
        }
        let mut seen = HashSet::new();
        for slot in &self.user_slots {
            if slot.cardinality < 2 {
                return Err(Error::Config(format!(
                    "slot `{}` of `{}` has cardinality {} (< 2)",
                    slot.name, self.name, slot.cardinality
                )));
            }
            if !seen.insert(slot.name.as_str()) {
                return Err(Error::Config(format!("duplicate slot `{}` in `{}`", slot.name, self.name)));
            }
        }
        for slot in &self.system_slots {
            if !seen.insert(slot.as_str()) {
                return Err(Error::Config(format!("duplicate slot `{slot}` in `{}`", self.name)));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: DomainSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("domain spec serialises")
    }

    pub fn user_slot_index(&self, name: &str) -> Option<usize> {
        self.user_slots.iter().position(|s| s.name == name)
    }

    pub fn system_slot_index(&self, name: &str) -> Option<usize> {
        self.system_slots.iter().position(|s| s == name)
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.user_slots.iter().map(|s| s.cardinality).collect()
    }
}
