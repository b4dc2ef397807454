use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    render_user_response, render_utterance, Actor, DialogAct, DialogEnv, DomainSpec, RewardConfig, RuleBasedPolicy,
    RuleTracker, UserResponse,
};
use crate::{Error, Result};

/// One dialog with its tracking labels. Turn `t` holds the system
/// utterance followed by the user's reply.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDialog {
    pub domain: String,
    pub turns: Vec<Vec<String>>,
    /// True goal value per user slot; constant over the dialog.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusOptions {
    /// Threshold of the baseline policy in dialogs that do not confirm.
    pub confirm_threshold: f64,
    /// Fraction of dialogs in which every heard value is confirmed.
    pub confirm_rate: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            confirm_threshold: 0.5,
            confirm_rate: 0.5,
        }
    }
}

pub(crate) fn turn_tokens(system: &DialogAct, user: &UserResponse, domain: &DomainSpec) -> Result<Vec<String>> {
    let mut tokens = render_utterance(system, domain.nlg_style, domain)?;
    tokens.extend(render_user_response(user, domain.nlg_style, domain)?);
    Ok(tokens)
}

/// Simulates `n_dialogs` baseline-policy dialogs and renders them.
///
/// A `confirm_rate` share of the dialogs confirm every heard value so that
/// the corpus also contains confirmations, denials and corrections. Every
/// dialog closes with a goodbye exchange.
pub fn generate_corpus<R: Rng + ?Sized>(
    domain: &DomainSpec,
    n_dialogs: usize,
    noise_p: f64,
    options: &CorpusOptions,
    rng: &mut R,
) -> Result<Vec<LabeledDialog>> {
    let env = DialogEnv::new(domain.clone(), RewardConfig::default(), noise_p);
    let mut out = Vec::with_capacity(n_dialogs);
    for _ in 0..n_dialogs {
        let threshold = if rng.gen::<f64>() < options.confirm_rate {
            f64::INFINITY
        } else {
            options.confirm_threshold
        };
        let policy = RuleBasedPolicy::new(threshold);
        let mut state = env.reset(rng);
        let mut tracker = RuleTracker::new(domain, 1.0 - noise_p);
        let mut turns = Vec::new();
        let mut last = None;
        while !state.done {
            let act = policy.act(&tracker, &state.goal.requested_system_slots, domain);
            let outcome = env.step(&mut state, &act, rng)?;
            tracker.observe(&act, &outcome.user);
            turns.push(turn_tokens(&act, &outcome.user, domain)?);
            last = Some(act);
        }
        if last.map(|a| a.act_type) != Some(crate::env::ActType::Goodbye) {
            turns.push(turn_tokens(
                &DialogAct::goodbye(Actor::System),
                &UserResponse::single(DialogAct::goodbye(Actor::User)),
                domain,
            )?);
        }
        out.push(LabeledDialog {
            domain: domain.name.clone(),
            turns,
            labels: state.goal.user_slot_values.clone(),
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Record {
    domain: String,
    turns: Vec<Vec<String>>,
    labels: BTreeMap<String, usize>,
}

/// One JSON record per line: domain, token arrays per turn, label map.
pub fn write_corpus<W: Write>(mut w: W, dialogs: &[LabeledDialog], domains: &[DomainSpec]) -> Result<()> {
    for d in dialogs {
        let spec = find(domains, &d.domain)?;
        let labels = spec
            .user_slots
            .iter()
            .zip(&d.labels)
            .map(|(s, v)| (s.name.clone(), *v))
            .collect();
        let rec = Record {
            domain: d.domain.clone(),
            turns: d.turns.clone(),
            labels,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus<R: BufRead>(r: R, domains: &[DomainSpec]) -> Result<Vec<LabeledDialog>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        let spec = find(domains, &rec.domain)?;
        let labels = spec
            .user_slots
            .iter()
            .map(|s| {
                rec.labels
                    .get(&s.name)
                    .copied()
                    .filter(|&v| v < s.cardinality)
                    .ok_or_else(|| Error::Parse(format!("line {}: bad or missing label `{}`", n + 1, s.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(LabeledDialog {
            domain: rec.domain,
            turns: rec.turns,
            labels,
        });
    }
    Ok(out)
}

fn find<'a>(domains: &'a [DomainSpec], name: &str) -> Result<&'a DomainSpec> {
    domains
        .iter()
        .find(|d| d.name == name)
        .ok_or_else(|| Error::UnknownDomain(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn noiseless_informs_carry_the_label() {
        let d = DomainSpec::bus();
        let corpus = generate_corpus(&d, 50, 0.0, &CorpusOptions::default(), &mut rng(1)).unwrap();
        for dialog in &corpus {
            for (i, slot) in d.user_slots.iter().enumerate() {
                let token = format!("{}_{}_{}", slot.name, d.value_vocab_seed, dialog.labels[i]);
                let mentions: Vec<&String> = dialog
                    .turns
                    .iter()
                    .flatten()
                    .filter(|t| t.starts_with(&format!("{}_{}_", slot.name, d.value_vocab_seed)))
                    .collect();
                assert!(!mentions.is_empty());
                assert!(mentions.iter().all(|t| **t == token));
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let d = DomainSpec::weather();
        let a = generate_corpus(&d, 20, 0.2, &CorpusOptions::default(), &mut rng(3)).unwrap();
        let b = generate_corpus(&d, 20, 0.2, &CorpusOptions::default(), &mut rng(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jsonl_round_trip() {
        let domains = DomainSpec::all_builtin();
        let mut all = Vec::new();
        for d in &domains {
            all.extend(generate_corpus(d, 3, 0.2, &CorpusOptions::default(), &mut rng(4)).unwrap());
        }
        let mut buf = Vec::new();
        write_corpus(&mut buf, &all, &domains).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), all.len());
        let back = read_corpus(&buf[..], &domains).unwrap();
        assert_eq!(back, all);
    }

    #[test]
    fn unknown_domain_in_file_is_rejected() {
        let line = r#"{"domain":"spaceship","turns":[["hi"]],"labels":{}}"#;
        assert!(read_corpus(line.as_bytes(), &DomainSpec::all_builtin()).is_err());
    }
}
