use std::collections::HashMap;

use crate::env::{render_utterance, Actor, DialogAct, DomainSpec, NlgStyle, Slot, ANSWER_CARDINALITY};
use crate::Result;

pub const UNKNOWN_TOKEN: &str = "<unk>";
pub const EMPTY_TOKEN: &str = "<empty>";

/// Token ↔ id map shared by every domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Every token any template of either style can produce for `domains`,
    /// sorted, after the two reserved ids.
    pub fn build(domains: &[DomainSpec]) -> Result<Self> {
        let mut words = Vec::new();
        for d in domains {
            for style in [NlgStyle::Standard, NlgStyle::Alternate] {
                for act in every_act(d) {
                    words.extend(render_utterance(&act, style, d)?);
                }
            }
        }
        words.sort_unstable();
        words.dedup();
        let mut tokens = vec![UNKNOWN_TOKEN.to_string(), EMPTY_TOKEN.to_string()];
        tokens.extend(words);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Ids for `tokens`; an empty sequence maps to the reserved empty token.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        if tokens.is_empty() {
            return vec![1];
        }
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

fn every_act(d: &DomainSpec) -> Vec<DialogAct> {
    let mut acts = Vec::new();
    for actor in [Actor::System, Actor::User] {
        acts.push(DialogAct::greet(actor));
        acts.push(DialogAct::goodbye(actor));
    }
    acts.push(DialogAct::affirm(Actor::User));
    acts.push(DialogAct::deny(Actor::User));
    for (i, s) in d.user_slots.iter().enumerate() {
        acts.push(DialogAct::request(Actor::System, Slot::User(i)));
        for v in 0..s.cardinality {
            acts.push(DialogAct::confirm(Actor::System, Slot::User(i), v));
            acts.push(DialogAct::inform(Actor::User, Slot::User(i), v));
        }
    }
    for j in 0..d.system_slots.len() {
        for v in 0..ANSWER_CARDINALITY {
            acts.push(DialogAct::inform(Actor::System, Slot::System(j), v));
        }
    }
    acts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_lookup() {
        let v = Vocabulary::build(&DomainSpec::all_builtin()).unwrap();
        assert_eq!(v.id(UNKNOWN_TOKEN), 0);
        assert_eq!(v.id(EMPTY_TOKEN), 1);
        assert_eq!(v.id("definitely-not-a-token"), 0);
        assert!(v.contains("food_3_12"));
        assert!(v.contains("food_4_12"));
        assert!(v.contains("kindly"));
        assert_eq!(v.encode::<&str>(&[]), vec![1]);
        assert_eq!(v.token(v.id("which")), "which");
    }
}
