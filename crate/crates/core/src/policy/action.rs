use rand::Rng;

use crate::dst::BeliefState;
use crate::env::{kb_lookup, Actor, DialogAct, DomainSpec, Slot};
use crate::{Error, Result};

/// One entry of a domain's action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyAction {
    Request(usize),
    Confirm(usize),
    Inform(usize),
}

/// Requests for every user slot, then confirms for every user slot, then
/// informs for every system slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    actions: Vec<PolicyAction>,
}

impl ActionSpace {
    pub fn new(domain: &DomainSpec) -> Self {
        let u = domain.user_slots.len();
        let mut actions: Vec<PolicyAction> = (0..u).map(PolicyAction::Request).collect();
        actions.extend((0..u).map(PolicyAction::Confirm));
        actions.extend((0..domain.system_slots.len()).map(PolicyAction::Inform));
        Self { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<PolicyAction> {
        self.actions.get(index).copied()
    }

    pub fn actions(&self) -> &[PolicyAction] {
        &self.actions
    }
}

/// Draws an index from `probs` by inverse-CDF sampling.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the cumulative sum a hair below 1.
    last_positive
}

pub fn log_prob(probs: &[f64], action: usize) -> Result<f64> {
    match probs.get(action) {
        None => Err(Error::dim("log_prob action", probs.len(), action)),
        Some(&p) if p > 0.0 => Ok(p.ln()),
        Some(_) => Err(Error::Numeric(format!("log-probability of zero-probability action {action}"))),
    }
}

/// Turns a policy action into a dialog act using the tracker's beliefs.
///
/// Confirms carry the believed value; informs answer with the knowledge
/// base evaluated at the believed goal.
pub fn ground_action(action: usize, beliefs: &BeliefState, domain: &DomainSpec) -> Result<DialogAct> {
    let space = ActionSpace::new(domain);
    let chosen = space
        .get(action)
        .ok_or_else(|| Error::dim("action index", space.len(), action))?;
    if beliefs.slots.len() != domain.user_slots.len() {
        return Err(Error::dim("belief slots", domain.user_slots.len(), beliefs.slots.len()));
    }
    Ok(match chosen {
        PolicyAction::Request(u) => DialogAct::request(Actor::System, Slot::User(u)),
        PolicyAction::Confirm(u) => DialogAct::confirm(Actor::System, Slot::User(u), beliefs.slots[u].value),
        PolicyAction::Inform(s) => {
            let answers = kb_lookup(domain, &beliefs.values())?;
            DialogAct::inform(Actor::System, Slot::System(s), answers[s])
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dst::SlotBelief;
    use crate::env::ActType;
    use crate::nn::entropy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn beliefs(values: &[usize]) -> BeliefState {
        BeliefState {
            slots: values.iter().map(|&value| SlotBelief { value, confidence: 0.9 }).collect(),
        }
    }

    #[test]
    fn action_space_sizes() {
        let sizes: Vec<usize> = DomainSpec::all_builtin().iter().map(|d| ActionSpace::new(d).len()).collect();
        assert_eq!(sizes, vec![8, 9, 7, 7, 7, 6]);
        let a = ActionSpace::new(&DomainSpec::weather());
        assert_eq!(a.get(0), Some(PolicyAction::Request(0)));
        assert_eq!(a.get(2), Some(PolicyAction::Confirm(0)));
        assert_eq!(a.get(5), Some(PolicyAction::Inform(1)));
        assert_eq!(a.get(6), None);
    }

    #[test]
    fn sampling_frequency_and_logs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probs = [0.7, 0.3];
        let n = 10_000;
        let zeros = (0..n).filter(|_| sample_action(&probs, &mut rng) == 0).count();
        assert!((zeros as f64 / n as f64 - 0.7).abs() <= 0.02);
        assert!((entropy(&[1.0 / 6.0; 6]) - 6f64.ln()).abs() < 1e-12);
        assert!((6f64.ln() - 1.7918).abs() < 1e-4);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((log_prob(&probs, 1).unwrap() - 0.3f64.ln()).abs() < 1e-15);
        assert!(log_prob(&[1.0, 0.0], 1).is_err());
        assert!(log_prob(&[1.0, 0.0], 2).is_err());
        for _ in 0..100 {
            assert_eq!(sample_action(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }

    #[test]
    fn grounding_uses_beliefs_and_the_knowledge_base() {
        let rest = DomainSpec::rest();
        let b = beliefs(&[4, 3]);
        // rest: request loc, request food, confirm loc, confirm food, inform x3
        let act = ground_action(3, &b, &rest).unwrap();
        assert_eq!(act, DialogAct::confirm(Actor::System, Slot::User(1), 3));
        assert_eq!(ground_action(0, &b, &rest).unwrap().act_type, ActType::Request);
        let truth = kb_lookup(&rest, &[4, 3]).unwrap();
        for s in 0..3 {
            let act = ground_action(4 + s, &b, &rest).unwrap();
            assert_eq!(act, DialogAct::inform(Actor::System, Slot::System(s), truth[s]));
        }
        assert!(ground_action(7, &b, &rest).is_err());
        assert_eq!(ground_action(5, &b, &rest).unwrap(), ground_action(5, &b, &rest).unwrap());
    }

    #[test]
    fn one_wrong_belief_usually_gives_a_wrong_answer() {
        let rest = DomainSpec::rest();
        let mut wrong = 0;
        let mut total = 0;
        for loc in 0..11 {
            for food in 0..13 {
                let truth = kb_lookup(&rest, &[loc, food]).unwrap();
                let other = (food + 1) % 13;
                let act = ground_action(4, &beliefs(&[loc, other]), &rest).unwrap();
                total += 1;
                if act.value != Some(truth[0]) {
                    wrong += 1;
                }
            }
        }
        assert!(wrong as f64 / total as f64 >= 0.9);
    }
}
