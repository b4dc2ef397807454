use rand::Rng;

use super::act::{ActType, Actor, DialogAct, Slot, UserResponse};
use super::domain::DomainSpec;
use super::state::EnvState;
use crate::{Error, Result};

/// The user's private goal for one dialog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserGoal {
    /// Value index for every user slot, in declaration order.
    pub user_slot_values: Vec<usize>,
    /// Indices of the system slots the user wants answered (sorted, non-empty).
    pub requested_system_slots: Vec<usize>,
}

impl UserGoal {
    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        if self.user_slot_values.len() != domain.user_slots.len() {
            return Err(Error::dim("goal values", domain.user_slots.len(), self.user_slot_values.len()));
        }
        for (v, s) in self.user_slot_values.iter().zip(&domain.user_slots) {
            if *v >= s.cardinality {
                return Err(Error::Config(format!("goal value {v} out of range for `{}`", s.name)));
            }
        }
        if self.requested_system_slots.is_empty()
            || self.requested_system_slots.iter().any(|&j| j >= domain.system_slots.len())
        {
            return Err(Error::Config("goal must request at least one valid system slot".into()));
        }
        Ok(())
    }
}

/// Uniform values per user slot and a uniformly drawn non-empty subset of
/// system slots.
pub fn sample_goal<R: Rng + ?Sized>(domain: &DomainSpec, rng: &mut R) -> UserGoal {
    let user_slot_values = domain.user_slots.iter().map(|s| rng.gen_range(0..s.cardinality)).collect();
    let m = domain.system_slots.len();
    let mask: u64 = rng.gen_range(1..(1u64 << m));
    let requested_system_slots = (0..m).filter(|j| mask >> j & 1 == 1).collect();
    UserGoal {
        user_slot_values,
        requested_system_slots,
    }
}

/// The simulated user's reply to a system act.
///
/// Requested values pass through a noisy channel: with probability
/// `noise_p` the delivered value is replaced by a uniformly drawn different
/// value. Confirmations are answered truthfully; a rejected confirmation is
/// followed by the correct value. An answer is accepted only when it matches
/// the knowledge base for the true goal and every user slot has already
/// been conveyed to the system.
pub fn user_respond<R: Rng + ?Sized>(
    domain: &DomainSpec,
    state: &EnvState,
    system_act: &DialogAct,
    noise_p: f64,
    rng: &mut R,
) -> Result<UserResponse> {
    if state.done {
        return Err(Error::Contract("user asked to respond after the dialog ended".into()));
    }
    if system_act.actor != Actor::System {
        return Err(Error::MalformedAct("user can only respond to system acts".into()));
    }
    system_act.validate(domain)?;
    let goal = &state.goal;
    let user = Actor::User;
    let response = match (system_act.act_type, system_act.slot) {
        (ActType::Greet, _) => UserResponse::single(DialogAct::greet(user)),
        (ActType::Goodbye, _) => UserResponse::single(DialogAct::goodbye(user)),
        (ActType::Request, Some(Slot::User(i))) => {
            let truth = goal.user_slot_values[i];
            let card = domain.user_slots[i].cardinality;
            let corrupted = rng.gen::<f64>() < noise_p;
            let value = if corrupted {
                (truth + rng.gen_range(1..card)) % card
            } else {
                truth
            };
            UserResponse::single(DialogAct::inform(user, Slot::User(i), value))
        }
        (ActType::Confirm, Some(Slot::User(i))) => {
            let truth = goal.user_slot_values[i];
            if system_act.value == Some(truth) {
                UserResponse::single(DialogAct::affirm(user))
            } else {
                UserResponse {
                    act: DialogAct::deny(user),
                    reinform: Some(DialogAct::inform(user, Slot::User(i), truth)),
                }
            }
        }
        (ActType::Inform, Some(Slot::System(j))) => {
            let correct = system_act.value == Some(state.kb_truth()[j]);
            if correct && state.conveyed.iter().all(|&c| c) {
                UserResponse::single(DialogAct::affirm(user))
            } else {
                UserResponse::single(DialogAct::deny(user))
            }
        }
        _ => {
            return Err(Error::MalformedAct(format!(
                "system cannot issue {}",
                system_act.describe(domain)
            )))
        }
    };
    Ok(response)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{DialogEnv, RewardConfig};
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn weather_goal_ranges() {
        let d = DomainSpec::weather();
        let mut r = rng(1);
        for _ in 0..200 {
            let g = sample_goal(&d, &mut r);
            g.validate(&d).unwrap();
            assert_eq!(g.user_slot_values.len(), 2);
            assert!(g.user_slot_values[0] < 11 && g.user_slot_values[1] < 7);
        }
    }

    #[test]
    fn goal_sampling_is_seeded() {
        let d = DomainSpec::bus();
        assert_eq!(sample_goal(&d, &mut rng(5)), sample_goal(&d, &mut rng(5)));
    }

    #[test]
    fn goal_values_are_uniform() {
        let d = DomainSpec::weather();
        let mut r = rng(2);
        let n = 10_000;
        let mut counts = [0usize; 11];
        for _ in 0..n {
            counts[sample_goal(&d, &mut r).user_slot_values[0]] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 11.0).abs() <= 0.01, "{f}");
        }
    }

    #[test]
    fn requested_subsets_cover_all_nonempty_masks() {
        let d = DomainSpec::rest();
        let mut r = rng(3);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..500 {
            seen.insert(sample_goal(&d, &mut r).requested_system_slots);
        }
        assert_eq!(seen.len(), 7);
    }

    fn fresh_state(domain: &DomainSpec) -> (DialogEnv, EnvState) {
        let env = DialogEnv::new(domain.clone(), RewardConfig::default(), 0.0);
        let goal = UserGoal {
            user_slot_values: vec![4, 9],
            requested_system_slots: vec![0],
        };
        let state = env.start(goal).unwrap();
        (env, state)
    }

    #[test]
    fn noiseless_request_delivers_goal_value() {
        let d = DomainSpec::rest();
        let (_, s) = fresh_state(&d);
        let act = DialogAct::request(Actor::System, Slot::User(1));
        let resp = user_respond(&d, &s, &act, 0.0, &mut rng(0)).unwrap();
        assert_eq!(resp.act, DialogAct::inform(Actor::User, Slot::User(1), 9));
    }

    #[test]
    fn forced_corruption_changes_value() {
        let d = DomainSpec::rest();
        let (_, s) = fresh_state(&d);
        let act = DialogAct::request(Actor::System, Slot::User(1));
        let mut r = rng(9);
        for _ in 0..100 {
            let resp = user_respond(&d, &s, &act, 1.0, &mut r).unwrap();
            assert_ne!(resp.act.value, Some(9));
            assert_eq!(resp.act.slot, Some(Slot::User(1)));
        }
    }

    #[test]
    fn corruption_frequency_matches_noise() {
        let d = DomainSpec::rest();
        let (_, s) = fresh_state(&d);
        let act = DialogAct::request(Actor::System, Slot::User(0));
        let mut r = rng(10);
        let n = 10_000;
        let wrong = (0..n)
            .filter(|_| user_respond(&d, &s, &act, 0.15, &mut r).unwrap().act.value != Some(4))
            .count();
        assert!((wrong as f64 / n as f64 - 0.15).abs() <= 0.01);
    }

    #[test]
    fn confirmations_are_truthful() {
        let d = DomainSpec::rest();
        let (_, s) = fresh_state(&d);
        let mut r = rng(0);
        let yes = user_respond(&d, &s, &DialogAct::confirm(Actor::System, Slot::User(0), 4), 1.0, &mut r).unwrap();
        assert_eq!(yes.act.act_type, ActType::Affirm);
        let no = user_respond(&d, &s, &DialogAct::confirm(Actor::System, Slot::User(0), 5), 1.0, &mut r).unwrap();
        assert_eq!(no.act.act_type, ActType::Deny);
        assert_eq!(no.reinform, Some(DialogAct::inform(Actor::User, Slot::User(0), 4)));
    }

    #[test]
    fn malformed_system_acts_are_rejected() {
        let d = DomainSpec::rest();
        let (_, s) = fresh_state(&d);
        let mut r = rng(0);
        assert!(user_respond(&d, &s, &DialogAct::affirm(Actor::System), 0.0, &mut r).is_err());
        assert!(user_respond(&d, &s, &DialogAct::request(Actor::System, Slot::System(0)), 0.0, &mut r).is_err());
        assert!(user_respond(&d, &s, &DialogAct::inform(Actor::System, Slot::User(0), 1), 0.0, &mut r).is_err());
        assert!(user_respond(&d, &s, &DialogAct::request(Actor::User, Slot::User(0)), 0.0, &mut r).is_err());
    }
}
