use rand::Rng;

use super::act::{ActType, Actor, DialogAct, Slot, UserResponse};
use super::domain::DomainSpec;
use super::kb::kb_lookup;
use super::state::{DialogEnv, EnvState};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedSlot {
    pub value: usize,
    pub confidence: f64,
    pub confirmed: bool,
}

/// The baseline's state tracker. It reads the user's acts directly, so its
/// only uncertainty is the channel noise on requested values.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTracker {
    pub slots: Vec<Option<TrackedSlot>>,
    /// Per system slot: has an answer been given (right or wrong)?
    pub answered: Vec<bool>,
    pub greeted: bool,
    /// Confidence assigned to a value heard in reply to a request.
    pub heard_confidence: f64,
}

impl RuleTracker {
    pub fn new(domain: &DomainSpec, heard_confidence: f64) -> Self {
        Self {
            slots: vec![None; domain.user_slots.len()],
            answered: vec![false; domain.system_slots.len()],
            greeted: false,
            heard_confidence,
        }
    }

    pub fn observe(&mut self, system: &DialogAct, user: &UserResponse) {
        match (system.act_type, system.slot) {
            (ActType::Greet, _) => self.greeted = true,
            (ActType::Request, Some(Slot::User(i))) => {
                if let (ActType::Inform, Some(v)) = (user.act.act_type, user.act.value) {
                    self.slots[i] = Some(TrackedSlot {
                        value: v,
                        confidence: self.heard_confidence,
                        confirmed: false,
                    });
                }
            }
            (ActType::Confirm, Some(Slot::User(i))) => {
                let value = match (user.act.act_type, user.reinform) {
                    (ActType::Affirm, _) => system.value,
                    (ActType::Deny, Some(re)) => re.value,
                    _ => None,
                };
                if let Some(value) = value {
                    self.slots[i] = Some(TrackedSlot {
                        value,
                        confidence: 1.0,
                        confirmed: true,
                    });
                }
            }
            (ActType::Inform, Some(Slot::System(j))) => self.answered[j] = true,
            _ => {}
        }
    }

    /// Tracked value for every user slot, if all are filled.
    pub fn values(&self) -> Option<Vec<usize>> {
        self.slots.iter().map(|s| s.map(|t| t.value)).collect()
    }
}

/// Hand-written request / confirm / inform policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleBasedPolicy {
    /// Filled slots whose confidence is below this are confirmed once.
    pub confirm_threshold: f64,
}

impl RuleBasedPolicy {
    pub fn new(confirm_threshold: f64) -> Self {
        Self { confirm_threshold }
    }

    /// Greet; request every unfilled slot in order; confirm doubtful ones;
    /// answer every requested system slot in order; say goodbye.
    pub fn act(&self, tracker: &RuleTracker, requested: &[usize], domain: &DomainSpec) -> DialogAct {
        let sys = Actor::System;
        if !tracker.greeted {
            return DialogAct::greet(sys);
        }
        if let Some(i) = tracker.slots.iter().position(Option::is_none) {
            return DialogAct::request(sys, Slot::User(i));
        }
        for (i, slot) in tracker.slots.iter().enumerate() {
            let t = slot.expect("all slots filled");
            if t.confidence < self.confirm_threshold && !t.confirmed {
                return DialogAct::confirm(sys, Slot::User(i), t.value);
            }
        }
        let values = tracker.values().expect("all slots filled");
        let answers = kb_lookup(domain, &values).expect("tracked values are in range");
        if let Some(&j) = requested.iter().find(|&&j| !tracker.answered[j]) {
            return DialogAct::inform(sys, Slot::System(j), answers[j]);
        }
        DialogAct::goodbye(sys)
    }
}

/// Runs the baseline against `env` from a fresh goal until the dialog ends.
/// The greeting is a charged turn here.
pub fn run_rule_based_episode<R: Rng + ?Sized>(
    env: &DialogEnv,
    policy: &RuleBasedPolicy,
    rng: &mut R,
) -> Result<EnvState> {
    let mut state = env.reset(rng);
    let mut tracker = RuleTracker::new(env.domain(), 1.0 - env.noise_p());
    while !state.done {
        let act = policy.act(&tracker, &state.goal.requested_system_slots, env.domain());
        let outcome = env.step(&mut state, &act, rng)?;
        tracker.observe(&act, &outcome.user);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RewardConfig;
    use rand::SeedableRng;

    #[test]
    fn noiseless_rest_trace_is_minimal() {
        let env = DialogEnv::new(DomainSpec::rest(), RewardConfig::default(), 0.0);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let s = run_rule_based_episode(&env, &RuleBasedPolicy::new(0.5), &mut r).unwrap();
            assert!(s.success);
            assert_eq!(s.turn_index, 1 + 2 + s.goal.requested_system_slots.len());
        }
    }

    #[test]
    fn zero_threshold_never_confirms() {
        let env = DialogEnv::new(DomainSpec::bus(), RewardConfig::default(), 0.5);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s = run_rule_based_episode(&env, &RuleBasedPolicy::new(0.0), &mut r).unwrap();
            assert!(s.history.iter().all(|e| e.system.act_type != ActType::Confirm));
        }
    }

    #[test]
    fn full_confirmation_always_succeeds() {
        let env = DialogEnv::new(DomainSpec::movie(), RewardConfig::default(), 0.3);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let s = run_rule_based_episode(&env, &RuleBasedPolicy::new(1.0), &mut r).unwrap();
            assert!(s.success);
        }
    }

    #[test]
    fn policy_is_deterministic_given_inputs() {
        let d = DomainSpec::weather();
        let mut t = RuleTracker::new(&d, 0.8);
        t.greeted = true;
        t.slots[0] = Some(TrackedSlot { value: 2, confidence: 0.8, confirmed: false });
        let p = RuleBasedPolicy::new(0.9);
        assert_eq!(p.act(&t, &[1], &d), p.act(&t, &[1], &d));
        assert_eq!(p.act(&t, &[1], &d), DialogAct::request(Actor::System, Slot::User(1)));
    }
}
