use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::act::{ActType, Actor, DialogAct, Slot, UserResponse};
use super::domain::DomainSpec;
use super::kb::kb_lookup;
use super::user::{sample_goal, user_respond, UserGoal};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub step_reward: f64,
    pub success_bonus: f64,
    pub max_turns: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            step_reward: -1.0,
            success_bonus: 30.0,
            max_turns: 15,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 {
            return Err(Error::Config("max_turns must be at least 1".into()));
        }
        Ok(())
    }
}

/// One recorded exchange. `charged` is false for the opening greeting that
/// precedes learned episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub system: DialogAct,
    pub user: UserResponse,
    pub reward: f64,
    pub charged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub domain: String,
    pub goal: UserGoal,
    /// Number of charged turns taken so far.
    pub turn_index: usize,
    pub history: Vec<Exchange>,
    /// Per system slot: has the system given the correct, accepted answer?
    pub informed_correct: Vec<bool>,
    /// Per user slot: has the user communicated this slot (by answering a
    /// request or a confirmation)?
    pub conveyed: Vec<bool>,
    pub done: bool,
    pub success: bool,
    pub total_return: f64,
    kb_truth: Vec<usize>,
}

impl EnvState {
    /// Knowledge-base answers for the true goal.
    pub fn kb_truth(&self) -> &[usize] {
        &self.kb_truth
    }

    pub fn trace(&self, domain: &DomainSpec) -> EpisodeTrace {
        let mut cumulative = 0.0;
        let lines = self
            .history
            .iter()
            .filter(|e| e.charged)
            .enumerate()
            .map(|(turn, e)| {
                cumulative += e.reward;
                TraceLine {
                    turn,
                    system: e.system.describe(domain),
                    user: e.user.describe(domain),
                    reward: e.reward,
                    cumulative,
                }
            })
            .collect();
        EpisodeTrace { lines }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub user: UserResponse,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// A slot-filling MDP for one domain.
#[derive(Debug, Clone)]
pub struct DialogEnv {
    domain: Arc<DomainSpec>,
    reward: RewardConfig,
    noise_p: f64,
}

impl DialogEnv {
    pub fn new(domain: DomainSpec, reward: RewardConfig, noise_p: f64) -> Self {
        Self::shared(Arc::new(domain), reward, noise_p)
    }

    pub fn shared(domain: Arc<DomainSpec>, reward: RewardConfig, noise_p: f64) -> Self {
        Self {
            domain,
            reward,
            noise_p: noise_p.clamp(0.0, 1.0),
        }
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn noise_p(&self) -> f64 {
        self.noise_p
    }

    /// New episode with a freshly sampled goal.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let goal = sample_goal(&self.domain, rng);
        self.start(goal).expect("sampled goals are valid")
    }

    pub fn start(&self, goal: UserGoal) -> Result<EnvState> {
        goal.validate(&self.domain)?;
        let kb_truth = kb_lookup(&self.domain, &goal.user_slot_values)?;
        Ok(EnvState {
            domain: self.domain.name.clone(),
            goal,
            turn_index: 0,
            history: Vec::new(),
            informed_correct: vec![false; self.domain.system_slots.len()],
            conveyed: vec![false; self.domain.user_slots.len()],
            done: false,
            success: false,
            total_return: 0.0,
            kb_truth,
        })
    }

    /// Records the opening greet/greet exchange without charging a turn.
    /// Learned policies start acting after it.
    pub fn greeting_exchange(&self, state: &mut EnvState) -> Result<UserResponse> {
        if !state.history.is_empty() {
            return Err(Error::Contract("greeting must open the dialog".into()));
        }
        let user = UserResponse::single(DialogAct::greet(Actor::User));
        state.history.push(Exchange {
            system: DialogAct::greet(Actor::System),
            user,
            reward: 0.0,
            charged: false,
        });
        Ok(user)
    }

    /// One charged turn: the system acts, the user responds.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut EnvState, act: &DialogAct, rng: &mut R) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::Contract("step called on a finished dialog".into()));
        }
        let user = user_respond(&self.domain, state, act, self.noise_p, rng)?;
        state.turn_index += 1;
        let mut reward = self.reward.step_reward;
        match (act.act_type, act.slot) {
            (ActType::Request, Some(Slot::User(i))) | (ActType::Confirm, Some(Slot::User(i))) => {
                state.conveyed[i] = true;
            }
            (ActType::Inform, Some(Slot::System(j))) if user.act.act_type == ActType::Affirm => {
                state.informed_correct[j] = true;
            }
            (ActType::Goodbye, _) => state.done = true,
            _ => {}
        }
        if !state.success
            && state
                .goal
                .requested_system_slots
                .iter()
                .all(|&j| state.informed_correct[j])
        {
            state.success = true;
            state.done = true;
            reward += self.reward.success_bonus;
        }
        if state.turn_index >= self.reward.max_turns {
            state.done = true;
        }
        state.total_return += reward;
        state.history.push(Exchange {
            system: *act,
            user,
            reward,
            charged: true,
        });
        Ok(StepOutcome {
            user,
            reward,
            done: state.done,
            success: state.success,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceLine {
    pub turn: usize,
    pub system: String,
    pub user: String,
    pub reward: f64,
    pub cumulative: f64,
}

/// Per-turn log of one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub lines: Vec<TraceLine>,
}

impl EpisodeTrace {
    /// Tab-separated: turn, system act, user act, reward, cumulative return.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", l.turn, l.system, l.user, l.reward, l.cumulative);
        }
        out
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_tsv().as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(0)
    }

    fn sys_request(i: usize) -> DialogAct {
        DialogAct::request(Actor::System, Slot::User(i))
    }

    #[test]
    fn minimal_weather_dialog_returns_26() {
        let env = DialogEnv::new(DomainSpec::weather(), RewardConfig::default(), 0.0);
        let mut s = env
            .start(UserGoal {
                user_slot_values: vec![3, 5],
                requested_system_slots: vec![0, 1],
            })
            .unwrap();
        let truth = s.kb_truth().to_vec();
        let mut r = rng();
        env.step(&mut s, &sys_request(0), &mut r).unwrap();
        env.step(&mut s, &sys_request(1), &mut r).unwrap();
        let o = env.step(&mut s, &DialogAct::inform(Actor::System, Slot::System(0), truth[0]), &mut r).unwrap();
        assert!(!o.done);
        let o = env.step(&mut s, &DialogAct::inform(Actor::System, Slot::System(1), truth[1]), &mut r).unwrap();
        assert!(o.done && o.success);
        assert_eq!(s.total_return, 26.0);
    }

    #[test]
    fn greeting_loop_hits_turn_cap() {
        let env = DialogEnv::new(DomainSpec::weather(), RewardConfig::default(), 0.0);
        let mut r = rng();
        let mut s = env.reset(&mut r);
        let mut turns = 0;
        while !s.done {
            env.step(&mut s, &DialogAct::greet(Actor::System), &mut r).unwrap();
            turns += 1;
        }
        assert_eq!(turns, 15);
        assert_eq!(s.total_return, -15.0);
        assert!(!s.success);
        let err = env.step(&mut s, &DialogAct::greet(Actor::System), &mut r).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn micro_domain_two_turn_dialog() {
        let env = DialogEnv::new(DomainSpec::micro(), RewardConfig::default(), 0.0);
        let mut s = env
            .start(UserGoal {
                user_slot_values: vec![1],
                requested_system_slots: vec![0],
            })
            .unwrap();
        let mut r = rng();
        let answer = s.kb_truth()[0];
        env.step(&mut s, &sys_request(0), &mut r).unwrap();
        env.step(&mut s, &DialogAct::inform(Actor::System, Slot::System(0), answer), &mut r).unwrap();
        assert!(s.success);
        assert_eq!(s.total_return, 28.0);
    }

    #[test]
    fn answers_before_conveying_are_denied() {
        let env = DialogEnv::new(DomainSpec::micro(), RewardConfig::default(), 0.0);
        let mut s = env
            .start(UserGoal {
                user_slot_values: vec![0],
                requested_system_slots: vec![0],
            })
            .unwrap();
        let answer = s.kb_truth()[0];
        let o = env
            .step(&mut s, &DialogAct::inform(Actor::System, Slot::System(0), answer), &mut rng())
            .unwrap();
        assert_eq!(o.user.act.act_type, ActType::Deny);
        assert!(!o.success);
    }

    #[test]
    fn trace_has_one_line_per_charged_turn() {
        let env = DialogEnv::new(DomainSpec::rest(), RewardConfig::default(), 0.0);
        let mut r = rng();
        let mut s = env.reset(&mut r);
        env.greeting_exchange(&mut s).unwrap();
        env.step(&mut s, &sys_request(0), &mut r).unwrap();
        env.step(&mut s, &sys_request(1), &mut r).unwrap();
        let tsv = s.trace(env.domain()).to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 2);
        let cols: Vec<&str> = lines[1].split('\t').collect();
        assert_eq!(cols.len(), 5);
        assert_eq!(cols[0], "1");
        assert_eq!(cols[1], "request(food)");
        assert_eq!(cols[4], "-2");
    }
}
