//! Slot-filling dialog environment.

mod act;
mod domain;
mod kb;
mod nlg;
mod rule;
mod state;
mod user;

pub use act::{ActType, Actor, DialogAct, Slot, UserResponse};
pub use domain::{DomainSpec, NlgStyle, UserSlot, ANSWER_CARDINALITY, BUILTIN_DOMAINS};
pub use kb::kb_lookup;
pub(crate) use nlg::value_token;
pub use nlg::{render_user_response, render_utterance, MAX_TEMPLATE_TOKENS};
pub use rule::{run_rule_based_episode, RuleBasedPolicy, RuleTracker, TrackedSlot};
pub use state::{DialogEnv, EnvState, EpisodeTrace, RewardConfig, StepOutcome, TraceLine};
pub use user::{sample_goal, user_respond, UserGoal};
