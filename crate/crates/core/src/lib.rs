//! Multi-domain task-oriented dialog policy learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: a small 64-bit neural substrate (dense layers, LSTM cells,
//!   embeddings) with hand-written reverse-mode gradients and Fisher-vector
//!   products.
//! * [`env`]: slot-filling domains, the simulated user, reward and the
//!   rule-based baseline policy.
//! * [`dst`]: the multi-domain dialog state tracker whose dialog-level
//!   hidden state is the observation used by every policy.
//! * [`policy`]: the multi-domain policy network: a shared action-embedding
//!   layer followed by one categorical head per domain.
//! * [`trpo`]: trust-region training in single-domain, multi-task and
//!   transfer modes.
//! * [`harness`]: experiment driver, metrics and reports.

pub mod dst;
pub mod env;
mod error;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod trpo;

pub use error::{Error, Result};

pub use dst::{BeliefState, DstConfig, DstModel, LabeledDialog, Observation};
pub use env::{ActType, Actor, DialogAct, DialogEnv, DomainSpec, EnvState, RewardConfig, Slot, UserGoal};
pub use nn::ParamVector;


pub use policy::{ActionSpace, MultiDomainPolicy, ValueBaselines};
pub use trpo::{TrainRun, Trajectory, TrpoConfig};
