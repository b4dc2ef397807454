//! Multi-domain dialog policy.
//!
//! A shared action-embedding layer maps tracker observations into a
//! representation common to all domains; a per-domain softmax head picks
//! one of that domain's request, confirm or inform actions, which is then
//! grounded into a dialog act through the tracker's beliefs.

mod action;
mod network;
mod value;

pub use action::{ground_action, log_prob, sample_action, ActionSpace, PolicyAction};
pub use network::{MultiDomainPolicy, PolicyConfig, PolicyState};
pub use value::ValueBaselines;

pub use crate::nn::{entropy, kl_divergence};
