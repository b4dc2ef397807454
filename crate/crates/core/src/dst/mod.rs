//! Multi-domain dialog state tracking.
//!
//! Word embeddings feed a bidirectional utterance encoder whose final states
//! drive one step of a dialog-level LSTM per turn. The dialog hidden state
//! is both the input to the slot classifiers and the observation handed to
//! the policy.

mod corpus;
mod model;
mod train;
mod vocab;

pub use corpus::{generate_corpus, read_corpus, write_corpus, CorpusOptions, LabeledDialog};
pub use model::{
    BeliefState, CachedEncoder, DialogHidden, DstConfig, DstModel, EncodedDialog, Observation, SlotBelief,
};
pub use train::{joint_accuracy, mtl_loss, train_dst, DstObjective, DstTrainingReport};
pub use vocab::{Vocabulary, EMPTY_TOKEN, UNKNOWN_TOKEN};
