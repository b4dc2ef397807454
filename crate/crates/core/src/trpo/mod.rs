//! Trust-region policy optimisation for single-domain, multi-task and
//! transfer training.

mod config;
mod gae;
mod rollout;
mod step;
mod train;

pub use config::{TrpoConfig, DIALOGS_PER_ITERATION_GRID, MAX_KL_GRID};
pub use gae::{compute_advantages, Advantages};
pub use rollout::{collect_rollouts, evaluate_policy, run_episode, Task, Trajectory};
pub use step::{
    aggregate_gradients, conjugate_gradient, surrogate, surrogate_and_gradient, trpo_step, CgResult, Sample,
    StepInfo, TaskBatch,
};
pub use train::{
    read_records, run_id, train_mtl, train_single, train_tl, write_records, Checkpoint, IterationRecord, Mode,
    Schedule, TrainOutcome, TrainRun, TrainSetup, TransferOutcome,
};
