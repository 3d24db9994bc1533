//! Losses, schedules and the progressive topology-commitment training loop.

mod config;
mod gradcheck;
mod loss;
mod model;
mod observation;
mod pipeline;
mod schedule;

pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport, GRADCHECK_TOL};
pub use config::{InitGuess, Strategy, TrainConfig};
pub use loss::{
    chamfer_loss, frame_losses, frame_losses_at, frames_to_tensor, rollout_loss, stable_mean, stable_sum,
    frame_tracking, tensor_to_frames, total_loss, track_nodes, tracking_loss, LossOp,
};
pub use model::{train, EpochLog, ReduceStrategy, TrainedModel};
pub use observation::Observation;
pub use pipeline::{
    coarsen, init_store, is_phys, level_script, run_pass, Context, LevelAssign, LevelOut, PassOut, Plan, RolloutOp,
    CONTACT_RAW, LOG_DP, LOG_DR, LOG_S,
};
pub use schedule::{anneal_temperature, closes_window, learning_rate, phys_learning_rate, supervised_level, window_start};
