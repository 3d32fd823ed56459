//! Hybrid analog/digital precoding for wideband multi-user MIMO.
//!
//! The crate covers the channel simulator, the log-det sum-rate objective and its
//! gradients, classical iterative optimizers (projected gradient ascent and
//! alternating minimization) and deep unfolding of their step sizes.

pub mod channel;
pub mod error;
pub mod linalg;
pub mod objective;
pub mod optimizers;
pub mod precoder;
pub mod seed;
pub mod unfolding;

pub use channel::{
    corrupt_csi, generate_channel, generate_dataset, load_dataset, save_dataset, ChannelDataset, ChannelModelParams,
    ChannelRealization,
};
pub use error::{Error, Result};
pub use linalg::CMat;
pub use objective::{
    fully_digital_reference, hybrid_rate, per_user_report, rate_and_gradient, rate_gradient, sum_rate, waterfill,
    FullyDigitalPrecoder, RateGradient, RateReport,
};
pub use optimizers::{
    digital_ls, init_precoders, pga, run_method, InitStrategy, Method, MethodOutput, MethodParams, OptimizerConfig,
    RateTrace, RunOutput, StepSchedule,
};
pub use precoder::{
    connectivity_mask, project_analog, project_power, AnalogPrecoder, ConstraintKind, ConstraintSet, DigitalPrecoder,
    HybridPrecoder, Mask, SystemDims, Topology,
};
pub use unfolding::{
    load_schedule, save_schedule, train_altmin_schedule, train_pga_schedule, train_robust_schedule, unfold_loss,
    GradMode, ScheduleKind, TrainConfig, TrainedSchedule,
};
