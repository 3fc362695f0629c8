//! Learning algorithms: PPO from environment interaction and behaviour
//! cloning from expert data.

pub mod imitation;
pub mod ppo;
pub mod returns;

pub use imitation::{
    agreement, collect_expert, imitation_update, ExpertRecord, ExpertSample, ImitationConfig, PreparedDataset,
};
pub use ppo::{
    minibatch_loss, ppo_update, train, Collector, LossParts, MetricsRecord, PpoConfig, RolloutBuffer, Sample,
    StepRecord, TrainEvent, UpdateStats,
};
pub use returns::{compute_gae, percentile, scale_advantages, symexp, symlog, EmaRangeScaler, GaeStep};
