//! EV-aggregator vehicle-to-grid simulation and PPO scheduling.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregator;
pub mod env;
pub mod error;
pub mod eval;
pub mod fleet;
pub mod grid;
pub mod ppo;
pub mod presets;
pub mod seed;

pub use aggregator::{AllocationResult, EvaState, PowerEnvelope};
pub use env::{EpisodeSpec, Mode, Normalization, RewardWeights, TraceRow, V2gEnv};
pub use error::{Error, Result};
pub use eval::{Comparison, EvaluationReport, Policy};
pub use fleet::{AvailabilityMask, EvRecord, FleetConfig, SocBand, TruncatedNormal};
pub use grid::{GridScenario, TariffSchedule};
pub use ppo::{Checkpoint, PpoConfig, TrainStatus, TrainingReport};
