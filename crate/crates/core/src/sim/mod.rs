//! Cellular downlink simulator producing ground truth and control-channel LLRs.

pub mod channel;
pub mod config;
pub mod placement;
pub mod scheduler;
pub mod simulator;

pub use channel::{channel_apply, noise_variance, LlrSubframe};
pub use config::{Bandwidth, CellConfig, CellRole, McsProcess, TrafficModel, UeProfile};
pub use placement::{build_occupancy, place_messages, Occupancy, Placement, PlacementRequest};
pub use scheduler::{tb_failure_probability, SchedulerStats, SubframeTruth};
pub use simulator::{schedule_generator, SimConfig, Simulator};
