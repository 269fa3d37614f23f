//! Networks: event restoration, event/image fusion, event-guided enhancement.

mod config;
mod egdb;
mod eift;
pub mod layers;
mod model;
mod restore;

pub use config::ModelConfig;
pub use egdb::{Egdb, TransformerLayer};
pub use eift::{EiftBlock, EiftModule};
pub use model::{EnhanceNet, Model};
pub use restore::{compose_restored, gate, RestorationNet, RestorationOutput, RestorationVars, GATE_THRESHOLD};
