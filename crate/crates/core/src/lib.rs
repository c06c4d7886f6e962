pub mod channel;
pub mod codec;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nsm;
pub mod orchestrator;
pub mod rng;
pub mod tensor;

pub use error::{Result, SimError};
