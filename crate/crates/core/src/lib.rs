//! Audio-visual video parsing with selective state-space fusion.

pub mod tensor;
pub mod nn;
pub mod ssm;
pub mod data;
pub mod model;
pub mod augment;
pub mod metrics;
pub mod trainer;
pub mod checks;
