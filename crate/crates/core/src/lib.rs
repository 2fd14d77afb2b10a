pub mod error;
pub mod kspace;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
