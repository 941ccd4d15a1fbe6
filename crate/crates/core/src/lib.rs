pub mod artifact;
pub mod assimilation;
pub mod basis;
pub mod dataset;
pub mod error;
pub mod kernels;
pub mod l96;
pub mod linalg;
pub mod metrics;
pub mod operators;
pub mod pipeline;
