pub mod ablation;
pub mod camera;
pub mod cli;
pub mod error;
pub mod field;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod mpi;
pub mod noise;
pub mod pipeline;
pub mod synth;
pub mod train;
