pub mod ablation;
pub mod bundle;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fourier;
pub mod hypernet;
pub mod meta;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tokenize;
pub mod train;
pub mod viz;
