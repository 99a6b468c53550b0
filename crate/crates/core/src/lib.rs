pub mod error;
pub mod fixed;
pub mod lane;
pub mod sample;
pub mod tonegen;
pub mod excitation;
pub mod filters;
pub mod analysis;
pub mod spectral;
pub mod periodicity;
pub mod config;
pub mod pipeline;
pub mod export;
