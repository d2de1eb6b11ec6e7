//! Forward model and inverse analysis for high-gain parametric down-conversion
//! from a two-crystal SU(1,1) source.
//!
//! The pipeline has two halves:
//!
//! - forward: build the two-photon amplitude of the two-crystal scheme,
//!   decompose it into Schmidt modes per azimuthal index, redistribute the
//!   mode weights with parametric gain, and synthesize single-shot far-field
//!   intensity frames with twin-beam statistics;
//! - inverse: estimate intensity covariances from frame stacks, recover the
//!   radial mode shapes and weights by SVD of the auto-correlation block,
//!   and extract OAM mode weights by fitting the azimuthal covariance.
//!
//! Scan drivers reproduce mode-count trends versus pump power and crystal
//! distance, and calibrate the Kerr phase and the parametric gain.

pub mod cli;
pub mod config;
pub mod fit;
pub mod forward;
pub mod grid;
pub mod io;
pub mod reconstruct;
pub mod scans;
pub mod schmidt;
pub mod synthesis;
pub mod tpa;

pub use config::SourceConfig;
pub use grid::PolarGrid;
pub use reconstruct::{CovarianceMatrix, OamSpectrum, RadialModes};
pub use schmidt::{GainedSpectrum, SchmidtDecomposition};
pub use synthesis::{DetectionMode, Frame, FrameStack};
