//! Convenience wrapper running the forward chain
//! config -> grid -> radial kernels -> Schmidt decomposition -> gained weights.

use thiserror::Error;

use crate::config::SourceConfig;
use crate::grid::{build_grid, GridError, PolarGrid};
use crate::schmidt::{decompose, redistribute, GainedSpectrum, SchmidtDecomposition, SchmidtError};
use crate::tpa::{radial_kernels, TpaError};

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Tpa(#[from] TpaError),
    #[error(transparent)]
    Schmidt(#[from] SchmidtError),
}

#[derive(Clone, Debug)]
pub struct ForwardModel {
    pub config: SourceConfig,
    pub grid: PolarGrid,
    pub dec: SchmidtDecomposition,
    pub spec: GainedSpectrum,
}

impl ForwardModel {
    pub fn build(config: &SourceConfig) -> Result<Self, ForwardError> {
        let grid = build_grid(config, config.n_theta, config.n_phi)?;
        let ls: Vec<i32> = (0..=config.l_max).collect();
        let kernels = radial_kernels(config, &grid, &ls)?;
        let dec = decompose(&kernels, &grid, config.p_max)?;
        let spec = redistribute(&dec, config.gain);
        Ok(ForwardModel {
            config: config.clone(),
            grid,
            dec,
            spec,
        })
    }
}
