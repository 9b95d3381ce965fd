//! Trajectory output for the 1-D variational optimization demonstrator.

use std::path::Path;

use hetmogp_core::optimizers::{descent_baseline, vo_demo, DemoPoint, PaperObjective, VoDemoConfig};

use crate::error::CliResult;

/// Which trajectory to produce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DemoMode {
    Vo(VoDemoConfig),
    /// Plain gradient descent from `init` with a fixed step.
    Descent { init: f64, step: f64, iters: usize },
}

pub fn trajectory(mode: DemoMode) -> CliResult<Vec<DemoPoint>> {
    Ok(match mode {
        DemoMode::Vo(cfg) => vo_demo(&PaperObjective, &cfg)?,
        DemoMode::Descent { init, step, iters } => descent_baseline(&PaperObjective, init, step, iters),
    })
}

/// Writes `iter, mu, sigma, g_mu` rows.
pub fn write_trajectory(path: &Path, points: &[DemoPoint]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
