//! Experiment harness: accuracy sweeps over the SNR grid, result tables,
//! and curve plots.

mod plot;
mod sweep;
mod table;

pub use plot::{plot_curves, PlotSelector};
pub use sweep::{compute_attack_success, run_snr_sweep, AttackTag, ResultRow, SweepConfig};
pub use table::{read_results, write_results};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("empty selection: {0}")]
    Empty(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Attack(#[from] crate::attack::AttackError),
    #[error(transparent)]
    SemCom(#[from] crate::semcom::SemComError),
}
