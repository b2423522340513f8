//! Quantum state transfer through the long-range extended XY chain.
//!
//! The chain maps onto free fermions, so transfer amplitudes for hundreds of
//! sites come from one `N x N` Bogoliubov diagonalization. A dense `2^N`
//! simulation of the full protocol in [`oracle`] cross-checks the fast path
//! on small chains.
//!
//! Pipeline: [`model`] builds the quadratic form, [`freefermion`]
//! diagonalizes it and evolves the modes, [`fidelity`] turns the
//! sender-to-receiver amplitudes into the average transfer fidelity, and
//! [`metrics`] extracts `t_q`, `f*` and their family statistics. [`sweep`]
//! and [`fitting`] drive parameter scans and the system-size analysis.

pub mod error;
pub mod fidelity;
pub mod fitting;
pub mod freefermion;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod provenance;
pub mod sweep;

pub use error::{Error, Result};
pub use fidelity::{
    average_fidelity, fidelity_trace, FidelityEvaluator, FidelityTrace, CLASSICAL_LIMIT,
};
pub use freefermion::{diagonalize, propagators, BogoliubovSolution, Propagators};
pub use metrics::{evaluate_cell, find_fstar, find_tq, CellStatus, MetricsConfig, MetricsRecord};
pub use model::{
    build_couplings, build_quadratic_form, ModelParams, QuadraticForm, StringConvention,
};
