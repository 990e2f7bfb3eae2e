//! Harmonic S-parameter simulation of spatiotemporally modulated resonator
//! networks.
//!
//! The main path is [`solver`]: a conversion-matrix (harmonic balance) solver
//! for linear periodically time-varying circuits built from [`circuit`]
//! elements, with varactor waveforms from [`modulation`]. [`transient`] is an
//! independent time-domain periodic-steady-state simulator used to
//! cross-check it. [`network`] post-processes harmonic data and [`io`] reads
//! and writes netlists, Touchstone and CSV files.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuit;
pub mod error;
pub mod io;
pub mod modulation;
pub mod network;
pub mod solver;
pub mod transient;

pub use circuit::{
    build_wye, bvd_admittance, derive_bvd, lti_admittance, BvdParams, Circuit, CircuitBuilder, Element,
    ElementKind, ModShape, ModSpec, NodeId, VaractorSpec, WyeBranch, GROUND,
};
pub use error::{Diagnostic, Error, Result};
pub use modulation::{fourier_series, varactor_waveform, FourierCoeffs, PeriodicElementWaveform, VaractorDrive};
pub use network::{
    embed_matching, l_match, metrics, optimize_match, power_balance, CirculatorMetrics, MatchObjective,
    MatchingNetwork, PortRoles, PowerBalance,
};
pub use num_complex::Complex64;
pub use solver::{
    assemble, converge_k, solve_harmonic_sparams, sweep, BlockSystem, HarmonicSMatrix, LptvSolver, SweepResult,
};

/// Tool version recorded in output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
