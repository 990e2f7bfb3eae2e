//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;

use circsim_core::{build_wye, Circuit, WyeBranch};

pub const OMEGA_M: f64 = 2.0 * PI * 3e6;

/// Three-branch circulator with the default branch values and 0/120/240 phases.
pub fn reference_circuit() -> Circuit {
    build_wye(&[WyeBranch::default(); 3], &[0.0, 120.0, 240.0]).expect("default circuit is valid")
}
