//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use twistlab_core::reduction::{build_reduced, truncate};
use twistlab_core::{HamiltonianSystem, MetricSpec, PrimeDirection};

/// Single-mode conformal metric along `e₁`, truncated at `R = 3`.
pub fn conformal_system(eps: f64) -> HamiltonianSystem {
    let lag = truncate(build_reduced(Arc::new(MetricSpec::conformal_cos(eps)), PrimeDirection::e1()), 3.0, 2.0).expect("truncation");
    HamiltonianSystem::new(Arc::new(lag))
}
