//! Geodesic flows of Finsler metrics on the 2-torus, reduced along a prime
//! direction to a time-periodic Lagrangian and then to a finite composition
//! of monotone twist maps of the annulus.

pub mod error;
pub mod fourier;
pub mod metric;
pub mod ode;
pub mod quad;
pub mod hamiltonian;
pub mod reduction;
pub mod section;
pub mod twistdyn;

pub use error::{Result, TwistError};
pub use fourier::{FieldJet, FourierField, FourierTerm};
pub use metric::{MetricJet, MetricSpec, TangentState, Trajectory};
pub use hamiltonian::{HamiltonianSystem, TwistFactorization};
pub use reduction::{Lagrangian, PrimeDirection, ReducedLagrangian, TruncatedLagrangian};
