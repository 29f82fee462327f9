//! Dynamics of twist maps: rotation numbers, generating functions and
//! minimal orbits, invariant-circle detection, instability bands and
//! connecting orbits.

pub mod circle;
pub mod connect;
pub mod generating;
pub mod maps;
pub mod minimal;
pub mod reconstruct;
pub mod rotation;
pub mod scan;

pub use circle::{circle_detect, circle_detect_checked, witness_holds, CircleCandidate, CircleParams, OrderWitness, Verdict};
pub use connect::{approach_distances, connect_search, ConnectParams, ConnectionCandidate, ConnectionReport};
pub use generating::{generating_action, GenJet, GeneratingFunction, GeneratingTable};
pub use maps::{LiftedMap, RigidRotation, Shear, StandardMap, TimeOneMap};
pub use minimal::{minimal_periodic_orbit, MinimizerOptions, OrbitConfiguration};
pub use reconstruct::{geodesic_reconstruct, ReconstructOptions, ReconstructedGeodesic};
pub use rotation::{rotation_number, RotationEstimate, RotationMethod};
pub use scan::{instability_scan, periodic_scan, scan_seeds, AbsenceReport, PeriodicScan, SeedResult, BandReport, InstabilityBand, ScanOutcome, ScanParams};
