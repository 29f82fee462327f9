use std::sync::Arc;

use twistlab_core::hamiltonian::{factorize_time1, FactorizationOptions, HamiltonianSystem};
use twistlab_core::reduction::{build_reduced, truncate};
use twistlab_core::twistdyn::{
    geodesic_reconstruct, minimal_periodic_orbit, rotation_number, GeneratingFunction, GeneratingTable, LiftedMap, MinimizerOptions,
    ReconstructOptions, TimeOneMap,
};
use twistlab_core::{MetricSpec, PrimeDirection};

fn system(spec: MetricSpec, margin: f64) -> HamiltonianSystem {
    let lag = truncate(build_reduced(Arc::new(spec), PrimeDirection::e1()), 3.0, margin).unwrap();
    HamiltonianSystem::new(Arc::new(lag))
}

#[test]
fn half_periodic_minimizer_of_strong_conformal_metric() {
    // Margin 2 leaves no quadratic tail that separates at this amplitude.
    let h = system(MetricSpec::conformal_cos(0.3), 4.0);
    let f = factorize_time1(&h, h.default_tube(), &FactorizationOptions { grid: 32, ..Default::default() }).unwrap();
    let tables = GeneratingTable::all(&f);
    let gens: Vec<&dyn GeneratingFunction> = tables.iter().map(|t| t as &dyn GeneratingFunction).collect();
    let orbit = minimal_periodic_orbit(&gens, 1, 2, None, &MinimizerOptions::default()).unwrap();
    assert!(orbit.converged);
    assert_eq!(orbit.x.len(), 2 * f.n());
    assert!(orbit.residual <= 1e-9, "residual {:e}", orbit.residual);
    assert!(orbit.orbit_error <= 1e-7, "orbit error {:e}", orbit.orbit_error);
    // Two applications of the time-1 map advance by one period.
    let map = TimeOneMap::new(&h, 1e-11);
    let start = (orbit.x[0], orbit.y[0]);
    let end = map.forward(map.forward(start).unwrap()).unwrap();
    assert!((end.0 - start.0 - 1.0).abs() <= 1e-7 && (end.1 - start.1).abs() <= 1e-7, "{start:?} -> {end:?}");
}

#[test]
fn flat_reconstruction_is_a_straight_line() {
    let h = system(MetricSpec::flat(), 2.0);
    let map = TimeOneMap::new(&h, 1e-11);
    let seed = (0.1, 0.3);
    let (rest, err) = map.orbit(seed, 10);
    assert!(err.is_none());
    let orbit: Vec<(i64, f64, f64)> = std::iter::once(seed).chain(rest).enumerate().map(|(k, (x, p))| (k as i64, x, p)).collect();
    let g = geodesic_reconstruct(&orbit, None, h.lagrangian(), &ReconstructOptions::default()).unwrap();
    assert!(g.el_residual <= 1e-9, "residual {:e}", g.el_residual);
    assert!(g.section_deviation <= 1e-7, "section {:e}", g.section_deviation);
    assert!(g.round_trip_error <= 1e-7, "round trip {:e}", g.round_trip_error);
    let slope = g.curve.dtheta[0];
    assert!(g.curve.dtheta.iter().all(|r| (r - slope).abs() <= 1e-9));
}

#[test]
fn conformal_rotation_number_stabilizes() {
    let h = system(MetricSpec::conformal_cos(0.05), 2.0);
    let map = TimeOneMap::new(&h, 1e-11);
    let short = rotation_number(&map, (0.0, 0.5), 10_000).unwrap();
    let long = rotation_number(&map, (0.0, 0.5), 20_000).unwrap();
    assert!(!long.partial);
    assert!((short.value - long.value).abs() <= 1e-6, "{} vs {}", short.value, long.value);
}
