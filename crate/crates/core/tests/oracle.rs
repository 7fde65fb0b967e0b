//! Sanity checks for the Trotter test oracle itself, against an exact dense
//! eigendecomposition propagator on a constant schedule.

mod common;

use num_complex::Complex64;

use rapidquench::evolve::Schedule;
use rapidquench::ising::{make_sk_instance, Driver, StateVector};

#[test]
fn trotter_oracle_matches_exact_propagator_on_constant_schedule() {
    let n = 4;
    let problem = make_sk_instance(n, 1.0, 11).unwrap();
    let driver = Driver::transverse(n);
    let gamma = 0.8;
    let t = 1.7;
    let initial = driver.ground_state();

    // exact: U exp(-i t Lambda) U^T psi0
    let h = common::dense_hamiltonian(&problem, &driver, gamma, 1.0);
    let eig = h.symmetric_eigen();
    let dim = 1usize << n;
    let mut coeffs = vec![Complex64::default(); dim];
    for (k, c) in coeffs.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for j in 0..dim {
            acc += eig.eigenvectors[(j, k)] * initial.amplitudes()[j];
        }
        *c = acc * Complex64::from_polar(1.0, -t * eig.eigenvalues[k]);
    }
    let mut exact = vec![Complex64::default(); dim];
    for (j, e) in exact.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for k in 0..dim {
            acc += eig.eigenvectors[(j, k)] * coeffs[k];
        }
        *e = acc;
    }
    let exact = StateVector::new(n, exact).unwrap();

    let schedule = Schedule::walk(gamma, t).unwrap();
    let oracle = common::trotter_oracle(&problem, &driver, &schedule, &initial, 100_000);
    let fidelity = oracle.fidelity(&exact);
    assert!(fidelity >= 1.0 - 1e-10, "fidelity {fidelity}");
    assert!((oracle.norm() - 1.0).abs() <= 1e-10);
}
