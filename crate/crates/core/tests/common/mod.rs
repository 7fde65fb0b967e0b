//! Shared helpers for the integration tests: a dense operator builder and a
//! Strang-split Trotter propagator that is independent of the production
//! integrators.

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;

use rapidquench::evolve::Schedule;
use rapidquench::ising::{Driver, ProblemHamiltonian, StateVector};

/// Dense `a H_drive + b H_prob` built column by column.
pub fn dense_hamiltonian(
    problem: &dyn ProblemHamiltonian,
    driver: &Driver,
    a: f64,
    b: f64,
) -> DMatrix<f64> {
    let n = problem.num_qubits();
    let dim = 1usize << n;
    let diag = problem.diagonal().unwrap();
    let mut h = DMatrix::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    let mut col = vec![0.0; dim];
    for j in 0..dim {
        e[j] = 1.0;
        driver.apply_real_into(&e, &mut col);
        for i in 0..dim {
            h[(i, j)] = a * col[i];
        }
        h[(j, j)] += b * diag[j];
        e[j] = 0.0;
    }
    h
}

/// `y = M x` for a real matrix acting on a complex vector.
fn real_matvec(m: &DMatrix<f64>, x: &[Complex64], y: &mut [Complex64]) {
    let dim = x.len();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for j in 0..dim {
            acc += m[(i, j)] * x[j];
        }
        *yi = acc;
    }
}

/// Second-order (Strang) Trotter propagator with coefficients frozen at step
/// midpoints: per step, a half phase under `b H_prob`, an exact rotation
/// under `a H_drive` via a dense eigendecomposition computed once, and a
/// second half phase. `q_total` steps are distributed over the segments in
/// proportion to their durations.
pub fn trotter_oracle(
    problem: &dyn ProblemHamiltonian,
    driver: &Driver,
    schedule: &Schedule,
    initial: &StateVector,
    q_total: usize,
) -> StateVector {
    let n = problem.num_qubits();
    let dim = 1usize << n;
    let diag = problem.diagonal().unwrap();

    let hd = dense_hamiltonian(problem, driver, 1.0, 0.0);
    let eig = hd.symmetric_eigen();
    let u = eig.eigenvectors;
    let ut = u.transpose();
    let lambda = eig.eigenvalues;

    let total = schedule.total_duration();
    let mut psi: Vec<Complex64> = initial.amplitudes().to_vec();
    let mut w = vec![Complex64::default(); dim];
    let mut t0 = 0.0;
    for seg in schedule.segments() {
        let dur = seg.duration;
        let q = ((q_total as f64 * dur / total).round() as usize).max(1);
        let dt = dur / q as f64;
        for k in 0..q {
            let tm = t0 + (k as f64 + 0.5) * dt;
            let (a, b) = schedule.ab(tm);
            for (p, &d) in psi.iter_mut().zip(&diag) {
                *p *= Complex64::from_polar(1.0, -0.5 * b * dt * d);
            }
            real_matvec(&ut, &psi, &mut w);
            for (wi, &l) in w.iter_mut().zip(lambda.iter()) {
                *wi *= Complex64::from_polar(1.0, -a * dt * l);
            }
            real_matvec(&u, &w, &mut psi);
            for (p, &d) in psi.iter_mut().zip(&diag) {
                *p *= Complex64::from_polar(1.0, -0.5 * b * dt * d);
            }
        }
        t0 += dur;
    }
    StateVector::new(n, psi).expect("Trotter steps are unitary")
}

/// Entrywise complex conjugate (time reversal for real Hamiltonians).
pub fn conjugated(state: &StateVector) -> StateVector {
    let amps = state.amplitudes().iter().map(|a| a.conj()).collect();
    StateVector::new(state.n(), amps).unwrap()
}
