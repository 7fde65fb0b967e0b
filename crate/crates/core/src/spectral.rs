//! Spectral gaps of the interpolating Hamiltonian
//! `H(s) = (1 - s) H_drive + s H_prob` along the schedule parameter, for
//! comparing the minimum-gap location against the peak of the average
//! dynamic coefficient.

use rand::Rng;
use rayon::prelude::*;

use crate::dyncoeff::{average_dyn, SampleMode};
use crate::error::{Error, Result};
use crate::ising::{seeded_rng, Driver, ProblemHamiltonian};

/// Dense-vector eigensolves are limited to this many qubits.
pub const MAX_SPECTRAL_QUBITS: usize = 14;

/// Two eigenvalues closer than this count as one degenerate level.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Gap and average-coefficient profiles over a schedule-parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GapScan {
    pub s_grid: Vec<f64>,
    /// `E_1(s) - E_0(s)`, first distinct level above the ground level.
    pub gaps: Vec<f64>,
    /// Average dynamic coefficient at rate `(1 - s)/s` on the same grid.
    pub dyn_bars: Vec<f64>,
    /// Grid point with the smallest gap.
    pub s_min_gap: f64,
    /// Grid point with the largest average dynamic coefficient.
    pub s_max_dyn: f64,
}

impl GapScan {
    pub const CSV_HEADER: &'static str = "s,gap,dyn_bar";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for i in 0..self.s_grid.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                self.s_grid[i], self.gaps[i], self.dyn_bars[i]
            ));
        }
        out
    }
}

/// Default grid: 201 uniform points on [0, 1].
pub fn default_s_grid() -> Vec<f64> {
    (0..=200).map(|i| i as f64 / 200.0).collect()
}

/// Scan the ground-state gap and the average dynamic coefficient over
/// `s_grid`. Grid points are processed in parallel; each eigensolve is a
/// matrix-free Lanczos iteration with full reorthogonalization.
pub fn gap_scan(
    problem: &dyn ProblemHamiltonian,
    driver: &Driver,
    s_grid: &[f64],
) -> Result<GapScan> {
    let n = problem.num_qubits();
    if n > MAX_SPECTRAL_QUBITS {
        return Err(Error::TooLargeN(n, MAX_SPECTRAL_QUBITS));
    }
    if driver.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "problem n = {n}, driver n = {}",
            driver.n()
        )));
    }
    if s_grid.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::Config("schedule parameter grid must lie in [0, 1]".into()));
    }
    let diag = problem.diagonal()?;

    let gaps: Vec<f64> = s_grid
        .par_iter()
        .map(|&s| {
            let apply = |src: &[f64], dst: &mut [f64]| {
                driver.apply_real_into(src, dst);
                for j in 0..src.len() {
                    dst[j] = (1.0 - s) * dst[j] + s * diag[j] * src[j];
                }
            };
            let (e0, e1) = lowest_two_distinct(&apply, diag.len(), s)?;
            Ok((e1 - e0).max(0.0))
        })
        .collect::<Result<_>>()?;

    let dyn_bars: Vec<f64> = s_grid
        .par_iter()
        .map(|&s| {
            if s <= 0.0 || s >= 1.0 {
                // both limits of the coefficient vanish
                Ok(0.0)
            } else {
                Ok(average_dyn(problem, driver, (1.0 - s) / s, SampleMode::Exact)?.dyn_bar)
            }
        })
        .collect::<Result<_>>()?;

    let argmin = |v: &[f64]| {
        v.iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap()
    };
    let argmax = |v: &[f64]| {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap()
    };
    Ok(GapScan {
        s_min_gap: s_grid[argmin(&gaps)],
        s_max_dyn: s_grid[argmax(&dyn_bars)],
        s_grid: s_grid.to_vec(),
        gaps,
        dyn_bars,
    })
}

/// Lowest eigenvalue and the first distinct level above it (separation
/// > [`DEGENERACY_TOL`]) of a real symmetric matrix-free operator.
///
/// Runs Lanczos with full reorthogonalization, extending the basis in stages
/// until both levels converge (residual bound `beta |v_last| < 1e-9`). On
/// happy breakdown before a second distinct level appears, restarts in the
/// orthogonal complement of everything seen so far.
fn lowest_two_distinct<F: Fn(&[f64], &mut [f64])>(
    apply: &F,
    dim: usize,
    s_label: f64,
) -> Result<(f64, f64)> {
    const RESID_TOL: f64 = 1e-9;
    let mut rng = seeded_rng(0x5eed);
    // global orthonormal basis across restarts; ritz values from finished runs
    let mut global: Vec<Vec<f64>> = Vec::new();
    let mut finished_ritz: Vec<f64> = Vec::new();

    let orthogonalize = |v: &mut Vec<f64>, basis: &[Vec<f64>]| {
        for _ in 0..2 {
            for b in basis {
                let c: f64 = b.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= c * bi;
                }
            }
        }
    };

    for _restart in 0..8 {
        if global.len() >= dim {
            break;
        }
        // fresh start vector in the orthogonal complement
        let mut v0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        orthogonalize(&mut v0, &global);
        let norm = v0.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for x in v0.iter_mut() {
            *x /= norm;
        }

        let run_start = global.len();
        global.push(v0);
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut w = vec![0.0; dim];
        let mut broke_down = false;
        let max_m = dim - run_start;

        let mut checkpoint = 48usize;
        loop {
            let m = alphas.len();
            if m >= max_m.min(600) {
                break;
            }
            let v = &global[run_start + m];
            apply(v, &mut w);
            let alpha: f64 = v.iter().zip(&w).map(|(x, y)| x * y).sum();
            alphas.push(alpha);
            // full reorthogonalization against every stored vector; two
            // Gram-Schmidt passes keep the basis orthogonal to rounding level
            for _ in 0..2 {
                for b in &global {
                    let c: f64 = b.iter().zip(&w).map(|(x, y)| x * y).sum();
                    for (wi, bi) in w.iter_mut().zip(b) {
                        *wi -= c * bi;
                    }
                }
            }
            let beta = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if beta < 1e-12 {
                broke_down = true;
                break;
            }
            betas.push(beta);
            global.push(w.iter().map(|x| x / beta).collect());

            if alphas.len() >= checkpoint {
                if let Some(pair) =
                    converged_pair(&alphas, &betas, &finished_ritz, RESID_TOL, false)
                {
                    return Ok(pair);
                }
                checkpoint *= 2;
            }
        }
        // run ended: its ritz values are (near-)exact if it broke down
        if broke_down || alphas.len() >= max_m {
            if let Some(pair) = converged_pair(&alphas, &betas, &finished_ritz, RESID_TOL, true) {
                return Ok(pair);
            }
            finished_ritz.extend(ritz_values(&alphas, &betas));
            finished_ritz.sort_by(f64::total_cmp);
            if let Some(pair) = distinct_pair(&finished_ritz) {
                // both levels exact from exhausted subspaces
                if global.len() >= dim || finished_ritz.len() >= 2 {
                    return Ok(pair);
                }
            }
        } else if let Some(pair) = converged_pair(&alphas, &betas, &finished_ritz, RESID_TOL, false)
        {
            return Ok(pair);
        }
        if global.len() >= dim {
            // entire space exhausted: spectrum fully known
            if let Some(pair) = distinct_pair(&finished_ritz) {
                return Ok(pair);
            }
            // fully degenerate operator
            if let Some(&e0) = finished_ritz.first() {
                return Ok((e0, e0));
            }
        }
    }
    Err(Error::EigensolverNoConvergence(s_label))
}

fn ritz_values(alphas: &[f64], betas: &[f64]) -> Vec<f64> {
    let m = alphas.len();
    if m == 0 {
        return Vec::new();
    }
    let mut t = nalgebra::DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    crate::evolve::symmetric_eigen_checked(&t).0
}

/// First two distinct levels in an ascending-sorted value list.
fn distinct_pair(sorted: &[f64]) -> Option<(f64, f64)> {
    let &e0 = sorted.first()?;
    sorted
        .iter()
        .find(|&&e| e - e0 > DEGENERACY_TOL)
        .map(|&e1| (e0, e1))
}

/// Check whether the two lowest distinct Ritz levels of the current
/// tridiagonal (merged with already-exact values from finished runs) have
/// converged; `exact` marks a broken-down run whose Ritz values carry no
/// residual.
fn converged_pair(
    alphas: &[f64],
    betas: &[f64],
    finished: &[f64],
    resid_tol: f64,
    exact: bool,
) -> Option<(f64, f64)> {
    let m = alphas.len();
    if m == 0 {
        let mut all = finished.to_vec();
        all.sort_by(f64::total_cmp);
        return distinct_pair(&all);
    }
    let mut t = nalgebra::DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let (eigenvalues, eigenvectors) = crate::evolve::symmetric_eigen_checked(&t);
    let beta_m = if exact || betas.len() < m {
        0.0
    } else {
        betas[m - 1]
    };
    // (value, residual bound) per ritz pair, plus exact finished values
    let mut levels: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            (
                eigenvalues[k],
                beta_m * eigenvectors[(m - 1, k)].abs(),
            )
        })
        .collect();
    levels.extend(finished.iter().map(|&e| (e, 0.0)));
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (e0, r0) = levels[0];
    if r0 > resid_tol {
        return None;
    }
    let (e1, r1) = *levels
        .iter()
        .find(|&&(e, _)| e - e0 > DEGENERACY_TOL)?;
    (r1 <= resid_tol).then_some((e0, e1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ising::{make_search_problem, make_sk_instance, make_two_qubit_problem};
    use approx::assert_abs_diff_eq;

    /// Dense oracle: full eigendecomposition of H(s).
    fn dense_levels(problem: &dyn ProblemHamiltonian, driver: &Driver, s: f64) -> Vec<f64> {
        let n = problem.num_qubits();
        let dim = 1usize << n;
        let diag = problem.diagonal().unwrap();
        let mut h = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        let mut unit = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        for j in 0..dim {
            unit[j] = 1.0;
            driver.apply_real_into(&unit, &mut col);
            unit[j] = 0.0;
            for i in 0..dim {
                h[(i, j)] = (1.0 - s) * col[i];
            }
            h[(j, j)] += s * diag[j];
        }
        let mut ev: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    #[test]
    fn endpoint_gaps() {
        let problem = make_two_qubit_problem();
        let driver = Driver::transverse(2);
        let scan = gap_scan(&problem, &driver, &[0.0, 1.0]).unwrap();
        // driver spectrum is {0, 2, ..., 2n}
        assert_abs_diff_eq!(scan.gaps[0], 2.0, epsilon = 1e-9);
        // diagonal limit: two smallest distinct energies are -1.5 and -0.5
        assert_abs_diff_eq!(scan.gaps[1], 1.0, epsilon = 1e-9);
        assert_eq!(scan.dyn_bars, vec![0.0, 0.0]);
    }

    #[test]
    fn matches_dense_oracle() {
        for (n, seed) in [(3usize, 1u64), (4, 2), (5, 3), (6, 4)] {
            let problem = make_sk_instance(n, 1.0, seed).unwrap();
            let driver = Driver::transverse(n);
            let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
            let scan = gap_scan(&problem, &driver, &grid).unwrap();
            for (i, &s) in grid.iter().enumerate() {
                let ev = dense_levels(&problem, &driver, s);
                let e0 = ev[0];
                let e1 = ev
                    .iter()
                    .copied()
                    .find(|&e| e - e0 > DEGENERACY_TOL)
                    .unwrap();
                assert_abs_diff_eq!(scan.gaps[i], e1 - e0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn degenerate_ground_states_use_first_distinct_level() {
        // search problem at s = 1: levels {-1, +1}, the +1 level is
        // 2^n - 1 fold degenerate; at s close to 1 the ground space of the
        // diagonal is non-degenerate but the excited manifold is nearly so
        let problem = make_search_problem(4, 7).unwrap();
        let driver = Driver::transverse(4);
        let scan = gap_scan(&problem, &driver, &[1.0]).unwrap();
        assert_abs_diff_eq!(scan.gaps[0], 2.0, epsilon = 1e-9);
        // a fully degenerate diagonal: distinct gap skips the degeneracy
        let two_level = crate::ising::DiagonalProblem::new(
            3,
            vec![0.5, 0.5, 0.5, 0.5, 2.0, 2.0, 2.0, 2.0],
        )
        .unwrap();
        let scan = gap_scan(&two_level, &Driver::transverse(3), &[1.0]).unwrap();
        assert_abs_diff_eq!(scan.gaps[0], 1.5, epsilon = 1e-9);
    }

    #[test]
    fn gap_continuity_weyl_bound() {
        let n = 8;
        let problem = make_sk_instance(n, 1.0, 77).unwrap();
        let driver = Driver::transverse(n);
        let grid = default_s_grid();
        let scan = gap_scan(&problem, &driver, &grid).unwrap();
        // |d gap / ds| <= 2 ||H_prob - H_drive|| <= 2 (max|E| + 2n)
        let diag = problem.diagonal().unwrap();
        let max_e = diag.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
        let bound = 2.0 * (max_e + 2.0 * n as f64);
        for w in scan.gaps.windows(2) {
            assert!(
                (w[1] - w[0]).abs() <= bound / 200.0 + 1e-8,
                "gap jump {} exceeds {}",
                (w[1] - w[0]).abs(),
                bound / 200.0
            );
        }
        assert!(scan.gaps.iter().all(|&g| g >= 0.0));
    }

    #[test]
    fn peak_before_min_gap_on_a_typical_instance() {
        let problem = make_sk_instance(9, 1.0, 2024).unwrap();
        let driver = Driver::transverse(9);
        let scan = gap_scan(&problem, &driver, &default_s_grid()).unwrap();
        assert!(
            scan.s_max_dyn < scan.s_min_gap,
            "peak at {} not before min gap at {}",
            scan.s_max_dyn,
            scan.s_min_gap
        );
    }

    #[test]
    fn rejects_bad_input() {
        let problem = make_search_problem(15, 0).unwrap();
        assert!(matches!(
            gap_scan(&problem, &Driver::transverse(15), &[0.5]),
            Err(Error::TooLargeN(15, MAX_SPECTRAL_QUBITS))
        ));
        let problem = make_two_qubit_problem();
        assert!(gap_scan(&problem, &Driver::transverse(2), &[1.5]).is_err());
    }

    #[test]
    fn csv_shape() {
        let problem = make_two_qubit_problem();
        let scan = gap_scan(&problem, &Driver::transverse(2), &[0.0, 0.5, 1.0]).unwrap();
        let csv = scan.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "s,gap,dyn_bar");
        assert_eq!(lines.len(), 4);
    }
}
