//! Local transfer/driver/dynamic coefficients for driver-connected basis
//! pairs, their average over all pairs (exact or sampled), scaled-gap moment
//! statistics, and the moment-ratio lower bound on the peak average.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ising::{Driver, ProblemHamiltonian};

/// Exact-enumeration mode is limited to this many qubits
/// (`n 2^{n-1}` pairs).
pub const MAX_EXACT_QUBITS: usize = 20;

/// A pair of basis states `j`, `k = j ^ (1 << bit)` connected by the driver,
/// with the local 2x2 matrix elements of both Hamiltonians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPair {
    pub j: u64,
    pub k: u64,
    /// Problem energies `E(j)`, `E(k)`.
    pub prob_j: f64,
    pub prob_k: f64,
    /// Driver diagonal elements `<j|H_drive|j>`, `<k|H_drive|k>`.
    pub drive_jj: f64,
    pub drive_kk: f64,
    /// Signed driver off-diagonal `<k|H_drive|j>`.
    pub drive_jk: f64,
}

impl LocalPair {
    pub fn new(problem: &dyn ProblemHamiltonian, driver: &Driver, j: u64, bit: usize) -> Self {
        let k = j ^ (1 << bit);
        Self {
            j,
            k,
            prob_j: problem.energy(j),
            prob_k: problem.energy(k),
            drive_jj: driver.diag_element(j),
            drive_kk: driver.diag_element(k),
            drive_jk: driver.offdiag_element(bit),
        }
    }

    /// `|<k|H_drive|j>|`; positive for any single-flip driver.
    pub fn offdiag(&self) -> f64 {
        self.drive_jk.abs()
    }

    /// Signed local diagonal difference, driver diagonal included:
    /// `Delta = [gamma <j|Hd|j> + E(j)] - [gamma <k|Hd|k> + E(k)]`.
    /// The driver term vanishes when the driver diagonal is uniform.
    pub fn delta(&self, gamma: f64) -> f64 {
        gamma * (self.drive_jj - self.drive_kk) + (self.prob_j - self.prob_k)
    }

    /// Scaled gap `zeta = |Delta| / (2 |<k|H_drive|j>|)`.
    pub fn zeta(&self, gamma: f64) -> f64 {
        self.delta(gamma).abs() / (2.0 * self.offdiag())
    }

    /// Whether the driver diagonal is the same on both states, which makes
    /// the closed forms in terms of `zeta / gamma` applicable.
    pub fn uniform_drive_diag(&self) -> bool {
        self.drive_jj == self.drive_kk
    }
}

/// `2|off| / (2|off| + |delta|)`, with the 0/0 case defined as 0
/// (no driving implies no transfer).
fn ratio_coefficient(off: f64, delta: f64) -> f64 {
    let num = 2.0 * off.abs();
    let den = num + delta.abs();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Transfer coefficient `T = 2 gamma |o| / (2 gamma |o| + |Delta|)` in [0, 1].
pub fn transfer_coefficient(pair: &LocalPair, gamma: f64) -> f64 {
    ratio_coefficient(gamma * pair.offdiag(), pair.delta(gamma))
}

/// Driver coefficient `D` in [0, 1]: the same ratio evaluated in the basis
/// that diagonalizes the local driver block, with the roles of the two
/// Hamiltonians swapped. Equals `1 - T` exactly when the driver diagonal is
/// uniform on the pair.
pub fn driver_coefficient(pair: &LocalPair, gamma: f64) -> f64 {
    if pair.uniform_drive_diag() {
        return 1.0 - transfer_coefficient(pair, gamma);
    }
    // rotate by phi diagonalizing [[djj, o], [o, dkk]]
    let o = pair.drive_jk;
    let two_phi = (2.0 * o).atan2(pair.drive_jj - pair.drive_kk);
    let (s, c) = (two_phi / 2.0).sin_cos();
    // driver eigenvalues in the rotated basis
    let lam0 = pair.drive_jj * c * c + pair.drive_kk * s * s + 2.0 * o * c * s;
    let lam1 = pair.drive_jj * s * s + pair.drive_kk * c * c - 2.0 * o * c * s;
    // problem block in the rotated basis
    let x00 = pair.prob_j * c * c + pair.prob_k * s * s;
    let x11 = pair.prob_j * s * s + pair.prob_k * c * c;
    let x01 = (pair.prob_j - pair.prob_k) * c * s;
    ratio_coefficient(x01, (x00 - x11) + gamma * (lam0 - lam1))
}

/// Dynamic coefficient `Dyn = T D`; for a uniform driver diagonal this equals
/// `(zeta/gamma) / (1 + zeta/gamma)^2` and never exceeds 0.25.
pub fn dyn_coefficient(pair: &LocalPair, gamma: f64) -> f64 {
    transfer_coefficient(pair, gamma) * driver_coefficient(pair, gamma)
}

/// How pair averages are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Enumerate all `n 2^{n-1}` unordered connected pairs.
    Exact,
    /// Draw `n_samples` pairs (uniform state, uniform bit), deterministic
    /// given the seed regardless of thread count.
    Sampled { n_samples: u64, seed: u64 },
}

/// Average dynamic coefficient at a given hopping rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DynReport {
    pub gamma: f64,
    pub dyn_bar: f64,
    /// `0.25 / sqrt(N)` in sampled mode; 0 in exact mode.
    pub dyn_bar_error: f64,
    /// Empirical standard error of the sample mean, sampled mode only.
    pub empirical_error: Option<f64>,
    pub mode: SampleMode,
    /// Number of pairs averaged.
    pub count: u64,
    /// Per-pair values in enumeration order; kept only for small exact runs.
    pub dyn_values: Option<Vec<f64>>,
}

/// Context shared by the pair sweeps: problem diagonal plus (for biased
/// drivers) the driver diagonal, both precomputed.
struct PairContext<'a> {
    n: usize,
    diag: Vec<f64>,
    driver: &'a Driver,
    drive_diag: Option<Vec<f64>>,
}

impl<'a> PairContext<'a> {
    fn new(problem: &dyn ProblemHamiltonian, driver: &'a Driver) -> Result<Self> {
        let n = problem.num_qubits();
        if driver.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "problem n = {n}, driver n = {}",
                driver.n()
            )));
        }
        let diag = problem.diagonal()?;
        let drive_diag = driver
            .is_biased()
            .then(|| (0..diag.len() as u64).map(|j| driver.diag_element(j)).collect());
        Ok(Self {
            n,
            diag,
            driver,
            drive_diag,
        })
    }

    fn pair(&self, j: u64, bit: usize) -> LocalPair {
        let k = j ^ (1 << bit);
        let (djj, dkk) = match &self.drive_diag {
            Some(d) => (d[j as usize], d[k as usize]),
            None => (self.n as f64, self.n as f64),
        };
        LocalPair {
            j,
            k,
            prob_j: self.diag[j as usize],
            prob_k: self.diag[k as usize],
            drive_jj: djj,
            drive_kk: dkk,
            drive_jk: self.driver.offdiag_element(bit),
        }
    }

    /// Sum `f(pair)` (and its square) over all unordered connected pairs.
    /// Deterministic: blocks are reduced in index order.
    fn exact_sums<F: Fn(&LocalPair) -> f64 + Sync>(&self, f: F) -> (f64, f64, u64) {
        let dim = 1u64 << self.n;
        let count = self.n as u64 * (dim / 2);
        let block = 1u64 << self.n.min(12);
        let blocks: Vec<(f64, f64)> = (0..dim.div_ceil(block))
            .into_par_iter()
            .map(|bi| {
                let mut s = 0.0;
                let mut s2 = 0.0;
                for j in bi * block..((bi + 1) * block).min(dim) {
                    for bit in 0..self.n {
                        if (j >> bit) & 1 == 0 {
                            let v = f(&self.pair(j, bit));
                            s += v;
                            s2 += v * v;
                        }
                    }
                }
                (s, s2)
            })
            .collect();
        let (mut s, mut s2) = (0.0, 0.0);
        for (a, b) in blocks {
            s += a;
            s2 += b;
        }
        (s, s2, count)
    }

    /// Sum `f(pair)` (and its square) over `n_samples` uniformly drawn pairs.
    /// Sample `i` uses an RNG on stream `i` of the seed, so the draw is
    /// deterministic regardless of thread count; blocks are reduced in order.
    fn sampled_sums<F: Fn(&LocalPair) -> f64 + Sync>(
        &self,
        n_samples: u64,
        seed: u64,
        f: F,
    ) -> (f64, f64) {
        let dim = 1u64 << self.n;
        const BLOCK: u64 = 8192;
        let blocks: Vec<(f64, f64)> = (0..n_samples.div_ceil(BLOCK))
            .into_par_iter()
            .map(|bi| {
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in bi * BLOCK..((bi + 1) * BLOCK).min(n_samples) {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i);
                    let j = rng.gen_range(0..dim);
                    let bit = rng.gen_range(0..self.n);
                    let v = f(&self.pair(j, bit));
                    s += v;
                    s2 += v * v;
                }
                (s, s2)
            })
            .collect();
        let (mut s, mut s2) = (0.0, 0.0);
        for (a, b) in blocks {
            s += a;
            s2 += b;
        }
        (s, s2)
    }
}

/// Average `Dyn` over driver-connected pairs, exactly or by sampling.
pub fn average_dyn(
    problem: &dyn ProblemHamiltonian,
    driver: &Driver,
    gamma: f64,
    mode: SampleMode,
) -> Result<DynReport> {
    let ctx = PairContext::new(problem, driver)?;
    match mode {
        SampleMode::Exact => {
            let n = ctx.n;
            if n > MAX_EXACT_QUBITS {
                return Err(Error::TooLargeN(n, MAX_EXACT_QUBITS));
            }
            let (sum, _, count) = ctx.exact_sums(|p| dyn_coefficient(p, gamma));
            let dyn_values = (n <= 8).then(|| {
                let mut vals = Vec::with_capacity(count as usize);
                for j in 0..(1u64 << n) {
                    for bit in 0..n {
                        if (j >> bit) & 1 == 0 {
                            vals.push(dyn_coefficient(&ctx.pair(j, bit), gamma));
                        }
                    }
                }
                vals
            });
            Ok(DynReport {
                gamma,
                dyn_bar: sum / count as f64,
                dyn_bar_error: 0.0,
                empirical_error: None,
                mode,
                count,
                dyn_values,
            })
        }
        SampleMode::Sampled { n_samples, seed } => {
            if n_samples == 0 {
                return Err(Error::Config("sample count must be positive".into()));
            }
            let (sum, sumsq) = ctx.sampled_sums(n_samples, seed, |p| dyn_coefficient(p, gamma));
            let nf = n_samples as f64;
            let mean = sum / nf;
            let var = (sumsq / nf - mean * mean).max(0.0);
            Ok(DynReport {
                gamma,
                dyn_bar: mean,
                dyn_bar_error: 0.25 / nf.sqrt(),
                empirical_error: Some((var / nf).sqrt()),
                mode,
                count: n_samples,
                dyn_values: None,
            })
        }
    }
}

/// Moments of the scaled-gap (`zeta`) distribution over connected pairs.
///
/// `zeta` is evaluated without the hopping-rate-weighted driver diagonal
/// (exact for drivers with a uniform diagonal, where `Delta` is
/// rate-independent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapStats {
    /// First moment of `zeta`.
    pub mu1: f64,
    /// Second central moment of `zeta`.
    pub mu2: f64,
    /// `mu2 / mu1^2`; 0 when every gap is zero (see [`GapStats::is_degenerate`]).
    pub ratio: f64,
    pub count: u64,
    /// Empirical standard deviation of the signed diagonal difference.
    pub delta_std: f64,
}

impl GapStats {
    fn from_sums(zeta_sum: f64, zeta_sq_sum: f64, delta_sq_sum: f64, count: u64) -> Self {
        let nf = count as f64;
        let mu1 = zeta_sum / nf;
        let mu2 = (zeta_sq_sum / nf - mu1 * mu1).max(0.0);
        let ratio = if mu1 > 0.0 { mu2 / (mu1 * mu1) } else { 0.0 };
        GapStats {
            mu1,
            mu2,
            ratio,
            count,
            delta_std: (delta_sq_sum / nf).sqrt(),
        }
    }

    /// All gaps were zero; the moment ratio carries no information.
    pub fn is_degenerate(&self) -> bool {
        self.mu1 == 0.0
    }

    /// Pool moment statistics across instances (count-weighted).
    pub fn pooled(stats: &[GapStats]) -> GapStats {
        let mut zeta_sum = 0.0;
        let mut zeta_sq_sum = 0.0;
        let mut delta_sq_sum = 0.0;
        let mut count = 0u64;
        for s in stats {
            let nf = s.count as f64;
            zeta_sum += s.mu1 * nf;
            zeta_sq_sum += (s.mu2 + s.mu1 * s.mu1) * nf;
            delta_sq_sum += s.delta_std * s.delta_std * nf;
            count += s.count;
        }
        GapStats::from_sums(zeta_sum, zeta_sq_sum, delta_sq_sum, count)
    }
}

/// Moments of the scaled-gap distribution, exact or sampled.
pub fn scaled_gap_moments(
    problem: &dyn ProblemHamiltonian,
    driver: &Driver,
    mode: SampleMode,
) -> Result<GapStats> {
    let ctx = PairContext::new(problem, driver)?;
    let zeta = |p: &LocalPair| p.zeta(0.0);
    match mode {
        SampleMode::Exact => {
            if ctx.n > MAX_EXACT_QUBITS {
                return Err(Error::TooLargeN(ctx.n, MAX_EXACT_QUBITS));
            }
            let (zs, zs2, count) = ctx.exact_sums(zeta);
            let (_, ds2, _) = ctx.exact_sums(|p| p.delta(0.0));
            Ok(GapStats::from_sums(zs, zs2, ds2, count))
        }
        SampleMode::Sampled { n_samples, seed } => {
            if n_samples == 0 {
                return Err(Error::Config("sample count must be positive".into()));
            }
            let (zs, zs2) = ctx.sampled_sums(n_samples, seed, zeta);
            let (_, ds2) = ctx.sampled_sums(n_samples, seed, |p| p.delta(0.0));
            Ok(GapStats::from_sums(zs, zs2, ds2, n_samples))
        }
    }
}

/// Greatest lower bound on the peak average dynamic coefficient from the
/// moment ratio `r = mu2 / mu1^2`:
/// `max over c in (0,1) of (1-c)/(2-c)^2 * (1 - r/c^2)`, clamped at 0.
/// Returns `(bound, optimal c)`.
pub fn dyn_lower_bound(ratio: f64) -> (f64, f64) {
    assert!(ratio >= 0.0, "moment ratio must be non-negative");
    let f = |c: f64| (1.0 - c) / ((2.0 - c) * (2.0 - c)) * (1.0 - ratio / (c * c));
    // golden-section maximization; the objective rises from -inf to a single
    // interior peak and falls back to 0 at c = 1
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (1e-10, 1.0 - 1e-10);
    let mut c1 = b - inv_phi * (b - a);
    let mut c2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(c1), f(c2));
    while b - a > 1e-8 {
        if f1 < f2 {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + inv_phi * (b - a);
            f2 = f(c2);
        } else {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - inv_phi * (b - a);
            f1 = f(c1);
        }
    }
    let c_opt = 0.5 * (a + b);
    (f(c_opt).max(0.0), c_opt)
}
