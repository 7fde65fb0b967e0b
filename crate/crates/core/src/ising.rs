//! Problem and driver Hamiltonians with matrix-free action.
//!
//! Basis convention used everywhere in this crate: basis index `j` is read
//! little-endian, bit `b` of `j` is qubit `b`, and the spin eigenvalue of
//! `Z_b` on `|j>` is `+1` when bit `b` is 0 and `-1` when it is 1.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Memory guard: two complex state vectors at n = 24 fit in ~1 GiB.
pub const MAX_QUBITS: usize = 24;

/// Spin eigenvalue of `Z_b` on basis state `|j>`.
#[inline]
pub fn spin(j: u64, b: usize) -> f64 {
    1.0 - 2.0 * ((j >> b) & 1) as f64
}

/// Seeded portable RNG used for all instance generation (ChaCha8).
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard-normal variate via the Box-Muller transform.
///
/// Two uniforms in (0, 1] are consumed per call pair; the second variate of
/// each pair is cached. Box-Muller is used instead of a ziggurat so the
/// bit-level output is easy to reproduce in other languages.
pub struct NormalSource<R: Rng> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> NormalSource<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0,1] so the log is finite
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Anything usable as a diagonal problem Hamiltonian.
pub trait ProblemHamiltonian: Sync {
    fn num_qubits(&self) -> usize;

    /// `E^(j) = <j|H_prob|j>`.
    fn energy(&self, j: u64) -> f64;

    /// Signed single-flip gap `Delta_jk = E^(j) - E^(k)` with `k = j ^ (1 << bit)`.
    fn flip_delta(&self, j: u64, bit: usize) -> f64;

    /// Full diagonal over all `2^n` basis states.
    fn diagonal(&self) -> Result<Vec<f64>> {
        let n = self.num_qubits();
        if n > MAX_QUBITS {
            return Err(Error::TooLargeN(n, MAX_QUBITS));
        }
        let dim = 1usize << n;
        let mut e = vec![0.0; dim];
        e[0] = self.energy(0);
        // incremental: clear the highest set bit to reuse an earlier entry
        for j in 1..dim as u64 {
            let a = 63 - j.leading_zeros() as usize;
            let j0 = j & !(1 << a);
            e[j as usize] = e[j0 as usize] - self.flip_delta(j0, a);
        }
        Ok(e)
    }
}

/// Instance metadata carried by generated problems.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub id: String,
    pub seed: u64,
    /// sigma used for generation; 0 for hand-built instances.
    pub sigma: f64,
}

/// A 2-local Ising problem `H_prob = -1/2 sum_{a!=b} J_ab Z_a Z_b - sum_b h_b Z_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingProblem {
    n: usize,
    /// symmetric n x n, zero diagonal, row-major
    couplings: Vec<f64>,
    fields: Vec<f64>,
    pub meta: InstanceMeta,
}

impl IsingProblem {
    /// Build from an explicit symmetric coupling matrix and field vector.
    pub fn new(
        n: usize,
        couplings: Vec<f64>,
        fields: Vec<f64>,
        meta: InstanceMeta,
    ) -> Result<Self> {
        if n > MAX_QUBITS {
            return Err(Error::TooLargeN(n, MAX_QUBITS));
        }
        assert_eq!(couplings.len(), n * n, "couplings must be n x n");
        assert_eq!(fields.len(), n, "fields must have length n");
        for a in 0..n {
            assert_eq!(couplings[a * n + a], 0.0, "J_aa must be zero");
            for b in 0..a {
                assert_eq!(couplings[a * n + b], couplings[b * n + a], "J must be symmetric");
            }
        }
        Ok(Self { n, couplings, fields, meta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coupling(&self, a: usize, b: usize) -> f64 {
        self.couplings[a * self.n + b]
    }

    pub fn field(&self, b: usize) -> f64 {
        self.fields[b]
    }

    /// Local field seen by qubit `a` in state `|j>`: `sum_{b!=a} J_ab s_b + h_a`.
    fn local_field(&self, j: u64, a: usize) -> f64 {
        let row = &self.couplings[a * self.n..(a + 1) * self.n];
        let mut x = self.fields[a];
        for (b, &jab) in row.iter().enumerate() {
            if b != a {
                x += jab * spin(j, b);
            }
        }
        x
    }
}

impl ProblemHamiltonian for IsingProblem {
    fn num_qubits(&self) -> usize {
        self.n
    }

    fn energy(&self, j: u64) -> f64 {
        let mut e = 0.0;
        for a in 0..self.n {
            let sa = spin(j, a);
            for b in 0..a {
                e -= self.coupling(a, b) * sa * spin(j, b);
            }
            e -= self.fields[a] * sa;
        }
        e
    }

    fn flip_delta(&self, j: u64, bit: usize) -> f64 {
        // flipping s_a -> -s_a changes E by +2 s_a (sum_b J_ab s_b + h_a)
        -2.0 * spin(j, bit) * self.local_field(j, bit)
    }
}

/// A problem given directly as its computational-basis diagonal
/// (used for Hamiltonians that are not 2-local, e.g. unstructured search).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalProblem {
    n: usize,
    energies: Vec<f64>,
}

impl DiagonalProblem {
    pub fn new(n: usize, energies: Vec<f64>) -> Result<Self> {
        if n > MAX_QUBITS {
            return Err(Error::TooLargeN(n, MAX_QUBITS));
        }
        assert_eq!(energies.len(), 1 << n);
        Ok(Self { n, energies })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }
}

impl ProblemHamiltonian for DiagonalProblem {
    fn num_qubits(&self) -> usize {
        self.n
    }

    fn energy(&self, j: u64) -> f64 {
        self.energies[j as usize]
    }

    fn flip_delta(&self, j: u64, bit: usize) -> f64 {
        self.energies[j as usize] - self.energies[(j ^ (1 << bit)) as usize]
    }

    fn diagonal(&self) -> Result<Vec<f64>> {
        Ok(self.energies.clone())
    }
}

/// Draw a Sherrington-Kirkpatrick instance: `J_ab` (a < b) and `h_b` i.i.d.
/// from `N(0, sigma^2)`. Deterministic given `(n, sigma, seed)`.
///
/// Draw order: J_{01}, J_{02}, ..., J_{0,n-1}, J_{12}, ..., J_{n-2,n-1},
/// then h_0, ..., h_{n-1}.
pub fn make_sk_instance(n: usize, sigma: f64, seed: u64) -> Result<IsingProblem> {
    if n < 2 {
        return Err(Error::InvalidN(n));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidSigma(sigma));
    }
    let mut normals = NormalSource::new(seeded_rng(seed));
    let mut couplings = vec![0.0; n * n];
    for a in 0..n {
        for b in (a + 1)..n {
            let v = sigma * normals.next();
            couplings[a * n + b] = v;
            couplings[b * n + a] = v;
        }
    }
    let fields: Vec<f64> = (0..n).map(|_| sigma * normals.next()).collect();
    let meta = InstanceMeta {
        id: format!("sk-n{n:02}-{seed:016x}"),
        seed,
        sigma,
    };
    IsingProblem::new(n, couplings, fields, meta)
}

/// The two-qubit toy problem `H_prob = -Z_1 Z_0 - 1/2 Z_1`.
///
/// The field sits on bit 1 so the diagonal over `j = 0..4` reads
/// `(-1.5, 0.5, 1.5, -0.5)`.
pub fn make_two_qubit_problem() -> IsingProblem {
    let couplings = vec![0.0, 1.0, 1.0, 0.0];
    let fields = vec![0.0, 0.5];
    IsingProblem::new(
        2,
        couplings,
        fields,
        InstanceMeta {
            id: "two-qubit".into(),
            seed: 0,
            sigma: 0.0,
        },
    )
    .expect("n = 2 is always valid")
}

/// Unstructured search `H_search = 1 - 2|m><m|` as an explicit diagonal.
pub fn make_search_problem(n: usize, marked: u64) -> Result<DiagonalProblem> {
    if n > MAX_QUBITS {
        return Err(Error::TooLargeN(n, MAX_QUBITS));
    }
    if marked >= (1u64 << n) {
        return Err(Error::MarkedOutOfRange {
            n,
            marked: marked as usize,
        });
    }
    let mut e = vec![1.0; 1 << n];
    e[marked as usize] = -1.0;
    DiagonalProblem::new(n, e)
}

/// Convenience wrapper for the `problem_energies` contract.
pub fn problem_energies(problem: &dyn ProblemHamiltonian) -> Result<Vec<f64>> {
    problem.diagonal()
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum DriverKind {
    Transverse,
    /// `n 1 - sum_i (cos(theta) X_i + g_i sin(theta) Z_i)`
    Biased { guess: Vec<i8>, theta: f64 },
}

/// Driver Hamiltonian with matrix-free action; ground-state eigenvalue is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Driver {
    n: usize,
    kind: DriverKind,
}

impl Driver {
    /// Transverse field `n 1 - sum_j X_j`.
    pub fn transverse(n: usize) -> Self {
        Self {
            n,
            kind: DriverKind::Transverse,
        }
    }

    /// Biased driver toward the guess bitstring `g` (`g_i = +1` for bit 0)
    /// with confidence angle `theta` in `[0, pi/2]`.
    pub fn biased(n: usize, guess: Vec<i8>, theta: f64) -> Self {
        assert_eq!(guess.len(), n);
        assert!(guess.iter().all(|&g| g == 1 || g == -1));
        assert!((0.0..=std::f64::consts::FRAC_PI_2).contains(&theta));
        Self {
            n,
            kind: DriverKind::Biased { guess, theta },
        }
    }

    /// Biased driver whose guess encodes the basis state `j`.
    pub fn biased_toward(n: usize, j: u64, theta: f64) -> Self {
        let guess = (0..n).map(|b| spin(j, b) as i8).collect();
        Self::biased(n, guess, theta)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_biased(&self) -> bool {
        matches!(self.kind, DriverKind::Biased { .. })
    }

    /// `<j|H_drive|j>`.
    pub fn diag_element(&self, j: u64) -> f64 {
        match &self.kind {
            DriverKind::Transverse => self.n as f64,
            DriverKind::Biased { guess, theta } => {
                let mut d = self.n as f64;
                let st = theta.sin();
                for (b, &g) in guess.iter().enumerate() {
                    d -= st * g as f64 * spin(j, b);
                }
                d
            }
        }
    }

    /// `<k|H_drive|j>` for `k = j ^ (1 << bit)` (the only nonzero off-diagonals).
    pub fn offdiag_element(&self, _bit: usize) -> f64 {
        match &self.kind {
            DriverKind::Transverse => -1.0,
            DriverKind::Biased { theta, .. } => -theta.cos(),
        }
    }

    /// `dst = H_drive src`, matrix-free. Slices have length `2^n`.
    pub fn apply_into(&self, src: &[Complex64], dst: &mut [Complex64]) {
        let dim = 1usize << self.n;
        assert_eq!(src.len(), dim);
        assert_eq!(dst.len(), dim);
        match &self.kind {
            DriverKind::Transverse => {
                let nf = self.n as f64;
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = nf * src[j];
                }
                for b in 0..self.n {
                    let mask = 1usize << b;
                    for j in 0..dim {
                        dst[j] -= src[j ^ mask];
                    }
                }
            }
            DriverKind::Biased { guess, theta } => {
                let (st, ct) = theta.sin_cos();
                for (j, d) in dst.iter_mut().enumerate() {
                    let mut diag = self.n as f64;
                    for (b, &g) in guess.iter().enumerate() {
                        diag -= st * g as f64 * spin(j as u64, b);
                    }
                    *d = diag * src[j];
                }
                for b in 0..self.n {
                    let mask = 1usize << b;
                    for j in 0..dim {
                        dst[j] -= ct * src[j ^ mask];
                    }
                }
            }
        }
    }

    /// Real-vector variant of [`Driver::apply_into`] (the driver is real symmetric).
    pub fn apply_real_into(&self, src: &[f64], dst: &mut [f64]) {
        let dim = 1usize << self.n;
        assert_eq!(src.len(), dim);
        assert_eq!(dst.len(), dim);
        for (j, d) in dst.iter_mut().enumerate() {
            *d = self.diag_element(j as u64) * src[j];
        }
        let off = match &self.kind {
            DriverKind::Transverse => 1.0,
            DriverKind::Biased { theta, .. } => theta.cos(),
        };
        for b in 0..self.n {
            let mask = 1usize << b;
            for j in 0..dim {
                dst[j] -= off * src[j ^ mask];
            }
        }
    }

    /// `H_drive |psi>` as an unnormalized image.
    pub fn apply(&self, state: &StateVector) -> Result<Vec<Complex64>> {
        if state.n() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "driver on {} qubits, state on {}",
                self.n,
                state.n()
            )));
        }
        let mut out = vec![Complex64::default(); state.amplitudes().len()];
        self.apply_into(state.amplitudes(), &mut out);
        Ok(out)
    }

    /// Ground state at eigenvalue 0.
    ///
    /// Transverse: uniform superposition. Biased: tensor product of
    /// single-qubit ground states of `-(cos(theta) X + g_i sin(theta) Z)`.
    pub fn ground_state(&self) -> StateVector {
        let dim = 1usize << self.n;
        match &self.kind {
            DriverKind::Transverse => {
                let a = Complex64::new(1.0 / (dim as f64).sqrt(), 0.0);
                StateVector::new(self.n, vec![a; dim]).expect("uniform state is normalized")
            }
            DriverKind::Biased { guess, theta } => {
                // per qubit: +1 eigenvector of cos(theta) X + g sin(theta) Z,
                // Bloch angle alpha = atan2(cos(theta), g sin(theta))
                let mut per_qubit = Vec::with_capacity(self.n);
                for &g in guess {
                    let alpha = theta.cos().atan2(g as f64 * theta.sin());
                    per_qubit.push(((alpha / 2.0).cos(), (alpha / 2.0).sin()));
                }
                let mut amps = vec![Complex64::default(); dim];
                for (j, a) in amps.iter_mut().enumerate() {
                    let mut v = 1.0;
                    for (b, &(a0, a1)) in per_qubit.iter().enumerate() {
                        v *= if (j >> b) & 1 == 0 { a0 } else { a1 };
                    }
                    *a = Complex64::new(v, 0.0);
                }
                StateVector::new(self.n, amps).expect("product state is normalized")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// State vectors
// ---------------------------------------------------------------------------

/// Normalized complex amplitudes over the `2^n` computational basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// Construction checks `| ||psi|| - 1 | < 1e-10`.
    pub fn new(n: usize, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != 1usize << n {
            return Err(Error::DimensionMismatch(format!(
                "expected 2^{n} amplitudes, got {}",
                amps.len()
            )));
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() >= 1e-10 {
            return Err(Error::DimensionMismatch(format!(
                "state norm {norm} deviates from 1 by more than 1e-10"
            )));
        }
        Ok(Self { n, amps })
    }

    /// For evolved states, whose norm drift is reported rather than enforced.
    pub(crate) fn new_unchecked(n: usize, amps: Vec<Complex64>) -> Self {
        debug_assert_eq!(amps.len(), 1usize << n);
        Self { n, amps }
    }

    pub fn basis(n: usize, j: u64) -> Self {
        let mut amps = vec![Complex64::default(); 1 << n];
        amps[j as usize] = Complex64::new(1.0, 0.0);
        Self { n, amps }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|<self|other>|`, insensitive to global phase.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        self.inner(other).norm()
    }
}

// ---------------------------------------------------------------------------
// Instance file format
// ---------------------------------------------------------------------------

/// On-disk JSON form of an SK instance (upper-triangular couplings).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub id: String,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    #[serde(rename = "J")]
    pub couplings: Vec<(usize, usize, f64)>,
    pub h: Vec<f64>,
}

impl From<&IsingProblem> for InstanceFile {
    fn from(p: &IsingProblem) -> Self {
        let mut couplings = Vec::new();
        for a in 0..p.n {
            for b in (a + 1)..p.n {
                let v = p.coupling(a, b);
                if v != 0.0 {
                    couplings.push((a, b, v));
                }
            }
        }
        InstanceFile {
            id: p.meta.id.clone(),
            n: p.n,
            sigma: p.meta.sigma,
            seed: p.meta.seed,
            couplings,
            h: p.fields.clone(),
        }
    }
}

impl TryFrom<&InstanceFile> for IsingProblem {
    type Error = Error;

    fn try_from(f: &InstanceFile) -> Result<IsingProblem> {
        let n = f.n;
        let mut couplings = vec![0.0; n * n];
        for &(a, b, v) in &f.couplings {
            if a >= n || b >= n || a == b {
                return Err(Error::Config(format!("bad coupling index ({a}, {b})")));
            }
            couplings[a * n + b] = v;
            couplings[b * n + a] = v;
        }
        if f.h.len() != n {
            return Err(Error::Config(format!(
                "field vector length {} != n = {n}",
                f.h.len()
            )));
        }
        IsingProblem::new(
            n,
            couplings,
            f.h.clone(),
            InstanceMeta {
                id: f.id.clone(),
                seed: f.seed,
                sigma: f.sigma,
            },
        )
    }
}
