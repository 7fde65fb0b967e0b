//! Batch experiment harness: configuration parsing, deterministic instance
//! sweeps for the protocol experiments, scaling-exponent fits, and CSV/JSON
//! emission with a manifest that reproduces the run byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyncoeff::{average_dyn, dyn_lower_bound, scaled_gap_moments, SampleMode};
use crate::error::{Error, Result};
use crate::evolve::{
    check_energy_redistribution, evolve, time_averaged_success, EvolveOptions,
    Schedule,
};
use crate::heuristics::{default_bracket, gamma_dyn, heuristic_schedule};
use crate::ising::{make_sk_instance, Driver, IsingProblem, ProblemHamiltonian};
use crate::spectral::{default_s_grid, gap_scan};

/// Manifest schema version; bump on any incompatible change.
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Two-stage walk at `(gamma1, t1)` then `(gamma2, t2)`; final success.
    TwoStage,
    /// Walk with a driver biased toward the true optimum at angle theta.
    Biased,
    /// Pre-anneal duration sweep with per-duration scaling fits.
    PreannealScaling,
    /// Windowed success of a walk at the per-instance heuristic rate vs the
    /// per-instance grid-searched best rate.
    GammaDynScaling,
    /// Final success of the heuristic schedule vs the linear schedule.
    HeuristicVsLinear,
    /// Location of the coefficient peak vs the minimum spectral gap.
    GapVsDyn,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two-stage" => Ok(Self::TwoStage),
            "biased" => Ok(Self::Biased),
            "preanneal-scaling" => Ok(Self::PreannealScaling),
            "gamma-dyn-scaling" => Ok(Self::GammaDynScaling),
            "heuristic-vs-linear" => Ok(Self::HeuristicVsLinear),
            "gap-vs-dyn" => Ok(Self::GapVsDyn),
            other => Err(Error::Config(format!("unknown experiment kind '{other}'"))),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::TwoStage => "two-stage",
            Self::Biased => "biased",
            Self::PreannealScaling => "preanneal-scaling",
            Self::GammaDynScaling => "gamma-dyn-scaling",
            Self::HeuristicVsLinear => "heuristic-vs-linear",
            Self::GapVsDyn => "gap-vs-dyn",
        };
        f.write_str(s)
    }
}

/// Full description of a batch run. Serializable into the manifest; also
/// loadable from a flat `key = value` config file with flag overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Qubit counts to sweep.
    pub sizes: Vec<usize>,
    /// Instances per size.
    pub instances: usize,
    /// Base seed; per-instance seeds derive from it deterministically.
    pub seed: u64,
    /// Coupling/field scale of the generated instances.
    pub sigma: f64,
    /// Two-stage rates and durations.
    pub gamma1: f64,
    pub gamma2: f64,
    pub t1: f64,
    pub t2: f64,
    /// Bias angle for the biased-driver experiment.
    pub theta: f64,
    /// Total schedule duration (heuristic-vs-linear).
    pub t_f: f64,
    /// Heuristic-schedule increments.
    pub knots: usize,
    pub dyn_floor: f64,
    /// Success window is `[window_lo/sqrt(n), window_hi/sqrt(n)]`.
    pub window_lo: f64,
    pub window_hi: f64,
    /// Integrator tolerance.
    pub tol: f64,
    /// Pre-anneal sweep: durations `0..=t1_max` over `t1_steps` points.
    pub t1_max: f64,
    pub t1_steps: usize,
    /// Grid size for the per-instance best-rate search.
    pub gamma_grid: usize,
    /// Output stem: `<out>.csv`, `<out>_fits.csv`, `<out>_manifest.json`.
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::TwoStage,
            sizes: vec![5, 6, 7, 8, 9],
            instances: 100,
            seed: 1,
            sigma: 1.0,
            gamma1: 1.5,
            gamma2: 0.75,
            t1: 10.0,
            t2: 10.0,
            theta: std::f64::consts::FRAC_PI_4,
            t_f: 2.0,
            knots: 10,
            dyn_floor: 1e-3,
            window_lo: 12.5,
            window_hi: 17.5,
            tol: 1e-9,
            t1_max: 4.0,
            t1_steps: 21,
            gamma_grid: 20,
            out: PathBuf::from("experiment"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Config("sizes must be non-empty".into()));
        }
        if self.instances < 1 {
            return Err(Error::Config("instances must be >= 1".into()));
        }
        for &d in &[self.t1, self.t2, self.t_f] {
            if d < 0.0 {
                return Err(Error::NonpositiveDuration(d));
            }
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidSigma(self.sigma));
        }
        if !(self.window_lo < self.window_hi) {
            return Err(Error::Config("window_lo must be below window_hi".into()));
        }
        if self.t1_steps < 2 && self.experiment == ExperimentKind::PreannealScaling {
            return Err(Error::Config("t1_steps must be >= 2".into()));
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file (`#` comments allowed).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Apply one `key = value` override (same keys as the config file).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' for key '{key}'")))
        }
        match key {
            "experiment" => self.experiment = ExperimentKind::parse(value)?,
            "sizes" => {
                self.sizes = value
                    .split(',')
                    .map(|p| num::<usize>("sizes", p.trim()))
                    .collect::<Result<_>>()?
            }
            "instances" => self.instances = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "gamma1" => self.gamma1 = num(key, value)?,
            "gamma2" => self.gamma2 = num(key, value)?,
            "t1" => self.t1 = num(key, value)?,
            "t2" => self.t2 = num(key, value)?,
            "theta" => self.theta = num(key, value)?,
            "t_f" => self.t_f = num(key, value)?,
            "knots" => self.knots = num(key, value)?,
            "dyn_floor" => self.dyn_floor = num(key, value)?,
            "window_lo" => self.window_lo = num(key, value)?,
            "window_hi" => self.window_hi = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "t1_max" => self.t1_max = num(key, value)?,
            "t1_steps" => self.t1_steps = num(key, value)?,
            "gamma_grid" => self.gamma_grid = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }
}

/// Least-squares fit of `log2(p) = kappa n + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub kappa: f64,
    pub intercept: f64,
    pub kappa_stderr: f64,
    pub sizes: Vec<usize>,
    pub probs: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Fit the scaling exponent of `p ~ 2^{kappa n}` from per-size mean
/// probabilities. Requires at least 3 sizes and strictly positive values.
pub fn fit_kappa(sizes: &[usize], probs: &[f64]) -> Result<ScalingFit> {
    if sizes.len() != probs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sizes vs {} probabilities",
            sizes.len(),
            probs.len()
        )));
    }
    if sizes.len() < 3 {
        return Err(Error::TooFewSizes(3, sizes.len()));
    }
    for &p in probs {
        if !(p > 0.0) {
            return Err(Error::NonpositiveProbability(p));
        }
    }
    let m = sizes.len() as f64;
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = probs.iter().map(|p| p.log2()).collect();
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let kappa = sxy / sxx;
    let intercept = ybar - kappa * xbar;
    let residuals: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (kappa * x + intercept))
        .collect();
    let dof = (m - 2.0).max(1.0);
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof;
    Ok(ScalingFit {
        kappa,
        intercept,
        kappa_stderr: (s2 / sxx).sqrt(),
        sizes: sizes.to_vec(),
        probs: probs.to_vec(),
        residuals,
    })
}

/// Deterministic per-instance seed derived from the base seed.
pub fn instance_seed(base: u64, n: usize, index: usize) -> u64 {
    // splitmix64 finalizer over a unique (base, n, index) encoding
    let mut z = base
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((n as u64) << 32)
        .wrapping_add(index as u64 + 1);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// One failed instance inside a sweep; the sweep continues without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedInstance {
    pub n: usize,
    pub seed: u64,
    pub error: String,
}

/// Written next to every result CSV; embeds everything needed to reproduce
/// the run byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub library_version: String,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
    pub failed_instances: Vec<FailedInstance>,
    pub summary: BTreeMap<String, f64>,
}

/// Output of [`run_experiment`]: file names plus the manifest that was
/// written alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

/// Run one instance-level task for every (size, instance) pair in parallel,
/// then return results sorted by (n, seed) together with the failures.
fn sweep<T: Send, F>(config: &ExperimentConfig, task: F) -> (Vec<(usize, u64, T)>, Vec<FailedInstance>)
where
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    let jobs: Vec<(usize, u64)> = config
        .sizes
        .iter()
        .flat_map(|&n| (0..config.instances).map(move |i| (n, i)))
        .map(|(n, i)| (n, instance_seed(config.seed, n, i)))
        .collect();
    let results: Vec<(usize, u64, Result<T>)> = jobs
        .into_par_iter()
        .map(|(n, seed)| (n, seed, task(n, seed)))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (n, seed, r) in results {
        match r {
            Ok(t) => ok.push((n, seed, t)),
            Err(e) => failed.push(FailedInstance {
                n,
                seed,
                error: e.to_string(),
            }),
        }
    }
    ok.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    failed.sort_by(|a, b| (a.n, a.seed).cmp(&(b.n, b.seed)));
    (ok, failed)
}

/// Index of the true optimum (diagonal argmin) of an instance.
fn ground_index(problem: &IsingProblem) -> Result<u64> {
    let diag = problem.diagonal()?;
    Ok(diag
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(j, _)| j as u64)
        .unwrap() as u64)
}

/// Per-instance heuristic hopping rate (exact coefficient evaluation).
fn instance_gamma_dyn(problem: &IsingProblem, driver: &Driver) -> Result<f64> {
    let bracket = default_bracket(problem, driver, SampleMode::Exact)?;
    Ok(gamma_dyn(problem, driver, bracket, SampleMode::Exact, 1e-6)?.gamma_dyn)
}

/// Windowed mean success of a constant-rate walk.
fn walk_p_short(
    problem: &dyn ProblemHamiltonian,
    driver: &Driver,
    gamma: f64,
    window: (f64, f64),
    tol: f64,
) -> Result<f64> {
    let t_end = window.1;
    let schedule = Schedule::walk(gamma, t_end)?;
    let grid: Vec<f64> = (0..=256)
        .map(|i| window.0 + (window.1 - window.0) * i as f64 / 256.0)
        .collect();
    let traj = evolve(
        problem,
        driver,
        &schedule,
        &driver.ground_state(),
        &grid,
        EvolveOptions {
            tol,
            store_states: false,
        },
    )?;
    time_averaged_success(&traj, window)
}

/// Run the configured experiment, writing `<out>.csv`, possibly
/// `<out>_fits.csv`, and `<out>_manifest.json`. Deterministic given the
/// config, independent of thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let mut files = Vec::new();
    let mut summary = BTreeMap::new();
    let failed;
    let csv_path = config.out.with_extension("csv");

    match config.experiment {
        ExperimentKind::TwoStage => {
            let (rows, f) = sweep(config, |n, seed| {
                let problem = make_sk_instance(n, config.sigma, seed)?;
                let driver = Driver::transverse(n);
                let schedule =
                    Schedule::two_stage(config.gamma1, config.gamma2, config.t1, config.t2)?;
                let t_f = schedule.total_duration();
                let grid: Vec<f64> = (0..=100).map(|i| t_f * i as f64 / 100.0).collect();
                let traj = evolve(
                    &problem,
                    &driver,
                    &schedule,
                    &driver.ground_state(),
                    &grid,
                    EvolveOptions {
                        tol: config.tol,
                        store_states: false,
                    },
                )?;
                if schedule.monotone() {
                    check_energy_redistribution(&traj, 1e-6)?;
                }
                Ok(traj.samples.last().unwrap().p_success)
            });
            failed = f;
            let mut csv = String::from("n,seed,p_final\n");
            for (n, seed, p) in &rows {
                csv.push_str(&format!("{n},{seed},{}\n", fmt_f(*p)));
            }
            std::fs::write(&csv_path, csv)?;
            files.push(csv_path.to_string_lossy().into_owned());
            for &n in &config.sizes {
                let ps: Vec<f64> = rows
                    .iter()
                    .filter(|(rn, _, _)| *rn == n)
                    .map(|(_, _, p)| *p)
                    .collect();
                if !ps.is_empty() {
                    summary.insert(
                        format!("mean_p_final_n{n}"),
                        ps.iter().sum::<f64>() / ps.len() as f64,
                    );
                }
            }
        }
        ExperimentKind::Biased => {
            let (rows, f) = sweep(config, |n, seed| {
                let problem = make_sk_instance(n, config.sigma, seed)?;
                let optimum = ground_index(&problem)?;
                let driver = Driver::biased_toward(n, optimum, config.theta);
                let schedule =
                    Schedule::two_stage(config.gamma1, config.gamma2, config.t1, config.t2)?;
                let t_f = schedule.total_duration();
                let grid: Vec<f64> = (0..=100).map(|i| t_f * i as f64 / 100.0).collect();
                let traj = evolve(
                    &problem,
                    &driver,
                    &schedule,
                    &driver.ground_state(),
                    &grid,
                    EvolveOptions {
                        tol: config.tol,
                        store_states: false,
                    },
                )?;
                Ok(traj.samples.last().unwrap().p_success)
            });
            failed = f;
            let mut csv = String::from("n,seed,theta,p_final\n");
            for (n, seed, p) in &rows {
                csv.push_str(&format!("{n},{seed},{},{}\n", fmt_f(config.theta), fmt_f(*p)));
            }
            std::fs::write(&csv_path, csv)?;
            files.push(csv_path.to_string_lossy().into_owned());
        }
        ExperimentKind::PreannealScaling => {
            let t1s: Vec<f64> = (0..config.t1_steps)
                .map(|i| config.t1_max * i as f64 / (config.t1_steps - 1) as f64)
                .collect();
            let t1s_task = t1s.clone();
            let (rows, f) = sweep(config, move |n, seed| {
                let problem = make_sk_instance(n, config.sigma, seed)?;
                let driver = Driver::transverse(n);
                let gamma = instance_gamma_dyn(&problem, &driver)?;
                let (w_lo, w_hi) = (
                    config.window_lo / (n as f64).sqrt(),
                    config.window_hi / (n as f64).sqrt(),
                );
                let mut ps = Vec::with_capacity(t1s_task.len());
                for &t1 in &t1s_task {
                    let walk_len = w_hi + 1.0;
                    let schedule = Schedule::preanneal(gamma, t1, walk_len)?;
                    let window = (t1 + w_lo, t1 + w_hi);
                    let grid: Vec<f64> = (0..=256)
                        .map(|i| window.0 + (window.1 - window.0) * i as f64 / 256.0)
                        .collect();
                    let traj = evolve(
                        &problem,
                        &driver,
                        &schedule,
                        &driver.ground_state(),
                        &grid,
                        EvolveOptions {
                            tol: config.tol,
                            store_states: false,
                        },
                    )?;
                    ps.push(time_averaged_success(&traj, window)?);
                }
                Ok(ps)
            });
            failed = f;
            // per (t1, n) means
            let mut csv = String::from("t1,n,mean_p\n");
            let mut fits_csv = String::from("t1,kappa,kappa_stderr\n");
            let mut kappas: Vec<(f64, f64)> = Vec::new();
            for (ti, &t1) in t1s.iter().enumerate() {
                let mut means = Vec::new();
                for &n in &config.sizes {
                    let ps: Vec<f64> = rows
                        .iter()
                        .filter(|(rn, _, _)| *rn == n)
                        .map(|(_, _, ps)| ps[ti])
                        .collect();
                    let mean = ps.iter().sum::<f64>() / ps.len().max(1) as f64;
                    means.push(mean);
                    csv.push_str(&format!("{},{n},{}\n", fmt_f(t1), fmt_f(mean)));
                }
                if let Ok(fit) = fit_kappa(&config.sizes, &means) {
                    fits_csv.push_str(&format!(
                        "{},{},{}\n",
                        fmt_f(t1),
                        fmt_f(fit.kappa),
                        fmt_f(fit.kappa_stderr)
                    ));
                    kappas.push((t1, fit.kappa));
                }
            }
            std::fs::write(&csv_path, csv)?;
            files.push(csv_path.to_string_lossy().into_owned());
            let fits_path = config.out.with_file_name(format!(
                "{}_fits.csv",
                config.out.file_name().unwrap_or_default().to_string_lossy()
            ));
            std::fs::write(&fits_path, fits_csv)?;
            files.push(fits_path.to_string_lossy().into_owned());
            if let (Some(first), Some(last)) = (kappas.first(), kappas.last()) {
                summary.insert("kappa_t1_min".into(), first.1);
                summary.insert("kappa_t1_max".into(), last.1);
                summary.insert("kappa_improvement".into(), last.1 - first.1);
            }
        }
        ExperimentKind::GammaDynScaling => {
            let (rows, f) = sweep(config, |n, seed| {
                let problem = make_sk_instance(n, config.sigma, seed)?;
                let driver = Driver::transverse(n);
                let window = (
                    config.window_lo / (n as f64).sqrt(),
                    config.window_hi / (n as f64).sqrt(),
                );
                let g_dyn = instance_gamma_dyn(&problem, &driver)?;
                let p_dyn = walk_p_short(&problem, &driver, g_dyn, window, config.tol)?;
                // grid search around the heuristic scale
                let mut best = (g_dyn, p_dyn);
                for i in 0..config.gamma_grid {
                    let g = g_dyn * 0.25
                        + (g_dyn * 4.0 - g_dyn * 0.25) * i as f64
                            / (config.gamma_grid - 1).max(1) as f64;
                    let p = walk_p_short(&problem, &driver, g, window, config.tol)?;
                    if p > best.1 {
                        best = (g, p);
                    }
                }
                Ok((g_dyn, p_dyn, best.0, best.1))
            });
            failed = f;
            let mut csv = String::from("n,seed,gamma_dyn,p_short_dyn,gamma_best,p_short_best\n");
            for (n, seed, (gd, pd, gb, pb)) in &rows {
                csv.push_str(&format!(
                    "{n},{seed},{},{},{},{}\n",
                    fmt_f(*gd),
                    fmt_f(*pd),
                    fmt_f(*gb),
                    fmt_f(*pb)
                ));
            }
            std::fs::write(&csv_path, csv)?;
            files.push(csv_path.to_string_lossy().into_owned());
            for &n in &config.sizes {
                let sel: Vec<&(usize, u64, (f64, f64, f64, f64))> =
                    rows.iter().filter(|(rn, _, _)| *rn == n).collect();
                if sel.is_empty() {
                    continue;
                }
                let mean_dyn =
                    sel.iter().map(|(_, _, r)| r.1).sum::<f64>() / sel.len() as f64;
                let mean_best =
                    sel.iter().map(|(_, _, r)| r.3).sum::<f64>() / sel.len() as f64;
                summary.insert(format!("mean_p_short_dyn_n{n}"), mean_dyn);
                summary.insert(format!("mean_p_short_best_n{n}"), mean_best);
                summary.insert(format!("p_short_quality_n{n}"), mean_dyn / mean_best);
            }
        }
        ExperimentKind::HeuristicVsLinear => {
            let (rows, f) = sweep(config, |n, seed| {
                let problem = make_sk_instance(n, config.sigma, seed)?;
                let driver = Driver::transverse(n);
                let heuristic = heuristic_schedule(
                    &problem,
                    &driver,
                    config.t_f,
                    config.knots,
                    config.dyn_floor,
                    SampleMode::Exact,
                )?
                .to_schedule()?;
                let linear = Schedule::linear(config.t_f)?;
                let grid: Vec<f64> = (0..=100)
                    .map(|i| config.t_f * i as f64 / 100.0)
                    .collect();
                let opts = EvolveOptions {
                    tol: config.tol,
                    store_states: false,
                };
                let initial = driver.ground_state();
                let th = evolve(&problem, &driver, &heuristic, &initial, &grid, opts)?;
                if heuristic.monotone() {
                    check_energy_redistribution(&th, 1e-6)?;
                }
                let tl = evolve(&problem, &driver, &linear, &initial, &grid, opts)?;
                check_energy_redistribution(&tl, 1e-6)?;
                Ok((
                    th.samples.last().unwrap().p_success,
                    tl.samples.last().unwrap().p_success,
                ))
            });
            failed = f;
            let mut csv = String::from("n,seed,p_heuristic,p_linear,improved\n");
            let mut wins = 0usize;
            for (n, seed, (ph, pl)) in &rows {
                let improved = ph > pl;
                wins += improved as usize;
                csv.push_str(&format!(
                    "{n},{seed},{},{},{}\n",
                    fmt_f(*ph),
                    fmt_f(*pl),
                    improved as u8
                ));
            }
            std::fs::write(&csv_path, csv)?;
            files.push(csv_path.to_string_lossy().into_owned());
            if !rows.is_empty() {
                summary.insert("win_rate".into(), wins as f64 / rows.len() as f64);
            }
        }
        ExperimentKind::GapVsDyn => {
            let (rows, f) = sweep(config, |n, seed| {
                let problem = make_sk_instance(n, config.sigma, seed)?;
                let driver = Driver::transverse(n);
                let scan = gap_scan(&problem, &driver, &default_s_grid())?;
                Ok((scan.s_max_dyn, scan.s_min_gap))
            });
            failed = f;
            let mut csv = String::from("n,seed,s_max_dyn,s_min_gap,peak_before\n");
            let mut before = 0usize;
            for (n, seed, (smd, smg)) in &rows {
                let pb = smd < smg;
                before += pb as usize;
                csv.push_str(&format!(
                    "{n},{seed},{},{},{}\n",
                    fmt_f(*smd),
                    fmt_f(*smg),
                    pb as u8
                ));
            }
            std::fs::write(&csv_path, csv)?;
            files.push(csv_path.to_string_lossy().into_owned());
            if !rows.is_empty() {
                summary.insert(
                    "peak_before_rate".into(),
                    before as f64 / rows.len() as f64,
                );
            }
        }
    }

    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        files,
        failed_instances: failed,
        summary,
    };
    let manifest_path = config.out.with_file_name(format!(
        "{}_manifest.json",
        config.out.file_name().unwrap_or_default().to_string_lossy()
    ));
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(ExperimentOutput {
        manifest_path,
        manifest,
    })
}

/// Load the config embedded in a manifest (for byte-identical reruns).
pub fn config_from_manifest(path: &Path) -> Result<ExperimentConfig> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(manifest.config)
}

/// Rate sweep of the average dynamic coefficient with moment statistics and
/// the moment-ratio bound; CSV columns
/// `gamma,dyn_bar,dyn_bar_error,mu1,mu2,ratio,bound`.
pub fn dyn_scan_csv(
    problem: &dyn ProblemHamiltonian,
    driver: &Driver,
    gammas: &[f64],
    mode: SampleMode,
) -> Result<String> {
    let stats = scaled_gap_moments(problem, driver, mode)?;
    let (bound, _) = dyn_lower_bound(stats.ratio);
    let mut out = String::from("gamma,dyn_bar,dyn_bar_error,mu1,mu2,ratio,bound\n");
    for &g in gammas {
        let r = average_dyn(problem, driver, g, mode)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f(g),
            fmt_f(r.dyn_bar),
            fmt_f(r.dyn_bar_error),
            fmt_f(stats.mu1),
            fmt_f(stats.mu2),
            fmt_f(stats.ratio),
            fmt_f(bound)
        ));
    }
    Ok(out)
}
