//! Control-setting heuristics: the hopping rate that maximizes the average
//! dynamic coefficient, its sampling-error estimate, and an annealing
//! schedule that spends time where the average dynamic coefficient is small
//! (`ds/dt` proportional to the coefficient).

use serde::{Deserialize, Serialize};

use crate::dyncoeff::{average_dyn, scaled_gap_moments, SampleMode};
use crate::error::{Error, Result};
use crate::evolve::Schedule;
use crate::ising::{Driver, ProblemHamiltonian};

/// Derivatives below this magnitude count as zero when validating brackets.
const FLAT_EPS: f64 = 1e-14;

/// Result of the hopping-rate search.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaDynResult {
    /// Rate maximizing the average dynamic coefficient.
    pub gamma_dyn: f64,
    pub dyn_bar_at_peak: f64,
    /// Numerical second derivative of the average at the peak (<= 0).
    pub curvature: f64,
    /// Sampling-error estimate for the peak location (sampled mode only).
    pub delta_gamma_estimate: Option<f64>,
}

/// Default search bracket `(1e-3 mu1, 1e3 mu1)` around the scale where the
/// coefficient peaks (`zeta` of order the hopping rate).
pub fn default_bracket(
    problem: &dyn ProblemHamiltonian,
    driver: &Driver,
    mode: SampleMode,
) -> Result<(f64, f64)> {
    let stats = scaled_gap_moments(problem, driver, mode)?;
    if stats.is_degenerate() {
        return Err(Error::FlatLandscape);
    }
    Ok((1e-3 * stats.mu1, 1e3 * stats.mu1))
}

/// Find the hopping rate maximizing the average dynamic coefficient by
/// bisection on a central-difference derivative (step `max(1e-6, 1e-6 g)`).
/// The bracket must satisfy `d/dg > 0` at the left edge; the right edge is
/// doubled up to 2^10 times its initial value until the derivative there is
/// negative.
pub fn gamma_dyn(
    problem: &dyn ProblemHamiltonian,
    driver: &Driver,
    bracket: (f64, f64),
    mode: SampleMode,
    tol: f64,
) -> Result<GammaDynResult> {
    let (lo0, hi0) = bracket;
    if !(0.0 < lo0 && lo0 < hi0) {
        return Err(Error::BracketInvalid(lo0, hi0));
    }
    let dyn_bar = |g: f64| -> Result<f64> { Ok(average_dyn(problem, driver, g, mode)?.dyn_bar) };
    let deriv = |g: f64| -> Result<f64> {
        let h = (1e-6 * g).max(1e-6);
        Ok((dyn_bar(g + h)? - dyn_bar((g - h).max(0.0))?) / (2.0 * h))
    };

    let d_lo = deriv(lo0)?;
    let mut hi = hi0;
    let mut d_hi = deriv(hi)?;
    let mut doublings = 0;
    while d_hi >= 0.0 && doublings < 10 {
        hi *= 2.0;
        d_hi = deriv(hi)?;
        doublings += 1;
    }
    if d_lo.abs() < FLAT_EPS && d_hi.abs() < FLAT_EPS {
        return Err(Error::FlatLandscape);
    }
    if !(d_lo > 0.0 && d_hi < 0.0) {
        return Err(Error::BracketInvalid(lo0, hi));
    }

    let mut lo = lo0;
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        let d = deriv(mid)?;
        if d > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    let peak = dyn_bar(g)?;
    let hc = (1e-4 * g).max(1e-4);
    let curvature = (dyn_bar(g + hc)? - 2.0 * peak + dyn_bar(g - hc)?) / (hc * hc);
    let delta_gamma_estimate = match mode {
        SampleMode::Sampled { n_samples, .. } if curvature < 0.0 => {
            Some(gamma_sampling_error(curvature, n_samples)?)
        }
        _ => None,
    };
    Ok(GammaDynResult {
        gamma_dyn: g,
        dyn_bar_at_peak: peak,
        curvature,
        delta_gamma_estimate,
    })
}

/// Order-of-magnitude estimate of the peak-location error from sampling
/// noise: `(0.25/sqrt(N))^{1/2} (-curvature)^{-1/2}`.
pub fn gamma_sampling_error(curvature: f64, n_samples: u64) -> Result<f64> {
    if curvature >= 0.0 {
        return Err(Error::NonnegativeCurvature(curvature));
    }
    assert!(n_samples >= 1);
    Ok((0.25 / (n_samples as f64).sqrt()).sqrt() / (-curvature).sqrt())
}

/// Annealing schedule knots with `A = 1 - s`, `B = s` and linear
/// interpolation between knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicSchedule {
    /// Knot times, uniform on `[0, t_f]`.
    pub t: Vec<f64>,
    /// Knot schedule values; `s[0] = 0`, `s[M] = 1`, strictly increasing.
    pub s: Vec<f64>,
    /// Average dynamic coefficient used for each increment (floor applied).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub dyn_bars: Vec<f64>,
    /// Whether the fixed-point construction met its movement tolerance.
    #[serde(default = "default_true")]
    pub converged: bool,
}

fn default_true() -> bool {
    true
}

impl HeuristicSchedule {
    pub fn knots(&self) -> Vec<(f64, f64)> {
        self.t.iter().copied().zip(self.s.iter().copied()).collect()
    }

    /// Convert to an integrable schedule (piecewise linear in `s`).
    pub fn to_schedule(&self) -> Result<Schedule> {
        Schedule::piecewise_linear_s(&self.knots())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let sched: Self = serde_json::from_str(json)?;
        if sched.t.len() != sched.s.len() || sched.t.len() < 2 {
            return Err(Error::Config("knot lists must have equal length >= 2".into()));
        }
        Ok(sched)
    }
}

/// Build the heuristic schedule: uniform time knots, with schedule increments
/// proportional to the clamped average dynamic coefficient evaluated at the
/// midpoint of each increment (rate `(1 - s)/s`), solved by fixed-point
/// iteration starting from the linear schedule.
pub fn heuristic_schedule(
    problem: &dyn ProblemHamiltonian,
    driver: &Driver,
    t_f: f64,
    m_knots: usize,
    dyn_floor: f64,
    mode: SampleMode,
) -> Result<HeuristicSchedule> {
    let dyn_fn = |s: f64| -> Result<f64> {
        let gamma = (1.0 - s) / s;
        Ok(average_dyn(problem, driver, gamma, mode)?.dyn_bar)
    };
    heuristic_schedule_with(&dyn_fn, t_f, m_knots, dyn_floor)
}

/// Schedule construction over an arbitrary `s -> average coefficient` map
/// (separated out so tests can inject synthetic landscapes).
pub fn heuristic_schedule_with(
    dyn_fn: &dyn Fn(f64) -> Result<f64>,
    t_f: f64,
    m_knots: usize,
    dyn_floor: f64,
) -> Result<HeuristicSchedule> {
    if m_knots < 3 {
        return Err(Error::Config(format!(
            "need at least 3 schedule increments, got {m_knots}"
        )));
    }
    if !(t_f > 0.0) {
        return Err(Error::NonpositiveDuration(t_f));
    }
    if !(dyn_floor > 0.0) {
        return Err(Error::Config(format!(
            "coefficient floor must be positive, got {dyn_floor}"
        )));
    }
    let m = m_knots;
    let t: Vec<f64> = (0..=m).map(|i| t_f * i as f64 / m as f64).collect();
    let mut s: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
    let mut dyn_bars = vec![0.0; m];
    let mut converged = false;

    for _ in 0..50 {
        // ds/dt ~ 1/coefficient: advance slowly where the coefficient is
        // large (energy actively redistributing) and sweep quickly where it
        // is small. The floor keeps the weights finite at the endpoints,
        // where the coefficient vanishes. Weights are evaluated at each
        // increment's s-midpoint so a flat landscape reproduces the linear
        // schedule exactly.
        let mut weights = vec![0.0; m];
        for i in 0..m {
            let mid = 0.5 * (s[i] + s[i + 1]);
            let v = dyn_fn(mid)?.max(dyn_floor);
            dyn_bars[i] = v;
            weights[i] = 1.0 / v;
        }
        let total: f64 = weights.iter().sum();
        let mut new_s = Vec::with_capacity(m + 1);
        new_s.push(0.0);
        let mut acc = 0.0;
        for w in &weights[..m - 1] {
            acc += w / total;
            new_s.push(acc);
        }
        new_s.push(1.0);
        let movement = s
            .iter()
            .zip(&new_s)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        s = new_s;
        if movement < 1e-6 {
            converged = true;
            break;
        }
    }

    debug_assert!(s.windows(2).all(|w| w[1] > w[0]));
    Ok(HeuristicSchedule {
        t,
        s,
        dyn_bars,
        converged,
    })
}

/// Mean success probability of a constant-rate walk over `[0, t_max]`,
/// estimated from `n_times` uniformly random sample times.
pub fn mean_success_over_time(
    problem: &dyn ProblemHamiltonian,
    driver: &Driver,
    gamma: f64,
    t_max: f64,
    n_times: usize,
    seed: u64,
) -> Result<f64> {
    use rand::Rng;
    let mut rng = crate::ising::seeded_rng(seed);
    let mut grid: Vec<f64> = (0..n_times).map(|_| rng.gen_range(0.0..t_max)).collect();
    grid.sort_by(f64::total_cmp);
    let schedule = Schedule::walk(gamma, t_max)?;
    let traj = crate::evolve::evolve(
        problem,
        driver,
        &schedule,
        &driver.ground_state(),
        &grid,
        crate::evolve::EvolveOptions::default(),
    )?;
    Ok(traj.samples.iter().map(|s| s.p_success).sum::<f64>() / traj.samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ising::{make_search_problem, make_sk_instance, make_two_qubit_problem};
    use approx::assert_abs_diff_eq;

    #[test]
    fn search_peak_is_at_unit_rate() {
        // coefficient is 2^{1-n} x/(1+x)^2 with x = 1/rate: peak at rate 1
        let problem = make_search_problem(3, 5).unwrap();
        let driver = Driver::transverse(3);
        let r = gamma_dyn(&problem, &driver, (0.1, 10.0), SampleMode::Exact, 1e-8).unwrap();
        assert_abs_diff_eq!(r.gamma_dyn, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.dyn_bar_at_peak, 0.25 / 4.0, epsilon = 1e-12);
        assert!(r.curvature < 0.0);
        assert!(r.delta_gamma_estimate.is_none());
    }

    #[test]
    fn two_qubit_peak_location_and_argmax_property() {
        let problem = make_two_qubit_problem();
        let driver = Driver::transverse(2);
        let r = gamma_dyn(&problem, &driver, (0.1, 10.0), SampleMode::Exact, 1e-9).unwrap();
        // peak of the exact closed-form average: ~0.241 at rate ~0.941
        assert_abs_diff_eq!(r.gamma_dyn, 0.941, epsilon = 1e-3);
        assert_abs_diff_eq!(r.dyn_bar_at_peak, 0.241, epsilon = 1e-3);
        // argmax on a dense grid over the bracket
        for i in 1..=1000 {
            let g = 0.1 + (10.0 - 0.1) * i as f64 / 1000.0;
            let v = average_dyn(&problem, &driver, g, SampleMode::Exact)
                .unwrap()
                .dyn_bar;
            assert!(r.dyn_bar_at_peak >= v - 1e-9, "grid beat peak at {g}");
        }
    }

    #[test]
    fn bracket_expansion_and_failures() {
        let problem = make_two_qubit_problem();
        let driver = Driver::transverse(2);
        // right edge initially left of the peak: expansion must rescue it
        let r = gamma_dyn(&problem, &driver, (0.01, 0.02), SampleMode::Exact, 1e-7).unwrap();
        assert_abs_diff_eq!(r.gamma_dyn, 0.941, epsilon = 1e-3);
        // bracket entirely right of the peak: derivative at left edge < 0
        assert!(matches!(
            gamma_dyn(&problem, &driver, (5.0, 10.0), SampleMode::Exact, 1e-7),
            Err(Error::BracketInvalid(_, _))
        ));
        // degenerate problem: coefficient identically zero
        let flat = crate::ising::DiagonalProblem::new(3, vec![1.0; 8]).unwrap();
        assert!(matches!(
            gamma_dyn(&flat, &Driver::transverse(3), (0.1, 10.0), SampleMode::Exact, 1e-7),
            Err(Error::FlatLandscape)
        ));
        assert!(matches!(
            default_bracket(&flat, &Driver::transverse(3), SampleMode::Exact),
            Err(Error::FlatLandscape)
        ));
    }

    #[test]
    fn default_bracket_contains_peak() {
        let problem = make_two_qubit_problem();
        let driver = Driver::transverse(2);
        let (lo, hi) = default_bracket(&problem, &driver, SampleMode::Exact).unwrap();
        assert_abs_diff_eq!(lo, 1e-3, epsilon = 1e-15); // mu1 = 1
        assert_abs_diff_eq!(hi, 1e3, epsilon = 1e-9);
        let r = gamma_dyn(&problem, &driver, (lo, hi), SampleMode::Exact, 1e-8).unwrap();
        assert_abs_diff_eq!(r.gamma_dyn, 0.941, epsilon = 1e-3);
    }

    #[test]
    fn sampling_error_scalings() {
        // fixed curvature: 16x more samples halves the estimate
        let e1 = gamma_sampling_error(-2.0, 1000).unwrap();
        let e2 = gamma_sampling_error(-2.0, 16_000).unwrap();
        assert_abs_diff_eq!(e1 / e2, 2.0, epsilon = 1e-12);
        // arithmetic check
        assert_abs_diff_eq!(gamma_sampling_error(-1.0, 16).unwrap(), 0.25, epsilon = 1e-15);
        assert!(matches!(
            gamma_sampling_error(0.5, 100),
            Err(Error::NonnegativeCurvature(_))
        ));
    }

    #[test]
    fn sampled_mode_is_deterministic() {
        let problem = make_sk_instance(8, 1.0, 44).unwrap();
        let driver = Driver::transverse(8);
        let mode = SampleMode::Sampled {
            n_samples: 20_000,
            seed: 9,
        };
        let a = gamma_dyn(&problem, &driver, (0.05, 20.0), mode, 1e-4).unwrap();
        let b = gamma_dyn(&problem, &driver, (0.05, 20.0), mode, 1e-4).unwrap();
        assert_eq!(a, b);
        assert!(a.delta_gamma_estimate.unwrap() > 0.0);
        // close to the exact-mode peak
        let exact = gamma_dyn(&problem, &driver, (0.05, 20.0), SampleMode::Exact, 1e-6).unwrap();
        assert!(
            (a.gamma_dyn - exact.gamma_dyn).abs()
                < 10.0 * a.delta_gamma_estimate.unwrap().max(0.05),
            "sampled {} vs exact {}",
            a.gamma_dyn,
            exact.gamma_dyn
        );
    }

    #[test]
    fn flat_landscape_gives_linear_schedule() {
        let flat = |_s: f64| -> Result<f64> { Ok(0.2) };
        let sched = heuristic_schedule_with(&flat, 2.0, 10, 1e-3).unwrap();
        assert!(sched.converged);
        for (i, &s) in sched.s.iter().enumerate() {
            assert_abs_diff_eq!(s, i as f64 / 10.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn schedule_slows_down_where_coefficient_peaks() {
        // coefficient peaked at s = 0.5: the schedule must advance slowest
        // there (smallest s-increment) and fastest at the flat edges
        let peaked = |s: f64| -> Result<f64> { Ok(0.01 + (-50.0 * (s - 0.5).powi(2)).exp()) };
        let sched = heuristic_schedule_with(&peaked, 2.0, 10, 1e-3).unwrap();
        assert!(sched.converged);
        let increments: Vec<f64> = sched.s.windows(2).map(|w| w[1] - w[0]).collect();
        let (min_i, _) = increments
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let mid = 0.5 * (sched.s[min_i] + sched.s[min_i + 1]);
        assert!(
            (mid - 0.5).abs() < 0.1,
            "slowest increment at s = {mid}, expected near the peak 0.5"
        );
        assert!(increments[min_i] < increments[0]);
        assert!(increments[min_i] < *increments.last().unwrap());
    }

    #[test]
    fn schedule_construction_invariants() {
        let problem = make_sk_instance(7, 1.0, 3).unwrap();
        let driver = Driver::transverse(7);
        let sched =
            heuristic_schedule(&problem, &driver, 2.0, 10, 1e-3, SampleMode::Exact).unwrap();
        assert_eq!(sched.t.len(), 11);
        assert_eq!(sched.s.len(), 11);
        assert_eq!(sched.s[0], 0.0);
        assert_eq!(sched.s[10], 1.0);
        assert!(sched.s.windows(2).all(|w| w[1] > w[0]));
        assert_abs_diff_eq!(sched.t[10], 2.0, epsilon = 1e-15);
        // uniform time knots
        for i in 0..=10 {
            assert_abs_diff_eq!(sched.t[i], 0.2 * i as f64, epsilon = 1e-12);
        }
        // the induced control schedule is monotone in the hopping rate
        let control = sched.to_schedule().unwrap();
        assert!(control.monotone());
        // determinism
        let again =
            heuristic_schedule(&problem, &driver, 2.0, 10, 1e-3, SampleMode::Exact).unwrap();
        assert_eq!(sched, again);
        // serialization round trip
        let json = sched.to_json().unwrap();
        assert!(json.contains("\"t\""));
        assert!(json.contains("\"s\""));
        let back = HeuristicSchedule::from_json(&json).unwrap();
        assert_eq!(back.t, sched.t);
        assert_eq!(back.s, sched.s);
    }

    #[test]
    fn schedule_argument_validation() {
        let flat = |_s: f64| -> Result<f64> { Ok(0.2) };
        assert!(heuristic_schedule_with(&flat, 2.0, 2, 1e-3).is_err());
        assert!(heuristic_schedule_with(&flat, 0.0, 10, 1e-3).is_err());
        assert!(heuristic_schedule_with(&flat, 2.0, 10, 0.0).is_err());
    }

    #[test]
    fn mean_success_sanity() {
        // rate far off-resonance barely moves the state off the uniform start
        let problem = make_two_qubit_problem();
        let driver = Driver::transverse(2);
        let far = mean_success_over_time(&problem, &driver, 100.0, 20.0, 500, 1).unwrap();
        assert!((far - 0.25).abs() < 0.02, "far-detuned mean {far}");
        // near the peak rate the mean is well above the uniform baseline
        let near = mean_success_over_time(&problem, &driver, 0.941, 20.0, 500, 1).unwrap();
        assert!(near > 0.4, "near-peak mean {near}");
    }
}
