//! End-to-end acceptance suite. Each test prints a single `criterion NN
//! [PASS|FAIL]` line (visible with `--nocapture` and on failure) and then
//! asserts its verdict.

mod common;

use rapidquench::bench::{instance_seed, run_experiment, ExperimentConfig, ExperimentKind};
use rapidquench::dyncoeff::{average_dyn, dyn_lower_bound, scaled_gap_moments, GapStats, SampleMode};
use rapidquench::evolve::{check_energy_redistribution, evolve, EvolveOptions, Schedule};
use rapidquench::heuristics::{default_bracket, gamma_dyn, heuristic_schedule};
use rapidquench::ising::{make_search_problem, make_sk_instance, make_two_qubit_problem, Driver};

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {id:02} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id:02} ({name}) failed: {detail}");
}

/// Maximize a unimodal function by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let g = 0.5 * (a + b);
    (g, f(g))
}

#[test]
fn criterion_01_two_qubit_closed_form() {
    let closed = |g: f64| {
        0.5 * g
            * (3.0 / (3.0 + 2.0 * g).powi(2)
                + 1.0 / (1.0 + 2.0 * g).powi(2)
                + 4.0 / (2.0 + 2.0 * g).powi(2))
    };
    let problem = make_two_qubit_problem();
    let driver = Driver::transverse(2);
    let mut max_diff = 0.0_f64;
    for i in 0..100 {
        let g = 0.05 + (5.0 - 0.05) * i as f64 / 99.0;
        let got = average_dyn(&problem, &driver, g, SampleMode::Exact)
            .unwrap()
            .dyn_bar;
        max_diff = max_diff.max((got - closed(g)).abs());
    }
    let (g_star, v_star) = golden_max(closed, 0.1, 5.0, 1e-10);
    let peak = gamma_dyn(&problem, &driver, (0.1, 10.0), SampleMode::Exact, 1e-9).unwrap();
    let pass = max_diff <= 1e-12
        && (peak.gamma_dyn - g_star).abs() <= 1e-3
        && (peak.dyn_bar_at_peak - v_star).abs() <= 1e-3
        && (g_star - 0.941).abs() <= 1e-3
        && (v_star - 0.241).abs() <= 1e-3;
    verdict(
        1,
        "two-qubit closed form",
        pass,
        &format!(
            "max |avg - closed| = {max_diff:.2e}; peak {v:.5} at gamma {g:.5} \
             (independent optimum {v_star:.5} at {g_star:.5})",
            v = peak.dyn_bar_at_peak,
            g = peak.gamma_dyn
        ),
    );
}

#[test]
fn criterion_02_two_qubit_gamma_dyn() {
    let problem = make_two_qubit_problem();
    let driver = Driver::transverse(2);
    let bracket = default_bracket(&problem, &driver, SampleMode::Exact).unwrap();
    let got = gamma_dyn(&problem, &driver, bracket, SampleMode::Exact, 1e-8)
        .unwrap()
        .gamma_dyn;
    let pass = (got - 0.864).abs() <= 1e-3;
    verdict(
        2,
        "two-qubit peak rate",
        pass,
        &format!("gamma_dyn = {got:.6}, expected 0.864 +/- 0.001"),
    );
}

#[test]
fn criterion_03_bound_curve() {
    let (b1, _) = dyn_lower_bound(0.125);
    let (b2, _) = dyn_lower_bound(0.571);
    let trivial = [1.0, 1.5, 10.0]
        .iter()
        .all(|&r| dyn_lower_bound(r).0 == 0.0);
    let p1 = (0.134..=0.136).contains(&b1);
    let p2 = (0.029..=0.032).contains(&b2);
    verdict(
        3,
        "bound curve",
        p1 && p2 && trivial,
        &format!(
            "bound(0.125) = {b1:.6} (want [0.134, 0.136]); bound(0.571) = {b2:.6} \
             (want [0.029, 0.032]); zero for ratio >= 1: {trivial}"
        ),
    );
}

#[test]
fn criterion_04_search_closed_form() {
    let mut pass = true;
    let mut detail = String::new();
    for n in 2..=10usize {
        let problem = make_search_problem(n, 0).unwrap();
        let driver = Driver::transverse(n);
        let avg = average_dyn(&problem, &driver, 1.0, SampleMode::Exact)
            .unwrap()
            .dyn_bar;
        let expect = (0.5_f64).powi(n as i32 + 1);
        let stats = scaled_gap_moments(&problem, &driver, SampleMode::Exact).unwrap();
        let ratio_expect = ((1u64 << (n - 1)) - 1) as f64;
        if avg != expect || stats.ratio != ratio_expect {
            pass = false;
            detail.push_str(&format!(
                "n={n}: avg {avg:e} vs {expect:e}, ratio {} vs {ratio_expect}; ",
                stats.ratio
            ));
        }
    }
    if pass {
        detail = "avg at rate 1 equals 2^-(n+1) and moment ratio equals 2^(n-1)-1 \
                  exactly for n = 2..10"
            .into();
    }
    verdict(4, "search closed form", pass, &detail);
}

#[test]
fn criterion_05_sk_moment_ratio() {
    let driver = Driver::transverse(10);
    let stats: Vec<GapStats> = (0..200)
        .map(|i| {
            let problem = make_sk_instance(10, 1.0, instance_seed(5, 10, i)).unwrap();
            scaled_gap_moments(&problem, &driver, SampleMode::Exact).unwrap()
        })
        .collect();
    let pooled = GapStats::pooled(&stats);
    let pass = (0.55..=0.60).contains(&pooled.ratio);
    verdict(
        5,
        "spin-glass moment ratio",
        pass,
        &format!(
            "pooled ratio = {:.4} over 200 instances at n = 10 (want [0.55, 0.60])",
            pooled.ratio
        ),
    );
}

#[test]
fn criterion_06_energy_redistribution() {
    let n = 8;
    let driver = Driver::transverse(n);
    let opts = EvolveOptions {
        tol: 1e-9,
        store_states: false,
    };
    let mut worst_drift = 0.0_f64;
    for i in 0..50usize {
        let problem = make_sk_instance(n, 1.0, instance_seed(6, n, i)).unwrap();
        let heuristic = heuristic_schedule(&problem, &driver, 2.0, 10, 1e-3, SampleMode::Exact)
            .unwrap()
            .to_schedule()
            .unwrap();
        let schedules = [
            Schedule::two_stage(1.5, 0.75, 2.0, 2.0).unwrap(),
            Schedule::preanneal(1.0, 1.0, 2.0).unwrap(),
            heuristic,
        ];
        for schedule in &schedules {
            assert!(schedule.monotone());
            let t_f = schedule.total_duration();
            let grid: Vec<f64> = (0..=40).map(|k| t_f * k as f64 / 40.0).collect();
            let traj = evolve(&problem, &driver, schedule, &driver.ground_state(), &grid, opts)
                .unwrap();
            check_energy_redistribution(&traj, 1e-6).unwrap();
        }
        // constant-rate segment: E_Gamma is conserved, not merely monotone
        let walk = Schedule::walk(1.0, 100.0).unwrap();
        let grid: Vec<f64> = (0..=10).map(|k| 10.0 * k as f64).collect();
        let traj =
            evolve(&problem, &driver, &walk, &driver.ground_state(), &grid, opts).unwrap();
        let e0 = traj.samples[0].e_gamma().unwrap();
        for s in &traj.samples {
            worst_drift = worst_drift.max((s.e_gamma().unwrap() - e0).abs());
        }
    }
    let pass = worst_drift <= 1e-8;
    verdict(
        6,
        "energy redistribution",
        pass,
        &format!(
            "50 instances x 3 monotone schedules satisfy the inequalities at 1e-6; \
             constant-rate drift of E_Gamma over t = 100 is {worst_drift:.2e} (want <= 1e-8)"
        ),
    );
}

#[test]
fn criterion_07_oracle_equivalence() {
    let opts = EvolveOptions {
        tol: 1e-10,
        store_states: false,
    };
    let mut min_fidelity = 1.0_f64;
    for i in 0..10usize {
        let n = 3 + i % 4;
        let problem = make_sk_instance(n, 1.0, instance_seed(7, n, i)).unwrap();
        let driver = Driver::transverse(n);
        let preanneal = Schedule::preanneal(1.0, 1.0, 1.5).unwrap();
        let schedules = [
            Schedule::two_stage(1.5, 0.75, 1.0, 1.0).unwrap(),
            preanneal.clone(),
            Schedule::walk(0.9, 2.0).unwrap(),
            Schedule::linear(2.0).unwrap(),
            preanneal.reversed(),
        ];
        for schedule in &schedules {
            let initial = driver.ground_state();
            let t_f = schedule.total_duration();
            let traj = evolve(&problem, &driver, schedule, &initial, &[t_f], opts).unwrap();
            let oracle = common::trotter_oracle(&problem, &driver, schedule, &initial, 100_000);
            min_fidelity = min_fidelity.min(traj.final_state.fidelity(&oracle));
        }
    }
    let pass = min_fidelity >= 1.0 - 1e-6;
    verdict(
        7,
        "oracle equivalence",
        pass,
        &format!(
            "min fidelity vs 1e5-step Trotter oracle = {min_fidelity:.12} over 10 instances \
             x 5 schedule kinds (want >= 1 - 1e-6)"
        ),
    );
}

#[test]
fn criterion_08_preanneal_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        experiment: ExperimentKind::PreannealScaling,
        sizes: vec![5, 6, 7, 8, 9],
        instances: 100,
        seed: 8,
        t1_max: 4.0,
        t1_steps: 5,
        out: dir.path().join("preanneal"),
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&config).unwrap();
    assert!(out.manifest.failed_instances.is_empty());
    let kappa0 = out.manifest.summary["kappa_t1_min"];
    let gain = out.manifest.summary["kappa_improvement"];
    let pass = gain >= 0.05 && (-0.50..=-0.35).contains(&kappa0);
    verdict(
        8,
        "pre-anneal scaling",
        pass,
        &format!(
            "kappa(t1=0) = {kappa0:.4} (want [-0.50, -0.35]); \
             kappa(t1=4) - kappa(t1=0) = {gain:.4} (want >= 0.05)"
        ),
    );
}

#[test]
fn criterion_09_gamma_dyn_walk_quality() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        experiment: ExperimentKind::GammaDynScaling,
        sizes: vec![9],
        instances: 100,
        seed: 9,
        gamma_grid: 20,
        out: dir.path().join("gdyn"),
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&config).unwrap();
    assert!(out.manifest.failed_instances.is_empty());
    let quality = out.manifest.summary["p_short_quality_n9"];
    let pass = quality >= 0.85;
    verdict(
        9,
        "peak-rate walk quality",
        pass,
        &format!(
            "mean windowed success at the heuristic rate is {quality:.4} of the \
             20-point grid-search best (want >= 0.85)"
        ),
    );
}

#[test]
fn criterion_10_heuristic_beats_linear() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        experiment: ExperimentKind::HeuristicVsLinear,
        sizes: vec![9],
        instances: 50,
        seed: 10,
        t_f: 2.0,
        knots: 10,
        out: dir.path().join("heur"),
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&config).unwrap();
    assert!(out.manifest.failed_instances.is_empty());
    let win_rate = out.manifest.summary["win_rate"];
    let pass = win_rate >= 0.60;
    verdict(
        10,
        "heuristic schedule beats linear",
        pass,
        &format!("heuristic wins on {:.0}% of 50 instances (want >= 60%)", win_rate * 100.0),
    );
}

#[test]
fn criterion_11_gap_vs_dyn_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        experiment: ExperimentKind::GapVsDyn,
        sizes: vec![9],
        instances: 50,
        seed: 11,
        out: dir.path().join("gap"),
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&config).unwrap();
    assert!(out.manifest.failed_instances.is_empty());
    let rate = out.manifest.summary["peak_before_rate"];
    let pass = rate >= 0.60;
    verdict(
        11,
        "coefficient peak precedes minimum gap",
        pass,
        &format!(
            "peak of the average coefficient precedes the minimum gap on {:.0}% \
             of 50 instances (want >= 60%)",
            rate * 100.0
        ),
    );
}

#[test]
fn criterion_12_sampled_error() {
    let n_samples = 1_000_000u64;
    let limit = 3.0 * 0.25 / (n_samples as f64).sqrt();
    let driver = Driver::transverse(12);
    let mut within = 0;
    let total = 20;
    let mut worst = 0.0_f64;
    for i in 0..total {
        let problem = make_sk_instance(12, 1.0, instance_seed(12, 12, i)).unwrap();
        let exact = average_dyn(&problem, &driver, 1.0, SampleMode::Exact)
            .unwrap()
            .dyn_bar;
        let sampled = average_dyn(
            &problem,
            &driver,
            1.0,
            SampleMode::Sampled {
                n_samples,
                seed: 1000 + i as u64,
            },
        )
        .unwrap()
        .dyn_bar;
        let diff = (sampled - exact).abs();
        worst = worst.max(diff);
        if diff <= limit {
            within += 1;
        }
    }
    let pass = within as f64 >= 0.95 * total as f64;
    verdict(
        12,
        "sampled estimator error",
        pass,
        &format!(
            "{within}/{total} instances within 3 sigma = {limit:.2e} (worst |diff| = {worst:.2e})"
        ),
    );
}
