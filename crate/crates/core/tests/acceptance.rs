//! Acceptance checks. Prints one `PASS`/`FAIL` line per criterion (with
//! indented detail lines) and exits nonzero when any criterion fails.
//!
//! Run with `cargo test --release -p coexsim --test acceptance`.

mod support;

use std::process::ExitCode;
use std::time::Instant;

use coexsim::allocation::{dual_decomposition, fast_allocate, solve_centralized, DualOptions, RewardMatrix};
use coexsim::deflection::{
    filter_moments, is_stable, lyapunov_residual, snr_sweep, solve_lyapunov, theoretical_deflection, McOptions,
    StaticDiffusionModel, VarianceMethod, LYAPUNOV_RESIDUAL_TOL,
};
use coexsim::harness::{
    aggregate, build_realization, case_study, case_study_base, deflection_scenario, deflection_snr_grid, monte_carlo, scenario_deflection,
    scheduler_gap_study, scheme_rewards, small_sensing_scenario, AggregateRow, Arm, GapStudyOptions, OperationMode, ScenarioInputs,
    DEFLECTION_NOISE_POWER, DEFLECTION_STEPS,
};
use coexsim::model::DeploymentKind;
use coexsim::sensing::{run_scheme, DecisionMap, Scheme};
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEED: u64 = 20240501;

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            pass: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.details.push(format!("     {line}"));
    }
}

fn error_outcome(e: impl std::fmt::Display) -> Outcome {
    let mut o = Outcome::new();
    o.check(false, format!("error: {e}"));
    o
}

fn scheduler_gap() -> Outcome {
    let opts = GapStudyOptions::default();
    let rows = match scheduler_gap_study(&opts, SEED) {
        Ok(r) => r,
        Err(e) => return error_outcome(e),
    };
    let n = rows.len() as f64;
    let within = |f: &dyn Fn(&coexsim::harness::GapRow) -> f64| rows.iter().filter(|r| f(r) <= 1.05).count() as f64 / n;
    let mean = |f: &dyn Fn(&coexsim::harness::GapRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mut o = Outcome::new();
    o.note(format!(
        "{} instances, K={}, L={}, area {} m; exact proven optimal on {}",
        rows.len(),
        opts.num_bs,
        opts.num_bands,
        opts.area_m,
        rows.iter().filter(|r| r.exact_proven).count()
    ));
    let h = within(&|r| r.heuristic_ratio());
    let l = within(&|r| r.lp_ratio());
    o.check(h >= 0.9, format!("heuristic within 5% of exact on {:.0}% of instances (need >= 90%)", 100.0 * h));
    o.check(l >= 0.9, format!("LP-rounded within 5% of exact on {:.0}% of instances (need >= 90%)", 100.0 * l));
    let (mh, ml, mr) = (mean(&|r| r.heuristic), mean(&|r| r.lp_rounded), mean(&|r| r.random));
    o.check(
        mr > mh && mr > ml,
        format!("mean objective: random {mr:.1} vs heuristic {mh:.1}, LP-rounded {ml:.1} (random must be larger)"),
    );
    o
}

fn filter_moment_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let m = match filter_moments(DEFLECTION_NOISE_POWER, 0.95, 100_000, &mut rng) {
        Ok(m) => m,
        Err(e) => return error_outcome(e),
    };
    let mut o = Outcome::new();
    o.check(
        (0.99..=1.01).contains(&m.mean_ratio),
        format!("mean(d)/mean(Y) = {:.4} (need [0.99, 1.01])", m.mean_ratio),
    );
    let rel = m.variance_ratio / m.expected_variance_ratio - 1.0;
    o.check(
        rel.abs() <= 0.10,
        format!(
            "var(d)/var(Y) = {:.5} vs {:.5} ({:+.1}%, need within 10%)",
            m.variance_ratio,
            m.expected_variance_ratio,
            100.0 * rel
        ),
    );
    o
}

fn deflection_theory_vs_mc() -> Outcome {
    let base = match StaticDiffusionModel::grid(3, DEFLECTION_STEPS[0], DEFLECTION_NOISE_POWER, 0.0, 0.95) {
        Ok(b) => b,
        Err(e) => return error_outcome(e),
    };
    let snrs = deflection_snr_grid();
    let mc = McOptions {
        seed: SEED,
        ..McOptions::default()
    };
    let rows = match snr_sweep(&base, &DEFLECTION_STEPS, &snrs, VarianceMethod::Expansion, &mc) {
        Ok(r) => r,
        Err(e) => return error_outcome(e),
    };
    let mut o = Outcome::new();
    o.note(format!(
        "{} chains x {} samples per hypothesis and step; theory = series expansion",
        mc.chains, mc.samples_per_chain
    ));
    let mut worst = 0.0f64;
    for r in &rows {
        let rel = (r.delta_theory - r.delta_mc) / r.delta_mc;
        worst = worst.max(rel.abs());
        let model = base
            .with_step(r.step)
            .with_signal_power(DEFLECTION_NOISE_POWER * 10f64.powf(r.snr_db / 10.0));
        let joint = theoretical_deflection(&model, VarianceMethod::JointMoments).map(|t| t.delta());
        let joint = joint.map_or_else(|e| format!("error {e}"), |j| format!("{:+.1}%", 100.0 * (j / r.delta_mc - 1.0)));
        o.check(
            rel.abs() <= 0.10,
            format!(
                "mu {:<5} SNR {:>4} dB: theory {:.4} MC {:.4} ({:+.1}%; exact joint moments {joint})",
                r.step,
                r.snr_db,
                r.delta_theory,
                r.delta_mc,
                100.0 * rel
            ),
        );
    }
    o.note(format!("largest theory/MC gap {:.1}% (need <= 10%)", 100.0 * worst));
    for &snr in &snrs {
        let at = |mu: f64| rows.iter().find(|r| r.step == mu && r.snr_db == snr).unwrap();
        let (slow, fast) = (at(0.01), at(0.1));
        let ed = slow.delta_ed;
        o.check(
            slow.delta_mc > fast.delta_mc && fast.delta_mc > ed && slow.delta_theory > fast.delta_theory && fast.delta_theory > ed,
            format!(
                "SNR {snr:>4} dB ordering: mu 0.01 {:.3} > mu 0.1 {:.3} > energy detector {:.3}",
                slow.delta_mc, fast.delta_mc, ed
            ),
        );
    }
    o
}

fn deflection_per_bs() -> Outcome {
    let rows = match scenario_deflection(&deflection_scenario(), &ScenarioInputs::default(), 1000, SEED) {
        Ok(r) => r,
        Err(e) => return error_outcome(e),
    };
    let mut o = Outcome::new();
    o.note("BSs ranked by distance to the incumbent (1 = nearest), 1000 realizations".into());
    for r in &rows {
        o.check(
            r.delta_w > r.delta_y,
            format!("rank {}: deflection of w {:.3} vs raw energy {:.3}", r.rank, r.delta_w, r.delta_y),
        );
    }
    o
}

fn lyapunov_check() -> Outcome {
    const K: usize = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut o = Outcome::new();
    let (mut worst, mut tried, mut failures) = (0.0f64, 0usize, 0usize);
    let mut solved = 0;
    while solved < 100 {
        tried += 1;
        // alternate norm-bounded matrices with rejection-sampled ones whose
        // spectral radius may be close to 1 while their norm exceeds it
        let scale = if solved % 2 == 0 { rng.random_range(0.05..0.9) / 3.0 } else { rng.random_range(0.3..0.6) };
        let b: Vec<f64> = (0..K * K).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        if !is_stable(&b, K) {
            continue;
        }
        solved += 1;
        match solve_lyapunov(&b, K) {
            Ok(s) => worst = worst.max(lyapunov_residual(&b, &s, K)),
            Err(_) => failures += 1,
        }
    }
    o.note(format!("{solved} stable 9x9 matrices ({tried} drawn)"));
    o.check(failures == 0, format!("{failures} solver failures"));
    o.check(
        worst <= LYAPUNOV_RESIDUAL_TOL,
        format!("largest residual max|S - B S B^T - I| = {worst:.2e} (need <= 1e-10)"),
    );
    o
}

/// Ten randomly placed BSs sharing one channel with a single active access
/// point; rewards and availability come from distributed wideband sensing.
fn ten_bs_fixture() -> coexsim::Result<(RewardMatrix, DecisionMap, Vec<Vec<usize>>)> {
    let mut s = deflection_scenario();
    s.deployment.kind = DeploymentKind::Random;
    s.deployment.num_bs = 10;
    let real = build_realization(&s, &ScenarioInputs::default(), SEED, 0)?;
    let outcome = run_scheme(&real.context(&s), Scheme::DistributedWideband)?;
    let rewards = scheme_rewards(&outcome, real.tau_mw)?;
    Ok((rewards, outcome.decisions, real.neighbors))
}

fn allocation_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut o = Outcome::new();
    let (mut ratio_sum, mut feasible, mut stable, mut exact_hits) = (0.0, 0, 0, 0);
    let n = 200;
    for _ in 0..n {
        let k_n = rng.random_range(2..=12);
        let m_n = rng.random_range(1..=4);
        let pos: Vec<(f64, f64)> = (0..k_n).map(|_| (rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0))).collect();
        let radius = rng.random_range(150.0..500.0);
        let neighbors: Vec<Vec<usize>> = (0..k_n)
            .map(|k| (0..k_n).filter(|&j| (pos[k].0 - pos[j].0).hypot(pos[k].1 - pos[j].1) <= radius).collect())
            .collect();
        let rewards: Vec<f64> = (0..k_n * m_n).map(|_| rng.random_range(-5.0..25.0)).collect();
        let avail = DecisionMap::new(k_n, m_n, (0..k_n * m_n).map(|_| rng.random_bool(0.8)).collect());
        let rewards = RewardMatrix::new(k_n, m_n, rewards).unwrap();
        let (central, fast) = match (
            solve_centralized(&rewards, &avail, &neighbors),
            fast_allocate(&rewards, &avail, &neighbors, 10),
        ) {
            (Ok(c), Ok(f)) => (c, f),
            (Err(e), _) | (_, Err(e)) => return error_outcome(e),
        };
        let (uc, uf) = (central.utility(&rewards), fast.utility(&rewards));
        ratio_sum += if uc > 0.0 { uf / uc } else { 1.0 };
        exact_hits += usize::from((uf - uc).abs() <= 1e-9 * uc.max(1.0));
        feasible += usize::from(fast.grants.is_feasible(&neighbors, &avail));
        stable += usize::from(fast.converged && fast.converged_iteration <= 10);
    }
    let mean_ratio = ratio_sum / n as f64;
    o.note(format!("{n} instances with K <= 12, M <= 4; fast matched the optimum exactly on {exact_hits}"));
    o.check(mean_ratio >= 0.95, format!("mean fast/centralized utility {mean_ratio:.4} (need >= 0.95)"));
    o.check(feasible == n, format!("fast allocation feasible on {feasible}/{n}"));
    o.check(stable == n, format!("fast allocation stable within 10 iterations on {stable}/{n}"));

    let (rewards, avail, neighbors) = match ten_bs_fixture() {
        Ok(f) => f,
        Err(e) => {
            o.check(false, format!("10-BS fixture: {e}"));
            return o;
        }
    };
    match (
        fast_allocate(&rewards, &avail, &neighbors, 10),
        dual_decomposition(&rewards, &avail, &neighbors, &DualOptions::default()),
        solve_centralized(&rewards, &avail, &neighbors),
    ) {
        (Ok(f), Ok(d), Ok(c)) => {
            o.note(format!(
                "10-BS fixture ({} BSs available): utilities fast {:.2}, dual {:.2}, centralized {:.2}",
                avail.available.iter().filter(|&&a| a).count(),
                f.utility(&rewards),
                d.utility(&rewards),
                c.utility(&rewards)
            ));
            o.check(f.converged_iteration <= 6, format!("fast stabilizes at iteration {} (need <= 6)", f.converged_iteration));
            o.check(
                d.converged_iteration > f.converged_iteration,
                format!("dual decomposition stabilizes at iteration {} (need > fast)", d.converged_iteration),
            );
        }
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => o.check(false, format!("error: {e}")),
    }
    o
}

fn sensing_arms() -> Vec<Arm> {
    Scheme::ALL.iter().map(|&s| Arm::sensing(s)).collect()
}

fn sweep_point(scenario: &coexsim::model::Scenario, realizations: usize) -> coexsim::Result<Vec<AggregateRow>> {
    let per = monte_carlo(scenario, &ScenarioInputs::default(), &sensing_arms(), realizations, SEED)?;
    Ok(aggregate(0.0, &per))
}

fn row(rows: &[AggregateRow], scheme: Scheme) -> &AggregateRow {
    rows.iter().find(|r| r.scheme == scheme.as_str()).expect("every scheme is evaluated")
}

fn scheme_ordering() -> Outcome {
    let taus = [-72.0, -62.0, -52.0];
    let mut points = Vec::new();
    for &tau in &taus {
        let mut s = small_sensing_scenario();
        s.detection_threshold_dbm = tau;
        match sweep_point(&s, 50) {
            Ok(r) => points.push(r),
            Err(e) => return error_outcome(e),
        }
    }
    let mut o = Outcome::new();
    o.note("K=25, M=4, 5 incumbents, 50 realizations".into());
    for (tau, rows) in taus.iter().zip(&points) {
        let cells: Vec<String> = rows
            .iter()
            .map(|r| format!("{} u={:.4} md={:.4}", r.scheme, r.utilization, r.misdetection))
            .collect();
        o.note(format!("tau {tau}: {}", cells.join(", ")));
    }
    let at62 = &points[1];
    let (dn, nn) = (row(at62, Scheme::DistributedNarrowband), row(at62, Scheme::NoncoopNarrowband));
    o.check(
        dn.utilization > nn.utilization,
        format!("tau -62: utilization distributed NB {:.3} > noncooperative NB {:.3}", dn.utilization, nn.utilization),
    );
    let (dw, nw) = (row(at62, Scheme::DistributedWideband), row(at62, Scheme::NoncoopWideband));
    o.check(
        dw.misdetection < nw.misdetection,
        format!("tau -62: misdetection distributed WB {:.4} < noncooperative WB {:.4}", dw.misdetection, nw.misdetection),
    );
    for s in Scheme::ALL {
        let u: Vec<f64> = points.iter().map(|p| row(p, s).utilization).collect();
        o.check(
            u.windows(2).all(|w| w[1] >= w[0]),
            format!("{} utilization nondecreasing in tau: {:.4} {:.4} {:.4}", s.as_str(), u[0], u[1], u[2]),
        );
    }
    o
}

fn radius_trend() -> Outcome {
    let radii = [100.0, 200.0, 300.0];
    let mut points = Vec::new();
    for &r in &radii {
        let mut s = small_sensing_scenario();
        s.detection_threshold_dbm = -72.0;
        s.neighborhood_radius_m = r;
        match sweep_point(&s, 50) {
            Ok(p) => points.push(p),
            Err(e) => return error_outcome(e),
        }
    }
    let mut o = Outcome::new();
    let series = |s: Scheme| -> Vec<f64> { points.iter().map(|p| row(p, s).utilization).collect() };
    let d = series(Scheme::DistributedNarrowband);
    let c = series(Scheme::CentralizedEgc);
    o.check(
        d.windows(2).all(|w| w[1] >= w[0]),
        format!("distributed NB utilization over R 100/200/300 m: {:.4} {:.4} {:.4} (nondecreasing)", d[0], d[1], d[2]),
    );
    o.check(
        c.windows(2).all(|w| w[1] <= w[0]),
        format!("centralized utilization over R 100/200/300 m: {:.4} {:.4} {:.4} (nonincreasing)", c[0], c[1], c[2]),
    );
    o
}

fn case_study_ordering() -> Outcome {
    let mut runs = Vec::new();
    for mode in OperationMode::ALL {
        match case_study(&case_study_base(), &ScenarioInputs::default(), mode, 3, SEED) {
            Ok(r) => runs.push((mode, r.mean_devices_served())),
            Err(e) => return error_outcome(e),
        }
    }
    let get = |mode: OperationMode, scheme: &str| -> f64 {
        runs.iter()
            .find(|(m, _)| *m == mode)
            .and_then(|(_, v)| v.iter().find(|(s, _)| s == scheme))
            .map_or(f64::NAN, |(_, x)| *x)
    };
    let mut o = Outcome::new();
    o.note("K=50, 200 incumbent APs, 10^4 devices, 3 realizations".into());
    for (mode, means) in &runs {
        let cells: Vec<String> = means.iter().map(|(s, v)| format!("{s} {v:.1}")).collect();
        o.note(format!("{}: {}", mode.as_str(), cells.join(", ")));
    }
    for mode in OperationMode::ALL {
        let (d, n) = (get(mode, "distributed_narrowband"), get(mode, "noncoop_narrowband"));
        o.check(d > n, format!("{}: distributed NB {d:.1} > noncooperative NB {n:.1}", mode.as_str()));
    }
    let schemes: Vec<String> = runs[0].1.iter().map(|(s, _)| s.clone()).collect();
    for s in &schemes {
        let (nb, lte) = (get(OperationMode::NbIot, s), get(OperationMode::LteM, s));
        o.check(nb >= lte, format!("{s}: nb_iot {nb:.1} >= lte_m {lte:.1}"));
    }
    o
}

fn invariant_suites() -> Outcome {
    let mut o = Outcome::new();
    fn suite<S: Strategy>(
        o: &mut Outcome,
        name: &str,
        strategy: S,
        check: impl Fn(&S::Value) -> Result<(), TestCaseError>,
    ) {
        let mut runner = TestRunner::new(Config {
            cases: support::CASES,
            failure_persistence: None,
            ..Config::default()
        });
        let res = runner.run(&strategy, |v| check(&v));
        let line = match &res {
            Ok(()) => format!("{name}: {} cases", support::CASES),
            Err(e) => format!("{name}: {e}"),
        };
        o.check(res.is_ok(), line);
    }
    suite(&mut o, "combiner normalization", support::combiner_case(), support::combiner_normalization);
    suite(&mut o, "assignment-matrix constraints", support::assignment_case(), support::assignment_constraints);
    suite(&mut o, "allocation feasibility", support::allocation_case(), support::allocation_feasibility);
    suite(&mut o, "energy positivity", support::energy_case(), support::energy_positivity);
    suite(&mut o, "manifest reproducibility", support::manifest_case(), support::manifest_reproducibility);
    o
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("scheduler gap vs exact optimum", scheduler_gap),
        ("filter moments", filter_moment_check),
        ("deflection theory vs Monte Carlo", deflection_theory_vs_mc),
        ("deflection improvement per BS", deflection_per_bs),
        ("Lyapunov solver residual", lyapunov_check),
        ("allocation optimality and convergence", allocation_check),
        ("sensing scheme ordering", scheme_ordering),
        ("neighborhood radius trend", radius_trend),
        ("case study ordering", case_study_ordering),
        ("invariant suites", invariant_suites),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        println!("{} AC{} {name} ({:.1} s)", if o.pass { "PASS" } else { "FAIL" }, i + 1, t.elapsed().as_secs_f64());
        for d in &o.details {
            println!("    {d}");
        }
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
