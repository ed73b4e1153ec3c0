//! Randomized invariants shared by the `invariants` proptest target and the
//! acceptance runner. Each check returns `Err` with a description when the
//! invariant is violated.

use coexsim::allocation::{dual_decomposition, fast_allocate, solve_centralized, DualOptions, RewardMatrix};
use coexsim::deflection::StaticDiffusionModel;
use coexsim::harness::{build_realization, run, ExperimentPreset, PresetName, RunManifest, RunOptions, ScenarioInputs, Sweep, SweepVariable};
use coexsim::harness::{Arm, Allocator};
use coexsim::model::{DeploymentKind, Point, Scenario};
use coexsim::scheduler::{heuristic_schedule, random_assignment, solve_exact, solve_lp_rounded, uniform_counts, AssignmentInstance, AssignmentResult};
use coexsim::sensing::{alpha_update, beta_weights, combine, DecisionMap, Scheme};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CASES: u32 = 1000;

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(fail(msg()))
    }
}

// ---- combiner normalization ----

#[derive(Debug, Clone)]
pub struct CombinerCase {
    pub target: f64,
    pub weights: Vec<f64>,
    pub ref_powers: Vec<f64>,
    pub positions: Vec<(f64, f64)>,
    pub radius: f64,
}

pub fn combiner_case() -> impl Strategy<Value = CombinerCase> {
    (1usize..=12)
        .prop_flat_map(|n| {
            (
                1e-12f64..1e-3,
                prop::collection::vec(prop_oneof![Just(0.0), 1e-12f64..1e-3], n),
                prop::collection::vec(1e-15f64..1e-2, n),
                prop::collection::vec((0.0f64..1000.0, 0.0f64..1000.0), n),
                50.0f64..600.0,
            )
        })
        .prop_map(|(target, weights, ref_powers, positions, radius)| CombinerCase {
            target,
            weights,
            ref_powers,
            positions,
            radius,
        })
}

fn disk_neighbors(positions: &[(f64, f64)], radius: f64) -> Vec<Vec<usize>> {
    (0..positions.len())
        .map(|k| {
            (0..positions.len())
                .filter(|&j| {
                    let (a, b) = (positions[k], positions[j]);
                    j == k || (a.0 - b.0).hypot(a.1 - b.1) <= radius
                })
                .collect()
        })
        .collect()
}

fn check_convex(name: &str, c: &[f64]) -> Result<(), TestCaseError> {
    let sum: f64 = c.iter().sum();
    ensure(c.iter().all(|&v| v.is_finite() && v >= 0.0), || format!("{name}: negative or non-finite coefficient {c:?}"))?;
    ensure((sum - 1.0).abs() <= 1e-9, || format!("{name}: coefficients sum to {sum}"))
}

pub fn combiner_normalization(case: &CombinerCase) -> Result<(), TestCaseError> {
    let alpha = alpha_update(case.target, &case.weights);
    check_convex("alpha", &alpha)?;
    let psi = combine(&alpha, &case.weights);
    let lo = case.weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = case.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-9 * hi.abs().max(1e-300);
    ensure(psi >= lo - slack && psi <= hi + slack, || format!("combined value {psi} outside [{lo}, {hi}]"))?;

    let beta = beta_weights(&case.ref_powers).map_err(|e| fail(e.to_string()))?;
    check_convex("beta", &beta)?;

    let neighbors = disk_neighbors(&case.positions, case.radius);
    let model = StaticDiffusionModel::averaging(&neighbors, 0.01, 0.1, 0.0, 0.95).map_err(|e| fail(e.to_string()))?;
    let k_n = neighbors.len();
    for (k, nb) in neighbors.iter().enumerate() {
        let col: Vec<f64> = (0..k_n).map(|j| model.combiner[j * k_n + k]).collect();
        check_convex(&format!("averaging column {k}"), &col)?;
        for (j, &c) in col.iter().enumerate() {
            ensure(c == 0.0 || nb.contains(&j), || format!("BS {k} combines non-neighbor {j}"))?;
        }
    }
    Ok(())
}

// ---- assignment-matrix constraints ----

#[derive(Debug, Clone)]
pub struct AssignmentCase {
    pub positions: Vec<(f64, f64)>,
    pub num_bands: usize,
    pub seed: u64,
}

pub fn assignment_case() -> impl Strategy<Value = AssignmentCase> {
    (1usize..=10)
        .prop_flat_map(|n| (prop::collection::vec((0.0f64..2000.0, 0.0f64..2000.0), n), 1usize..=n.min(4), any::<u64>()))
        .prop_map(|(positions, num_bands, seed)| AssignmentCase {
            positions,
            num_bands,
            seed,
        })
}

fn check_assignment(name: &str, inst: &AssignmentInstance, res: &AssignmentResult) -> Result<(), TestCaseError> {
    let k_n = inst.num_bs;
    ensure(res.matrix.bands.len() == k_n, || format!("{name}: {} rows for {k_n} BSs", res.matrix.bands.len()))?;
    ensure(res.matrix.row_sums().iter().all(|&s| s == 1), || format!("{name}: a BS senses other than one band"))?;
    ensure(res.matrix.column_sums() == inst.required, || {
        format!("{name}: column sums {:?} != required {:?}", res.matrix.column_sums(), inst.required)
    })?;
    ensure(inst.is_feasible(&res.matrix.bands), || format!("{name}: infeasible"))?;
    let z = inst.objective(&res.matrix.bands);
    ensure((z - res.objective).abs() <= 1e-9 * z.abs().max(1.0), || format!("{name}: reported objective {} != {z}", res.objective))
}

pub fn assignment_constraints(case: &AssignmentCase) -> Result<(), TestCaseError> {
    let positions: Vec<Point> = case.positions.iter().map(|&(x, y)| Point::new(x, y, 10.0)).collect();
    let required = uniform_counts(positions.len(), case.num_bands);
    let inst = AssignmentInstance::from_positions(&positions, required).map_err(|e| fail(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let exact = solve_exact(&inst).map_err(|e| fail(e.to_string()))?;
    let heur = heuristic_schedule(&inst, &positions, 3, &mut rng).map_err(|e| fail(e.to_string()))?;
    let lp = solve_lp_rounded(&inst).map_err(|e| fail(e.to_string()))?;
    let rand = random_assignment(&inst, &mut rng);
    for (name, res) in [("exact", &exact), ("heuristic", &heur), ("lp_rounded", &lp), ("random", &rand)] {
        check_assignment(name, &inst, res)?;
        ensure(res.objective >= exact.objective - 1e-6 * exact.objective.max(1.0), || {
            format!("{name} objective {} beats the exact optimum {}", res.objective, exact.objective)
        })?;
    }
    Ok(())
}

// ---- allocation feasibility ----

#[derive(Debug, Clone)]
pub struct AllocationCase {
    pub num_channels: usize,
    pub positions: Vec<(f64, f64)>,
    pub radius: f64,
    pub rewards: Vec<f64>,
    pub available: Vec<bool>,
}

pub fn allocation_case() -> impl Strategy<Value = AllocationCase> {
    (1usize..=12, 1usize..=4)
        .prop_flat_map(|(k, m)| {
            (
                Just(m),
                prop::collection::vec((0.0f64..1000.0, 0.0f64..1000.0), k),
                50.0f64..700.0,
                prop::collection::vec(prop_oneof![4 => -10.0f64..30.0, 1 => Just(f64::NEG_INFINITY)], k * m),
                prop::collection::vec(prop::bool::weighted(0.8), k * m),
            )
        })
        .prop_map(|(num_channels, positions, radius, rewards, available)| AllocationCase {
            num_channels,
            positions,
            radius,
            rewards,
            available,
        })
}

pub fn allocation_feasibility(case: &AllocationCase) -> Result<(), TestCaseError> {
    let k_n = case.positions.len();
    let m_n = case.num_channels;
    let neighbors = disk_neighbors(&case.positions, case.radius);
    let rewards = RewardMatrix::new(k_n, m_n, case.rewards.clone()).map_err(|e| fail(e.to_string()))?;
    let avail = DecisionMap::new(k_n, m_n, case.available.clone());
    let central = solve_centralized(&rewards, &avail, &neighbors).map_err(|e| fail(e.to_string()))?;
    let fast = fast_allocate(&rewards, &avail, &neighbors, 10).map_err(|e| fail(e.to_string()))?;
    let dual = dual_decomposition(&rewards, &avail, &neighbors, &DualOptions::default()).map_err(|e| fail(e.to_string()))?;
    let best = central.utility(&rewards);
    for (name, g) in [("centralized", &central), ("fast", &fast.grants), ("dual", &dual.grants)] {
        ensure(g.is_feasible(&neighbors, &avail), || format!("{name} grants violate a neighborhood or availability"))?;
        for k in 0..k_n {
            for m in 0..m_n {
                let r = rewards.get(k, m);
                ensure(!g.get(k, m) || r > 0.0, || format!("{name} grants BS {k} channel {m} with reward {r}"))?;
            }
        }
        let u = g.utility(&rewards);
        ensure(u <= best + 1e-9 * best.abs().max(1.0), || format!("{name} utility {u} exceeds the optimum {best}"))?;
    }
    Ok(())
}

// ---- energy positivity ----

#[derive(Debug, Clone)]
pub struct EnergyCase {
    pub num_bs: usize,
    pub incumbents: usize,
    pub side_m: f64,
    pub seed: u64,
}

pub fn energy_case() -> impl Strategy<Value = EnergyCase> {
    (1usize..=9, 0usize..=6, 100.0f64..3000.0, any::<u64>()).prop_map(|(num_bs, incumbents, side_m, seed)| EnergyCase {
        num_bs,
        incumbents,
        side_m,
        seed,
    })
}

pub fn energy_positivity(case: &EnergyCase) -> Result<(), TestCaseError> {
    let mut sc = Scenario::default();
    sc.deployment.kind = DeploymentKind::Random;
    sc.deployment.num_bs = case.num_bs;
    sc.deployment.area_m = [case.side_m, case.side_m];
    sc.incumbents.count = case.incumbents;
    sc.devices.count = 0;
    sc.devices.min_per_bs = 0;
    let real = build_realization(&sc, &ScenarioInputs::default(), case.seed, 0).map_err(|e| fail(e.to_string()))?;
    let t = &real.table;
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed ^ 0x9e37_79b9_7f4a_7c15);
    for k in 0..t.num_bs {
        for m in 0..t.num_channels {
            let mean = t.mean_energy(k, m);
            ensure(mean.is_finite() && mean >= t.noise_mw && t.noise_mw > 0.0, || format!("mean energy {mean} at ({k},{m})"))?;
            for _ in 0..8 {
                let y = t.energy_sample(k, m, &mut rng).value;
                ensure(y.is_finite() && y > 0.0, || format!("energy sample {y} at ({k},{m})"))?;
            }
        }
    }
    Ok(())
}

// ---- manifest reproducibility ----

#[derive(Debug, Clone)]
pub struct ManifestCase {
    pub num_bs: usize,
    pub incumbents: usize,
    pub seed: u64,
    pub threads: (usize, usize),
}

pub fn manifest_case() -> impl Strategy<Value = ManifestCase> {
    (2usize..=6, 0usize..=3, any::<u64>(), (1usize..=3, 1usize..=3)).prop_map(|(num_bs, incumbents, seed, threads)| {
        ManifestCase {
            num_bs,
            incumbents,
            seed,
            threads,
        }
    })
}

type RunFiles = Vec<(String, Vec<u8>)>;

fn run_once(case: &ManifestCase, threads: usize) -> Result<(RunManifest, RunFiles), TestCaseError> {
    let mut sc = Scenario::default();
    sc.deployment.kind = DeploymentKind::Random;
    sc.deployment.num_bs = case.num_bs;
    sc.deployment.area_m = [800.0, 800.0];
    sc.incumbents.count = case.incumbents;
    sc.devices.count = 20;
    sc.sensing.iterations = 20;
    let preset = ExperimentPreset {
        name: PresetName::SensingSweep,
        realizations: 2,
        arms: vec![
            Arm::new("dist_nb", Scheme::DistributedNarrowband, Allocator::Fast),
            Arm::sensing(Scheme::NoncoopWideband),
        ],
        sweep: Some(Sweep {
            variable: SweepVariable::DetectionThresholdDbm,
            grid: vec![-72.0, -62.0],
        }),
    };
    let dir = tempfile::tempdir().map_err(|e| fail(e.to_string()))?;
    let opts = RunOptions {
        seed: Some(case.seed),
        parallelism: threads,
        realizations: None,
        snapshot_realization: 1,
    };
    let manifest = run(&preset, &sc, dir.path(), &opts).map_err(|e| fail(e.to_string()))?;
    let files = manifest
        .files
        .iter()
        .map(|f| Ok((f.path.clone(), std::fs::read(dir.path().join(&f.path)).map_err(|e| fail(e.to_string()))?)))
        .collect::<Result<Vec<_>, TestCaseError>>()?;
    Ok((manifest, files))
}

pub fn manifest_reproducibility(case: &ManifestCase) -> Result<(), TestCaseError> {
    let (a, fa) = run_once(case, case.threads.0)?;
    let (b, fb) = run_once(case, case.threads.1)?;
    ensure(a.scenario_sha256 == b.scenario_sha256, || "scenario hash differs".into())?;
    ensure(a.files == b.files, || format!("file digests differ: {:?} vs {:?}", a.files, b.files))?;
    ensure(fa == fb, || "file contents differ".into())?;
    for (path, bytes) in &fa {
        let digest = a.files.iter().find(|f| &f.path == path).map(|f| f.sha256.clone()).unwrap_or_default();
        ensure(coexsim::harness::sha256_hex(bytes) == digest, || format!("{path}: recorded digest does not match content"))?;
    }
    Ok(())
}
