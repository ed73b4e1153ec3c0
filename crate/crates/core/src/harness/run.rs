use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ScenarioInputs;
use super::pipeline::{build_realization, evaluate_arms, Allocator, Arm, ArmMetrics};
use super::studies::{case_study, scenario_deflection, scheduler_gap_study, GapStudyOptions, OperationMode};
use crate::deflection::{snr_sweep, theoretical_deflection, write_sweep_csv, McOptions, StaticDiffusionModel, VarianceMethod};
use crate::error::{invalid, io_err, Error, Result};
use crate::metrics::{pearson, BlockCounts};
use crate::model::{DeploymentKind, Scenario};
use crate::propagation::dbm_to_mw;
use crate::sensing::{build_rem, run_scheme, synthetic_indoor_grid, write_rss_csv, write_weight_map_csv, Scheme};

/// Named experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    SchedulerGap,
    Deflection,
    SensingSweep,
    RadiusSweep,
    AllocationDensity,
    Rem,
    CaseStudy,
}

impl PresetName {
    pub const ALL: [PresetName; 7] = [
        PresetName::SchedulerGap,
        PresetName::Deflection,
        PresetName::SensingSweep,
        PresetName::RadiusSweep,
        PresetName::AllocationDensity,
        PresetName::Rem,
        PresetName::CaseStudy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::SchedulerGap => "scheduler_gap",
            PresetName::Deflection => "deflection",
            PresetName::SensingSweep => "sensing_sweep",
            PresetName::RadiusSweep => "radius_sweep",
            PresetName::AllocationDensity => "allocation_density",
            PresetName::Rem => "rem",
            PresetName::CaseStudy => "case_study",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|p| p.as_str()).collect();
            invalid(format!("unknown preset `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// Scenario field varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    DetectionThresholdDbm,
    NeighborhoodRadiusM,
    NumBs,
}

impl SweepVariable {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepVariable::DetectionThresholdDbm => "detection_threshold_dbm",
            SweepVariable::NeighborhoodRadiusM => "neighborhood_radius_m",
            SweepVariable::NumBs => "num_bs",
        }
    }

    /// Copy of `scenario` with the variable set to `value`.
    pub fn apply(&self, scenario: &Scenario, value: f64) -> Result<Scenario> {
        let mut s = scenario.clone();
        match self {
            SweepVariable::DetectionThresholdDbm => s.detection_threshold_dbm = value,
            SweepVariable::NeighborhoodRadiusM => s.neighborhood_radius_m = value,
            SweepVariable::NumBs => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(invalid(format!("BS count {value} is not a positive integer")));
                }
                if s.deployment.kind == DeploymentKind::Csv {
                    return Err(invalid("the BS count cannot be swept for csv deployments"));
                }
                s.deployment.num_bs = value as usize;
            }
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
}

/// Experiment matrix of a preset: base scenario, run length, compared arms
/// and the optional sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentPreset {
    pub name: PresetName,
    pub realizations: usize,
    pub arms: Vec<Arm>,
    pub sweep: Option<Sweep>,
}

/// Small-network sensing setup: 25 BSs on a grid over 1 km², 4 channels,
/// 5 incumbents.
pub fn small_sensing_scenario() -> Scenario {
    let mut s = Scenario::default();
    s.deployment.num_bs = 25;
    s.deployment.area_m = [1000.0, 1000.0];
    s.incumbents.count = 5;
    s
}

/// Nine BSs on a 200 m grid, one channel and one always-active incumbent.
pub fn deflection_scenario() -> Scenario {
    let mut s = Scenario::default();
    s.deployment.num_bs = 9;
    s.deployment.area_m = [600.0, 600.0];
    s.spectrum.total_bandwidth_hz = 20e6;
    s.spectrum.channel_bandwidth_hz = 20e6;
    s.spectrum.num_bands = 1;
    s.incumbents.count = 1;
    s
}

/// Desk-scale case study: 50 random BSs, 200 access points at 30 dBm with
/// 20/40/80 MHz bandwidths and 10⁴ devices.
pub fn case_study_base() -> Scenario {
    let mut s = Scenario::default();
    s.deployment.kind = DeploymentKind::Random;
    s.deployment.num_bs = 50;
    s.deployment.area_m = [8800.0, 8800.0];
    s.neighborhood_radius_m = 1000.0;
    s.incumbents.count = 200;
    s.incumbents.tx_power_dbm_min = 30.0;
    s.incumbents.tx_power_dbm_max = 30.0;
    s.incumbents.bandwidths_hz = vec![20e6, 40e6, 80e6];
    s.devices.count = 10_000;
    s.contribution_prune_ratio = 1e-4;
    s
}

impl ExperimentPreset {
    pub fn get(name: PresetName) -> Self {
        let all_schemes: Vec<Arm> = Scheme::ALL.iter().map(|&s| Arm::sensing(s)).collect();
        let (realizations, arms, sweep) = match name {
            PresetName::SchedulerGap => (100, Vec::new(), None),
            PresetName::Deflection => (1000, Vec::new(), None),
            PresetName::SensingSweep => (
                50,
                all_schemes,
                Some(Sweep {
                    variable: SweepVariable::DetectionThresholdDbm,
                    grid: vec![-82.0, -77.0, -72.0, -67.0, -62.0, -57.0, -52.0],
                }),
            ),
            PresetName::RadiusSweep => (
                50,
                all_schemes,
                Some(Sweep {
                    variable: SweepVariable::NeighborhoodRadiusM,
                    grid: vec![100.0, 200.0, 300.0, 400.0],
                }),
            ),
            PresetName::AllocationDensity => (
                20,
                vec![
                    Arm::new("distributed_wideband_fast", Scheme::DistributedWideband, Allocator::Fast),
                    Arm::new("distributed_wideband_centralized", Scheme::DistributedWideband, Allocator::Centralized),
                    Arm::new("distributed_narrowband_fast", Scheme::DistributedNarrowband, Allocator::Fast),
                    Arm::new("distributed_narrowband_centralized", Scheme::DistributedNarrowband, Allocator::Centralized),
                    Arm::new("noncoop_narrowband", Scheme::NoncoopNarrowband, Allocator::Noncoop),
                ],
                Some(Sweep {
                    variable: SweepVariable::NumBs,
                    grid: vec![16.0, 25.0, 36.0, 49.0],
                }),
            ),
            PresetName::Rem => (10, Vec::new(), None),
            PresetName::CaseStudy => (3, super::studies::case_study_arms(), None),
        };
        ExperimentPreset {
            name,
            realizations,
            arms,
            sweep,
        }
    }

    /// Scenario used when none is supplied.
    pub fn base_scenario(&self) -> Scenario {
        match self.name {
            PresetName::Deflection => deflection_scenario(),
            PresetName::RadiusSweep => {
                let mut s = small_sensing_scenario();
                s.detection_threshold_dbm = -72.0;
                s
            }
            PresetName::AllocationDensity => {
                let mut s = small_sensing_scenario();
                s.devices.count = 1000;
                s
            }
            PresetName::CaseStudy => case_study_base(),
            PresetName::SchedulerGap => {
                // random layouts are drawn per instance; only K, L and the area matter
                let mut s = Scenario::default();
                s.deployment.num_bs = 48;
                s.deployment.area_m = [2000.0, 2000.0];
                s
            }
            _ => small_sensing_scenario(),
        }
    }
}

/// Run-level settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunOptions {
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    /// Worker threads; 0 uses the rayon default.
    pub parallelism: usize,
    /// Overrides the preset's realization count.
    pub realizations: Option<usize>,
    /// Realization exported as the per-block snapshot.
    pub snapshot_realization: u64,
}

/// Content hash of an output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub preset: String,
    pub scenario_sha256: String,
    pub seed: u64,
    pub version: String,
    pub realizations: usize,
    pub parallelism: usize,
    pub files: Vec<FileDigest>,
    pub wall_clock_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes serializable rows as CSV with a header.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// One arm in one realization at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizationRow {
    pub sweep_value: f64,
    pub realization: u64,
    pub scheme: String,
    pub utilization: f64,
    pub misdetection: f64,
    pub sum_rate_bps: f64,
    pub devices_served: usize,
    pub mean_inr_db: Option<f64>,
    pub collisions: usize,
}

/// Pooled result of one arm at one sweep point: ratios from summed block
/// counts, other quantities averaged over realizations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub sweep_value: f64,
    pub scheme: String,
    pub realizations: usize,
    pub utilization: f64,
    pub misdetection: f64,
    pub sum_rate_bps: f64,
    pub devices_served: f64,
    pub mean_inr_db: Option<f64>,
    pub collisions: f64,
}

/// Evaluates `arms` on realizations `0..count` in the current rayon pool,
/// returning results in realization order.
pub fn monte_carlo(
    scenario: &Scenario,
    inputs: &ScenarioInputs,
    arms: &[Arm],
    realizations: usize,
    seed: u64,
) -> Result<Vec<Vec<ArmMetrics>>> {
    (0..realizations as u64)
        .into_par_iter()
        .map(|r| {
            let real = build_realization(scenario, inputs, seed, r)?;
            evaluate_arms(&real, scenario, arms)
        })
        .collect()
}

/// Pools per-realization metrics into one row per arm.
pub fn aggregate(sweep_value: f64, per_realization: &[Vec<ArmMetrics>]) -> Vec<AggregateRow> {
    let Some(first) = per_realization.first() else {
        return Vec::new();
    };
    let n = per_realization.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, arm)| {
            let mut counts = BlockCounts::default();
            let (mut rate, mut served, mut coll) = (0.0, 0.0, 0.0);
            let mut inr = Vec::new();
            for r in per_realization {
                let rep = &r[i].report;
                counts.add(&rep.counts);
                rate += rep.sum_rate_bps;
                served += rep.devices_served as f64;
                coll += rep.collisions as f64;
                inr.extend(rep.mean_inr_db_at_incumbents);
            }
            AggregateRow {
                sweep_value,
                scheme: arm.label.clone(),
                realizations: per_realization.len(),
                utilization: counts.utilization(),
                misdetection: counts.misdetection(),
                sum_rate_bps: rate / n,
                devices_served: served / n,
                mean_inr_db: (!inr.is_empty()).then(|| inr.iter().sum::<f64>() / inr.len() as f64),
                collisions: coll / n,
            }
        })
        .collect()
}

fn realization_rows(sweep_value: f64, per_realization: &[Vec<ArmMetrics>]) -> Vec<RealizationRow> {
    per_realization
        .iter()
        .enumerate()
        .flat_map(|(r, arms)| {
            arms.iter().map(move |a| RealizationRow {
                sweep_value,
                realization: r as u64,
                scheme: a.label.clone(),
                utilization: a.report.utilization_ratio,
                misdetection: a.report.misdetection_prob,
                sum_rate_bps: a.report.sum_rate_bps,
                devices_served: a.report.devices_served,
                mean_inr_db: a.report.mean_inr_db_at_incumbents,
                collisions: a.report.collisions,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SnapshotRow {
    scheme: String,
    bs_id: usize,
    x_m: f64,
    y_m: f64,
    channel: usize,
    truly_available: bool,
    decided_available: bool,
}

fn write_snapshot(path: &Path, scenario: &Scenario, inputs: &ScenarioInputs, arms: &[Arm], seed: u64, r: u64) -> Result<()> {
    let real = build_realization(scenario, inputs, seed, r)?;
    let ctx = real.context(scenario);
    let mut rows = Vec::new();
    let mut seen = Vec::new();
    for arm in arms {
        if seen.contains(&arm.scheme) {
            continue;
        }
        seen.push(arm.scheme);
        let out = run_scheme(&ctx, arm.scheme)?;
        for k in 0..real.bs.len() {
            for m in 0..real.plan.num_channels {
                rows.push(SnapshotRow {
                    scheme: arm.scheme.as_str().to_string(),
                    bs_id: k,
                    x_m: real.positions[k].x,
                    y_m: real.positions[k].y,
                    channel: m,
                    truly_available: real.truth.get(k, m),
                    decided_available: out.decisions.get(k, m),
                });
            }
        }
    }
    write_rows(path, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct VarianceMethodRow {
    step: f64,
    snr_db: f64,
    method: String,
    delta_theory: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RemSummaryRow {
    selection: usize,
    fraction: f64,
    participating: usize,
    pearson_linear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CaseStudyRow {
    mode: String,
    scheme: String,
    realizations: usize,
    mean_devices_served: f64,
}

/// Step sizes compared by the deflection study.
pub const DEFLECTION_STEPS: [f64; 2] = [0.1, 0.01];
/// Noise power of the scalar-Gaussian deflection model.
pub const DEFLECTION_NOISE_POWER: f64 = 0.1;

/// SNR grid of the deflection study, −10…10 dB in 2 dB steps.
pub fn deflection_snr_grid() -> Vec<f64> {
    (-5..=5).map(|i| 2.0 * i as f64).collect()
}

/// Executes `preset` on `scenario`, writing CSVs, the resolved scenario and
/// `manifest.json` into `out_dir`.
pub fn run(preset: &ExperimentPreset, scenario: &Scenario, out_dir: &Path, opts: &RunOptions) -> Result<RunManifest> {
    let started = Instant::now();
    let mut scenario = scenario.clone();
    if let Some(seed) = opts.seed {
        scenario.rng_seed = seed;
    }
    scenario.validate()?;
    let seed = scenario.rng_seed;
    let realizations = opts.realizations.unwrap_or(preset.realizations);
    if realizations == 0 {
        return Err(invalid("at least one realization is required"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let inputs = ScenarioInputs::load(&scenario)?;
    for w in inputs
        .bs_sites
        .iter()
        .chain(inputs.incumbent_sites.iter())
        .flat_map(|t| t.warnings.iter())
    {
        eprintln!("warning: {w}");
    }
    let scenario_json = serde_json::to_string_pretty(&scenario)?;
    let mut files: Vec<PathBuf> = Vec::new();
    let scenario_path = out_dir.join("scenario.json");
    std::fs::write(&scenario_path, &scenario_json).map_err(|e| io_err(&scenario_path, e))?;
    files.push(scenario_path);

    pool.install(|| -> Result<()> {
        match preset.name {
            PresetName::SensingSweep | PresetName::RadiusSweep | PresetName::AllocationDensity => {
                let sweep = preset.sweep.as_ref().ok_or_else(|| invalid("preset has no sweep"))?;
                let mut per_rows = Vec::new();
                let mut agg_rows = Vec::new();
                for &v in &sweep.grid {
                    let s = sweep.variable.apply(&scenario, v)?;
                    let res = monte_carlo(&s, &inputs, &preset.arms, realizations, seed)?;
                    per_rows.extend(realization_rows(v, &res));
                    agg_rows.extend(aggregate(v, &res));
                }
                let p = out_dir.join("realizations.csv");
                write_rows(&p, &per_rows)?;
                files.push(p);
                let p = out_dir.join("aggregate.csv");
                write_rows(&p, &agg_rows)?;
                files.push(p);
                let first = sweep.variable.apply(&scenario, sweep.grid[0])?;
                let p = out_dir.join("snapshot.csv");
                write_snapshot(&p, &first, &inputs, &preset.arms, seed, opts.snapshot_realization)?;
                files.push(p);
            }
            PresetName::SchedulerGap => {
                let d = &scenario.deployment;
                let gap = GapStudyOptions {
                    instances: realizations,
                    num_bs: d.num_bs,
                    num_bands: scenario.spectrum.num_bands,
                    area_m: d.area_m[0].max(d.area_m[1]),
                    restarts: scenario.algorithms.scheduler_restarts,
                };
                let rows = scheduler_gap_study(&gap, seed)?;
                let p = out_dir.join("scheduler_gap.csv");
                write_rows(&p, &rows)?;
                files.push(p);
            }
            PresetName::Deflection => {
                let base = StaticDiffusionModel::grid(
                    3,
                    DEFLECTION_STEPS[0],
                    DEFLECTION_NOISE_POWER,
                    0.0,
                    scenario.sensing.smoothing,
                )?;
                let mc = McOptions {
                    seed,
                    ..McOptions::default()
                };
                let snrs = deflection_snr_grid();
                let rows = snr_sweep(&base, &DEFLECTION_STEPS, &snrs, VarianceMethod::Expansion, &mc)?;
                for &mu in &DEFLECTION_STEPS {
                    let sel: Vec<_> = rows.iter().filter(|r| r.step == mu).cloned().collect();
                    let p = out_dir.join(format!("deflection_snr_mu_{mu}.csv"));
                    write_sweep_csv(&p, &sel)?;
                    files.push(p);
                }
                let mut methods = Vec::new();
                for &mu in &DEFLECTION_STEPS {
                    for &snr in &snrs {
                        let m = base
                            .with_step(mu)
                            .with_signal_power(DEFLECTION_NOISE_POWER * 10f64.powf(snr / 10.0));
                        for method in [VarianceMethod::Expansion, VarianceMethod::ExpansionExactPhi, VarianceMethod::JointMoments] {
                            methods.push(VarianceMethodRow {
                                step: mu,
                                snr_db: snr,
                                method: method.as_str().to_string(),
                                delta_theory: theoretical_deflection(&m, method)?.delta(),
                            });
                        }
                    }
                }
                let p = out_dir.join("deflection_theory_methods.csv");
                write_rows(&p, &methods)?;
                files.push(p);
                let ranks = scenario_deflection(&scenario, &inputs, realizations, seed)?;
                let p = out_dir.join("deflection_per_bs.csv");
                write_rows(&p, &ranks)?;
                files.push(p);
            }
            PresetName::Rem => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (grid, field_dbm) = synthetic_indoor_grid(&mut rng);
                let field: Vec<f64> = field_dbm.iter().map(|&v| dbm_to_mw(v)).collect();
                let p = out_dir.join("rss_synthetic.csv");
                write_rss_csv(&p, &grid)?;
                files.push(p);
                let mut summary = Vec::new();
                for sel in 0..realizations {
                    let r = build_rem(&grid, 0.2, 2.0, scenario.sensing.step_size, scenario.sensing.smoothing, &mut rng)?;
                    if sel == 0 {
                        let p = out_dir.join("weight_map.csv");
                        write_weight_map_csv(&p, &grid, &r.weights)?;
                        files.push(p);
                    }
                    summary.push(RemSummaryRow {
                        selection: sel,
                        fraction: 0.2,
                        participating: r.participating.iter().filter(|&&p| p).count(),
                        pearson_linear: pearson(&r.weights, &field),
                    });
                }
                let p = out_dir.join("rem_summary.csv");
                write_rows(&p, &summary)?;
                files.push(p);
            }
            PresetName::CaseStudy => {
                let mut per_rows = Vec::new();
                let mut agg = Vec::new();
                for mode in OperationMode::ALL {
                    let run = case_study(&scenario, &inputs, mode, realizations, seed)?;
                    for (r, arms) in run.per_realization.iter().enumerate() {
                        for a in arms {
                            per_rows.push(CaseStudyRealizationRow {
                                mode: mode.as_str().to_string(),
                                realization: r as u64,
                                scheme: a.label.clone(),
                                devices_served: a.report.devices_served,
                                utilization: a.report.utilization_ratio,
                                misdetection: a.report.misdetection_prob,
                                sum_rate_bps: a.report.sum_rate_bps,
                                mean_inr_db: a.report.mean_inr_db_at_incumbents,
                            });
                        }
                    }
                    for (scheme, mean) in run.mean_devices_served() {
                        agg.push(CaseStudyRow {
                            mode: mode.as_str().to_string(),
                            scheme,
                            realizations,
                            mean_devices_served: mean,
                        });
                    }
                }
                let p = out_dir.join("case_study_realizations.csv");
                write_rows(&p, &per_rows)?;
                files.push(p);
                let p = out_dir.join("case_study.csv");
                write_rows(&p, &agg)?;
                files.push(p);
            }
        }
        Ok(())
    })?;

    let mut digests = Vec::with_capacity(files.len());
    for p in &files {
        let bytes = std::fs::read(p).map_err(|e| io_err(p, e))?;
        digests.push(FileDigest {
            path: p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = RunManifest {
        preset: preset.name.as_str().to_string(),
        scenario_sha256: sha256_hex(scenario_json.as_bytes()),
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        realizations,
        parallelism: opts.parallelism,
        files: digests,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let p = out_dir.join("manifest.json");
    std::fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| io_err(&p, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CaseStudyRealizationRow {
    mode: String,
    realization: u64,
    scheme: String,
    devices_served: usize,
    utilization: f64,
    misdetection: f64,
    sum_rate_bps: f64,
    mean_inr_db: Option<f64>,
}
