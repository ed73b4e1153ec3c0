use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioInputs;
use super::pipeline::{build_realization, evaluate_arms, Allocator, Arm, ArmMetrics};
use crate::error::{invalid, Result};
use crate::model::{Area, DeploymentKind, Point, Scenario};
use crate::propagation::ReceivedPowerTable;
use crate::rng::{stream, Purpose, SampleRng};
use crate::scheduler::{
    heuristic_schedule, random_assignment, solve_exact_with, solve_lp_rounded, uniform_counts, AssignmentInstance,
    ExactOptions,
};
use crate::sensing::{run_diffusion, Scheme, SensedSet};

/// Random instances for the scheduler comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapStudyOptions {
    pub instances: usize,
    pub num_bs: usize,
    pub num_bands: usize,
    pub area_m: f64,
    pub restarts: usize,
}

impl Default for GapStudyOptions {
    fn default() -> Self {
        GapStudyOptions {
            instances: 100,
            num_bs: 48,
            num_bands: 4,
            area_m: 2000.0,
            restarts: 10,
        }
    }
}

/// Objectives of every method on one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub instance: usize,
    pub exact: f64,
    pub lp_rounded: f64,
    pub heuristic: f64,
    pub random: f64,
    pub exact_proven: bool,
    pub lp_integral: bool,
}

impl GapRow {
    pub fn lp_ratio(&self) -> f64 {
        self.lp_rounded / self.exact
    }

    pub fn heuristic_ratio(&self) -> f64 {
        self.heuristic / self.exact
    }

    pub fn random_ratio(&self) -> f64 {
        self.random / self.exact
    }
}

/// Exact, LP-rounded, heuristic and random assignments on uniform random
/// BS layouts with distance costs and equal band loads.
pub fn scheduler_gap_study(opts: &GapStudyOptions, seed: u64) -> Result<Vec<GapRow>> {
    if opts.instances == 0 || opts.num_bs == 0 || opts.num_bands == 0 || !(opts.area_m > 0.0) {
        return Err(invalid("gap study needs instances, BSs, bands and a positive area"));
    }
    let area = Area::square(opts.area_m);
    (0..opts.instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64, Purpose::Topology);
            let positions: Vec<Point> = (0..opts.num_bs).map(|_| area.sample(0.0, &mut rng)).collect();
            let inst = AssignmentInstance::from_positions(&positions, uniform_counts(opts.num_bs, opts.num_bands))?;
            let heur = heuristic_schedule(&inst, &positions, opts.restarts, &mut stream(seed, i as u64, Purpose::Scheduling))?;
            let lp = solve_lp_rounded(&inst)?;
            let random = random_assignment(&inst, &mut stream(seed, i as u64, Purpose::Misc));
            let exact = solve_exact_with(
                &inst,
                &ExactOptions {
                    warm_starts: vec![heur.matrix.bands.clone(), lp.matrix.bands.clone()],
                    ..ExactOptions::default()
                },
            )?;
            Ok(GapRow {
                instance: i,
                exact: exact.objective,
                lp_rounded: lp.objective,
                heuristic: heur.objective,
                random: random.objective,
                exact_proven: exact.stats.proven_optimal,
                lp_integral: lp.stats.lp_integral,
            })
        })
        .collect()
}

/// Deflection of the recursion output and of a single energy sample at the
/// BS of each distance rank (0 = nearest to the incumbent).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankDeflection {
    pub rank: usize,
    pub delta_w: f64,
    pub delta_y: f64,
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

fn deflection(present: &[f64], absent: &[f64]) -> f64 {
    let (m1, _) = moments(present);
    let (m0, v0) = moments(absent);
    if v0 > 0.0 {
        (m1 - m0).abs() / v0.sqrt()
    } else {
        0.0
    }
}

/// Runs the full diffusion recursion with the incumbent on and off on each
/// realization (paired noise draws) and reports the per-rank deflection of
/// `w_{k,0,N}` and of the last energy sample `Y_{k,0,N}`. The scenario must
/// have exactly one incumbent; channel 0 is evaluated.
pub fn scenario_deflection(
    scenario: &Scenario,
    inputs: &ScenarioInputs,
    realizations: usize,
    seed: u64,
) -> Result<Vec<RankDeflection>> {
    if scenario.incumbents.count != 1 || scenario.incumbents.csv_path.is_some() {
        return Err(invalid("the per-BS deflection study needs exactly one randomly placed incumbent"));
    }
    if realizations < 2 {
        return Err(invalid("the per-BS deflection study needs at least two realizations"));
    }
    let n_iter = scenario.sensing.iterations;
    let per_real: Vec<[Vec<f64>; 4]> = (0..realizations as u64)
        .into_par_iter()
        .map(|r| {
            let mut real = build_realization(scenario, inputs, seed, r)?;
            real.incumbents[0].active = true;
            let ctx_params = real.sensing_params(scenario);
            let k_n = real.bs.len();
            let build = |active: bool| {
                let mut inc = real.incumbents.clone();
                inc[0].active = active;
                ReceivedPowerTable::new(
                    &real.bs,
                    &inc,
                    &real.links,
                    real.plan.num_channels,
                    real.plan.channel_bandwidth_hz,
                    real.table.noise_mw,
                    scenario.contribution_prune_ratio,
                )
            };
            let sensed = SensedSet::all(k_n, real.plan.num_channels);
            let mut order: Vec<usize> = (0..k_n).collect();
            let pos = real.incumbents[0].position;
            order.sort_by(|&a, &b| real.positions[a].dist3d(&pos).total_cmp(&real.positions[b].dist3d(&pos)));
            let mut out: [Vec<f64>; 4] = Default::default();
            for (h, active) in [(0usize, false), (1, true)] {
                let table = build(active);
                let sample = |k: usize, m: usize, i: usize| {
                    let mut rng = SampleRng::new(real.sample_key, k, m, i);
                    table.energy_sample(k, m, &mut rng).value
                };
                let state = run_diffusion(&real.network, &sensed, &ctx_params, sample)?;
                out[h] = order.iter().map(|&k| state.w(k, 0)).collect();
                out[2 + h] = order.iter().map(|&k| sample(k, 0, n_iter)).collect();
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let k_n = per_real[0][0].len();
    Ok((0..k_n)
        .map(|rank| {
            let col = |h: usize| per_real.iter().map(|v| v[h][rank]).collect::<Vec<f64>>();
            RankDeflection {
                rank,
                delta_w: deflection(&col(1), &col(0)),
                delta_y: deflection(&col(3), &col(2)),
            }
        })
        .collect())
}

/// Channelization of the case study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationMode {
    /// 1.4 MHz channels, 350 of them.
    LteM,
    /// 180 kHz channels, 2775 of them.
    NbIot,
}

impl OperationMode {
    pub const ALL: [OperationMode; 2] = [OperationMode::LteM, OperationMode::NbIot];

    pub fn as_str(&self) -> &'static str {
        match self {
            OperationMode::LteM => "lte_m",
            OperationMode::NbIot => "nb_iot",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown operation mode `{s}` (expected lte_m or nb_iot)")))
    }

    pub fn channel_bandwidth_hz(&self) -> f64 {
        match self {
            OperationMode::LteM => 1.4e6,
            OperationMode::NbIot => 180e3,
        }
    }

    pub fn num_channels(&self) -> usize {
        match self {
            OperationMode::LteM => 350,
            OperationMode::NbIot => 2775,
        }
    }
}

/// Bands of roughly 20 MHz each in the case study.
pub const CASE_STUDY_BANDS: usize = 25;

/// Applies a mode's channelization to `base`: `M·b` total bandwidth split
/// into [`CASE_STUDY_BANDS`] bands.
pub fn case_study_scenario(base: &Scenario, mode: OperationMode) -> Scenario {
    let mut s = base.clone();
    s.spectrum.channel_bandwidth_hz = mode.channel_bandwidth_hz();
    s.spectrum.total_bandwidth_hz = mode.channel_bandwidth_hz() * mode.num_channels() as f64;
    s.spectrum.num_bands = CASE_STUDY_BANDS;
    s
}

/// Arms of the case study; every channel a scheme declares available is used.
pub fn case_study_arms() -> Vec<Arm> {
    [Scheme::DistributedNarrowband, Scheme::NoncoopNarrowband, Scheme::NoncoopWideband]
        .into_iter()
        .map(|s| Arm::new(s.as_str(), s, Allocator::Decisions))
        .collect()
}

/// Per-realization metrics of one case-study mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStudyRun {
    pub mode: OperationMode,
    pub per_realization: Vec<Vec<ArmMetrics>>,
}

impl CaseStudyRun {
    /// Mean devices served per arm label, in arm order.
    pub fn mean_devices_served(&self) -> Vec<(String, f64)> {
        let Some(first) = self.per_realization.first() else {
            return Vec::new();
        };
        let n = self.per_realization.len() as f64;
        first
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let total: usize = self.per_realization.iter().map(|r| r[i].report.devices_served).sum();
                (a.label.clone(), total as f64 / n)
            })
            .collect()
    }
}

/// Runs the case study for one mode. When incumbent sites are loaded and the
/// BS layout is not from a file, the area grows to cover every site.
pub fn case_study(base: &Scenario, inputs: &ScenarioInputs, mode: OperationMode, realizations: usize, seed: u64) -> Result<CaseStudyRun> {
    let mut scenario = case_study_scenario(base, mode);
    if let Some(sites) = &inputs.incumbent_sites {
        if scenario.deployment.kind != DeploymentKind::Csv {
            let e = sites.extent();
            scenario.deployment.area_m = [scenario.deployment.area_m[0].max(e[0]), scenario.deployment.area_m[1].max(e[1])];
        }
    }
    scenario.validate()?;
    let arms = case_study_arms();
    let per_realization = (0..realizations as u64)
        .into_par_iter()
        .map(|r| {
            let real = build_realization(&scenario, inputs, seed, r)?;
            evaluate_arms(&real, &scenario, &arms)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CaseStudyRun { mode, per_realization })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_channelization() {
        let s = case_study_scenario(&Scenario::default(), OperationMode::LteM);
        let plan = s.spectrum_plan().unwrap();
        assert_eq!((plan.num_channels, plan.channels_per_band), (350, 14));
        let s = case_study_scenario(&Scenario::default(), OperationMode::NbIot);
        let plan = s.spectrum_plan().unwrap();
        assert_eq!((plan.num_channels, plan.channels_per_band), (2775, 111));
        assert_eq!(OperationMode::parse("nb_iot").unwrap(), OperationMode::NbIot);
        assert!(OperationMode::parse("5g").is_err());
    }

    #[test]
    fn gap_study_small() {
        let opts = GapStudyOptions {
            instances: 4,
            num_bs: 12,
            num_bands: 3,
            area_m: 1000.0,
            restarts: 3,
        };
        let rows = scheduler_gap_study(&opts, 5).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!(r.exact <= r.heuristic * (1.0 + 1e-9) && r.exact <= r.lp_rounded * (1.0 + 1e-9));
            assert!(r.exact <= r.random * (1.0 + 1e-9));
        }
        assert_eq!(rows, scheduler_gap_study(&opts, 5).unwrap());
    }

    #[test]
    fn zero_devices_schedule_nothing() {
        let mut s = Scenario::default();
        s.deployment.num_bs = 4;
        s.deployment.area_m = [400.0, 400.0];
        s.incumbents.count = 2;
        s.sensing.iterations = 20;
        let run = case_study(&s, &ScenarioInputs::default(), OperationMode::LteM, 2, 1).unwrap();
        assert!(run.mean_devices_served().iter().all(|(_, v)| *v == 0.0));
    }
}
