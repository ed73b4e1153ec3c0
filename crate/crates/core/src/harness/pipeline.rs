use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ScenarioInputs;
use crate::allocation::{
    compute_rewards, dual_decomposition, fast_allocate, noncoop_allocate, schedule_devices, solve_centralized,
    DualOptions, Grants, RewardMatrix,
};
use crate::error::{invalid, Result};
use crate::metrics::{devices_served, inr_at_incumbents, sum_rate, BlockCounts, GroundTruth, MetricsReport, UplinkModel};
use crate::model::{
    associate_devices, build_neighborhoods, mean_neighborhood_size, neighbor_lists, place_grid, place_random,
    BaseStation, DeploymentKind, Incumbent, Point, Scenario, SpectrumPlan,
};
use crate::propagation::{assign_reference_powers, dbm_to_mw, link_gain, IncumbentLinks, ReceivedPowerTable};
use crate::rng::{sample_key, stream, sub_stream, Purpose};
use crate::scheduler::{assignment_to_channels, heuristic_schedule, uniform_counts, AssignmentInstance};
use crate::sensing::{
    centralized_cluster_count, cluster_labels, noncoop_narrowband_channels, run_scheme, Scheme, SchemeOutcome,
    SensingContext, SensingNetwork, SensingParams,
};

/// Cap on extra devices dropped to give every BS its minimum load.
const DEVICE_TOP_UP_FACTOR: usize = 1000;

/// Everything drawn for one Monte Carlo realization. Topology, incumbents,
/// links and samples come from purpose-specific streams, so every scheme
/// evaluated on it sees the same randomness.
#[derive(Debug, Clone)]
pub struct Realization {
    pub index: u64,
    pub seed: u64,
    pub plan: SpectrumPlan,
    pub bs: Vec<BaseStation>,
    pub positions: Vec<Point>,
    pub neighbors: Vec<Vec<usize>>,
    pub network: SensingNetwork,
    pub incumbents: Vec<Incumbent>,
    pub links: IncumbentLinks,
    pub table: ReceivedPowerTable,
    pub tau_mw: f64,
    pub truth: GroundTruth,
    pub assigned_channels: Vec<Vec<usize>>,
    pub random_channels: Vec<Vec<usize>>,
    pub clusters: Vec<usize>,
    pub sample_key: u64,
    pub devices: Vec<Point>,
    pub associations: Vec<usize>,
    pub uplink: Option<UplinkModel>,
}

impl Realization {
    pub fn sensing_params(&self, scenario: &Scenario) -> SensingParams {
        SensingParams {
            smoothing: scenario.sensing.smoothing,
            iterations: scenario.sensing.iterations,
            initial_weight: 0.0,
        }
    }

    pub fn context<'a>(&'a self, scenario: &Scenario) -> SensingContext<'a> {
        SensingContext {
            network: &self.network,
            positions: &self.positions,
            table: &self.table,
            params: self.sensing_params(scenario),
            tau_mw: self.tau_mw,
            sample_key: self.sample_key,
            assigned_channels: Some(&self.assigned_channels),
            random_channels: Some(&self.random_channels),
            clusters: Some(&self.clusters),
        }
    }
}

fn place_bs(scenario: &Scenario, inputs: &ScenarioInputs, seed: u64, r: u64) -> Result<Vec<BaseStation>> {
    let d = &scenario.deployment;
    match d.kind {
        DeploymentKind::Grid => place_grid(d.num_bs, scenario.area(), d.height_m),
        DeploymentKind::Random => place_random(d.num_bs, scenario.area(), d.height_m, &mut stream(seed, r, Purpose::Topology)),
        DeploymentKind::Csv => {
            let sites = inputs.bs_sites.as_ref().ok_or_else(|| invalid("BS site table not loaded"))?;
            Ok(sites
                .positions
                .iter()
                .enumerate()
                .map(|(i, p)| BaseStation::new(i, Point::new(p[0], p[1], d.height_m)))
                .collect())
        }
    }
}

/// Draws incumbents: positions from the site table when present (otherwise
/// uniform over the area), then power, bandwidth, channel block and
/// activity per realization.
pub fn draw_incumbents<R: Rng + ?Sized>(
    scenario: &Scenario,
    plan: &SpectrumPlan,
    sites: Option<&[[f64; 2]]>,
    rng: &mut R,
) -> Vec<Incumbent> {
    let cfg = &scenario.incumbents;
    let area = scenario.area();
    let count = sites.map_or(cfg.count, |s| s.len());
    let mut out = Vec::with_capacity(count);
    for id in 0..count {
        let position = match sites {
            Some(s) => Point::new(s[id][0], s[id][1], cfg.height_m),
            None => area.sample(cfg.height_m, rng),
        };
        let tx_power_dbm = if cfg.tx_power_dbm_max > cfg.tx_power_dbm_min {
            rng.random_range(cfg.tx_power_dbm_min..=cfg.tx_power_dbm_max)
        } else {
            cfg.tx_power_dbm_min
        };
        let bandwidth_hz = if cfg.bandwidths_hz.is_empty() {
            plan.channel_bandwidth_hz
        } else {
            cfg.bandwidths_hz[rng.random_range(0..cfg.bandwidths_hz.len())]
        };
        let num_channels = ((bandwidth_hz / plan.channel_bandwidth_hz).round() as usize).clamp(1, plan.num_channels);
        let first_channel = rng.random_range(0..=plan.num_channels - num_channels);
        let active = cfg.activity_probability >= 1.0 || rng.random::<f64>() < cfg.activity_probability;
        out.push(Incumbent {
            id,
            position,
            tx_power_dbm,
            first_channel,
            num_channels,
            bandwidth_hz,
            active,
        });
    }
    out
}

/// Drops `count` uniform devices, then keeps dropping until every BS has
/// `min_per_bs` associated devices (bounded by a safety cap).
fn drop_devices(scenario: &Scenario, bs: &[BaseStation], seed: u64, r: u64) -> Result<(Vec<Point>, Vec<usize>)> {
    let cfg = &scenario.devices;
    if cfg.count == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut rng = stream(seed, r, Purpose::Devices);
    let area = scenario.area();
    let mut devices: Vec<Point> = (0..cfg.count).map(|_| area.sample(cfg.height_m, &mut rng)).collect();
    let mut assoc = associate_devices(&devices, bs)?;
    let mut load = vec![0usize; bs.len()];
    for &k in &assoc {
        load[k] += 1;
    }
    let cap = cfg.count + DEVICE_TOP_UP_FACTOR * bs.len() * cfg.min_per_bs.max(1);
    while load.iter().any(|&l| l < cfg.min_per_bs) && devices.len() < cap {
        let p = area.sample(cfg.height_m, &mut rng);
        let k = associate_devices(std::slice::from_ref(&p), bs)?[0];
        load[k] += 1;
        devices.push(p);
        assoc.push(k);
    }
    Ok((devices, assoc))
}

/// Builds realization `r` of `scenario` under `seed`.
pub fn build_realization(scenario: &Scenario, inputs: &ScenarioInputs, seed: u64, r: u64) -> Result<Realization> {
    let plan = scenario.spectrum_plan()?;
    let params = &scenario.channel_model;
    let fc = plan.center_frequency_hz;
    let mut bs = place_bs(scenario, inputs, seed, r)?;
    build_neighborhoods(&mut bs, scenario.neighborhood_radius_m);
    assign_reference_powers(
        &mut bs,
        scenario.deployment.bs_tx_power_dbm,
        fc,
        params,
        &mut stream(seed, r, Purpose::ReferencePower),
    );
    for b in &mut bs {
        b.step_size = scenario.sensing.step_size;
    }
    let k_n = bs.len();
    let positions: Vec<Point> = bs.iter().map(|b| b.position).collect();
    let neighbors = neighbor_lists(&bs);

    let sites = inputs.incumbent_sites.as_ref().map(|t| t.positions.as_slice());
    let incumbents = draw_incumbents(scenario, &plan, sites, &mut stream(seed, r, Purpose::Incumbents));
    let links = IncumbentLinks::draw(&bs, &incumbents, fc, params, &mut stream(seed, r, Purpose::Links));
    let noise_mw = params.noise_power(plan.channel_bandwidth_hz);
    let table = ReceivedPowerTable::new(
        &bs,
        &incumbents,
        &links,
        plan.num_channels,
        plan.channel_bandwidth_hz,
        noise_mw,
        scenario.contribution_prune_ratio,
    );
    let tau_mw = scenario.channel_threshold_mw();
    let truth = GroundTruth::from_table(&table, tau_mw);

    let inst = AssignmentInstance::from_positions(&positions, uniform_counts(k_n, plan.num_bands))?;
    let assignment = heuristic_schedule(
        &inst,
        &positions,
        scenario.algorithms.scheduler_restarts,
        &mut stream(seed, r, Purpose::Scheduling),
    )?;
    for (b, &l) in bs.iter_mut().zip(&assignment.matrix.bands) {
        b.assigned_band = Some(l);
        b.assigned_channels = plan.band_channels(l).collect();
    }
    let assigned_channels = assignment_to_channels(&assignment.matrix, &plan);
    let random_channels = noncoop_narrowband_channels(&plan, k_n, &mut stream(seed, r, Purpose::Misc));
    let cluster_count = scenario
        .algorithms
        .centralized_clusters
        .unwrap_or_else(|| centralized_cluster_count(k_n, mean_neighborhood_size(&bs)))
        .clamp(1, k_n);
    let clusters = cluster_labels(&positions, cluster_count, &mut stream(seed, r, Purpose::Clustering))?;
    let network = SensingNetwork::from_base_stations(&bs)?;

    let (devices, associations) = drop_devices(scenario, &bs, seed, r)?;
    let uplink = if devices.is_empty() {
        None
    } else {
        let mut rng = sub_stream(seed, r, Purpose::Links, 1);
        let mut device_bs_gain = Vec::with_capacity(devices.len() * k_n);
        let mut device_incumbent_gain = Vec::with_capacity(devices.len() * incumbents.len());
        for d in &devices {
            for b in &bs {
                device_bs_gain.push(link_gain(d, &b.position, fc, params, &mut rng).gain());
            }
            for inc in &incumbents {
                device_incumbent_gain.push(link_gain(d, &inc.position, fc, params, &mut rng).gain());
            }
        }
        Some(UplinkModel {
            num_devices: devices.len(),
            num_bs: k_n,
            num_incumbents: incumbents.len(),
            device_tx_mw: dbm_to_mw(scenario.devices.tx_power_dbm),
            device_bs_gain,
            device_incumbent_gain,
            channel_bandwidth_hz: plan.channel_bandwidth_hz,
            noise_mw,
        })
    };

    Ok(Realization {
        index: r,
        seed,
        plan,
        bs,
        positions,
        neighbors,
        network,
        incumbents,
        links,
        table,
        tau_mw,
        truth,
        assigned_channels,
        random_channels,
        clusters,
        sample_key: sample_key(seed, r),
        devices,
        associations,
        uplink,
    })
}

/// How grants are derived from a scheme's decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocator {
    /// Fast reward propagation.
    Fast,
    /// Exact per-channel optimum.
    Centralized,
    /// Price-based iterations.
    Dual,
    /// Every sensed, available channel is taken without coordination.
    Noncoop,
    /// Every channel decided available is used (no exclusivity).
    Decisions,
}

impl Allocator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Allocator::Fast => "fast",
            Allocator::Centralized => "centralized",
            Allocator::Dual => "dual",
            Allocator::Noncoop => "noncoop",
            Allocator::Decisions => "decisions",
        }
    }

    /// Default allocator paired with a sensing scheme.
    pub fn default_for(scheme: Scheme) -> Allocator {
        match scheme {
            Scheme::DistributedWideband | Scheme::DistributedNarrowband => Allocator::Fast,
            Scheme::CentralizedEgc => Allocator::Centralized,
            Scheme::NoncoopWideband | Scheme::NoncoopNarrowband => Allocator::Noncoop,
        }
    }
}

/// A sensing scheme plus an allocation method, reported under `label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub scheme: Scheme,
    pub allocator: Allocator,
}

impl Arm {
    pub fn new(label: &str, scheme: Scheme, allocator: Allocator) -> Self {
        Arm {
            label: label.to_string(),
            scheme,
            allocator,
        }
    }

    /// The scheme under its own name with its default allocator.
    pub fn sensing(scheme: Scheme) -> Self {
        Arm::new(scheme.as_str(), scheme, Allocator::default_for(scheme))
    }
}

/// Rewards for any scheme: from the filtered energies of the recursion, or
/// from the time-averaged energies for centralized combining.
pub fn scheme_rewards(outcome: &SchemeOutcome, tau_mw: f64) -> Result<RewardMatrix> {
    if let Some(state) = &outcome.state {
        return compute_rewards(state, tau_mw);
    }
    let avg = outcome
        .average_energy
        .as_ref()
        .ok_or_else(|| invalid("scheme outcome carries neither state nor energies"))?;
    let d = &outcome.decisions;
    RewardMatrix::new(d.num_bs, d.num_channels, avg.iter().map(|&e| 10.0 * (tau_mw / e).log10()).collect())
}

/// Grants of `arm` given its scheme's outcome.
pub fn allocate(real: &Realization, scenario: &Scenario, arm: &Arm, outcome: &SchemeOutcome) -> Result<Grants> {
    let decisions = &outcome.decisions;
    Ok(match arm.allocator {
        Allocator::Noncoop => noncoop_allocate(decisions, &outcome.sensed.channel_lists())?,
        Allocator::Decisions => Grants {
            num_bs: decisions.num_bs,
            num_channels: decisions.num_channels,
            z: decisions.available.clone(),
        },
        Allocator::Fast => {
            let r = scheme_rewards(outcome, real.tau_mw)?;
            fast_allocate(&r, decisions, &real.neighbors, scenario.algorithms.fast_allocation_iterations)?.grants
        }
        Allocator::Centralized => {
            let r = scheme_rewards(outcome, real.tau_mw)?;
            solve_centralized(&r, decisions, &real.neighbors)?
        }
        Allocator::Dual => {
            let r = scheme_rewards(outcome, real.tau_mw)?;
            dual_decomposition(&r, decisions, &real.neighbors, &DualOptions::default())?.grants
        }
    })
}

/// Metrics of one arm in one realization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmMetrics {
    pub label: String,
    pub report: MetricsReport,
}

/// Evaluates every arm on one realization; each sensing scheme runs once
/// and is shared by the arms that use it.
pub fn evaluate_arms(real: &Realization, scenario: &Scenario, arms: &[Arm]) -> Result<Vec<ArmMetrics>> {
    let ctx = real.context(scenario);
    let mut outcomes: HashMap<Scheme, SchemeOutcome> = HashMap::new();
    let mut out = Vec::with_capacity(arms.len());
    for arm in arms {
        if let std::collections::hash_map::Entry::Vacant(e) = outcomes.entry(arm.scheme) {
            e.insert(run_scheme(&ctx, arm.scheme)?);
        }
        let outcome = &outcomes[&arm.scheme];
        let counts = BlockCounts::tally(&outcome.decisions, &real.truth);
        let mut report = MetricsReport {
            utilization_ratio: counts.utilization(),
            misdetection_prob: counts.misdetection(),
            counts,
            ..MetricsReport::default()
        };
        if let Some(uplink) = &real.uplink {
            let grants = allocate(real, scenario, arm, outcome)?;
            let schedule = schedule_devices(&grants, &real.associations)?;
            let rate = sum_rate(&schedule, uplink, |k, m| real.table.mean_signal(k, m))?;
            let inr = inr_at_incumbents(
                &schedule,
                uplink,
                &real.incumbents,
                scenario.channel_model.noise_psd_dbm_per_hz,
            )?;
            let active: Vec<f64> = inr.into_iter().flatten().collect();
            report.sum_rate_bps = rate.sum_rate_bps;
            report.mean_sinr_db = rate.mean_sinr_db;
            report.mean_inr_db_at_incumbents =
                (!active.is_empty()).then(|| active.iter().sum::<f64>() / active.len() as f64);
            report.devices_served = devices_served(&schedule, &real.truth);
            report.collisions = grants.collisions(&real.neighbors);
        }
        out.push(ArmMetrics {
            label: arm.label.clone(),
            report,
        });
    }
    Ok(out)
}
