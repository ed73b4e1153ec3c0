use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{calibrate_thresholds, decide, run_diffusion, DecisionMap, SensedSet, SensingNetwork, SensingParams, SensingState};
use crate::error::{invalid, Result};
use crate::model::{Point, SpectrumPlan};
use crate::propagation::ReceivedPowerTable;
use crate::rng::SampleRng;
use crate::scheduler::kmeans;

/// Sensing scheme under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Diffusion with every BS sensing every channel.
    DistributedWideband,
    /// Diffusion with every BS sensing only its assigned band.
    DistributedNarrowband,
    /// Cluster heads average members' energies and decide for the cluster.
    CentralizedEgc,
    /// Local recursion on every channel, no combination.
    NoncoopWideband,
    /// Local recursion on one randomly chosen channel per BS.
    NoncoopNarrowband,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::DistributedWideband,
        Scheme::DistributedNarrowband,
        Scheme::CentralizedEgc,
        Scheme::NoncoopWideband,
        Scheme::NoncoopNarrowband,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::DistributedWideband => "distributed_wideband",
            Scheme::DistributedNarrowband => "distributed_narrowband",
            Scheme::CentralizedEgc => "centralized_egc",
            Scheme::NoncoopWideband => "noncoop_wideband",
            Scheme::NoncoopNarrowband => "noncoop_narrowband",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| invalid(format!("unsupported scheme `{s}`")))
    }
}

/// Everything a scheme needs for one realization.
#[derive(Debug, Clone)]
pub struct SensingContext<'a> {
    pub network: &'a SensingNetwork,
    pub positions: &'a [Point],
    pub table: &'a ReceivedPowerTable,
    pub params: SensingParams,
    /// Energy threshold per channel, linear mW.
    pub tau_mw: f64,
    /// Key of the counter-based sample streams (shared by all schemes).
    pub sample_key: u64,
    /// `M_k` from the sensing assignment (distributed narrowband).
    pub assigned_channels: Option<&'a [Vec<usize>]>,
    /// Randomly picked channel per BS (non-cooperative narrowband).
    pub random_channels: Option<&'a [Vec<usize>]>,
    /// Cluster label per BS (centralized).
    pub clusters: Option<&'a [usize]>,
}

/// Decisions of one scheme, with the recursion state when one exists.
#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub decisions: DecisionMap,
    pub sensed: SensedSet,
    pub state: Option<SensingState>,
    pub thresholds: Option<Vec<f64>>,
    /// Time-averaged energies `K×M` (centralized combining only).
    pub average_energy: Option<Vec<f64>>,
}

impl SensingContext<'_> {
    fn sample(&self, k: usize, m: usize, i: usize) -> f64 {
        let mut rng = SampleRng::new(self.sample_key, k, m, i);
        self.table.energy_sample(k, m, &mut rng).value
    }
}

/// Runs one scheme on the realization described by `ctx`.
pub fn run_scheme(ctx: &SensingContext<'_>, scheme: Scheme) -> Result<SchemeOutcome> {
    let k_n = ctx.network.num_bs();
    let m_n = ctx.table.num_channels;
    let (net, sensed) = match scheme {
        Scheme::DistributedWideband => (ctx.network.clone(), SensedSet::all(k_n, m_n)),
        Scheme::NoncoopWideband => (ctx.network.without_cooperation(), SensedSet::all(k_n, m_n)),
        Scheme::DistributedNarrowband => {
            let ch = ctx
                .assigned_channels
                .ok_or_else(|| invalid("distributed narrowband sensing needs a sensing assignment"))?;
            (ctx.network.clone(), SensedSet::from_channels(ch, m_n))
        }
        Scheme::NoncoopNarrowband => {
            let ch = ctx
                .random_channels
                .ok_or_else(|| invalid("non-cooperative narrowband sensing needs per-BS channel picks"))?;
            (ctx.network.without_cooperation(), SensedSet::from_channels(ch, m_n))
        }
        Scheme::CentralizedEgc => {
            let labels = ctx.clusters.ok_or_else(|| invalid("centralized sensing needs cluster labels"))?;
            let mut avg = vec![0.0; k_n * m_n];
            let n = ctx.params.iterations;
            for k in 0..k_n {
                for m in 0..m_n {
                    avg[k * m_n + m] = (1..=n).map(|i| ctx.sample(k, m, i)).sum::<f64>() / n as f64;
                }
            }
            let decisions = centralized_decide(&avg, m_n, labels, ctx.tau_mw)?;
            return Ok(SchemeOutcome {
                scheme,
                decisions,
                sensed: SensedSet::all(k_n, m_n),
                state: None,
                thresholds: None,
                average_energy: Some(avg),
            });
        }
    };
    let state = run_diffusion(&net, &sensed, &ctx.params, |k, m, i| ctx.sample(k, m, i))?;
    let thresholds = calibrate_thresholds(&net, &sensed, &ctx.params, ctx.tau_mw)?;
    let decisions = decide(&state, &thresholds);
    Ok(SchemeOutcome {
        scheme,
        decisions,
        sensed,
        state: Some(state),
        thresholds: Some(thresholds),
        average_energy: None,
    })
}

/// Equal-gain combining per cluster: the cluster head averages its members'
/// time-averaged energies (row-major `K×M`) and every member receives the
/// decision `average ≤ τ`.
pub fn centralized_decide(avg_energy: &[f64], num_channels: usize, labels: &[usize], tau_mw: f64) -> Result<DecisionMap> {
    let k_n = labels.len();
    if avg_energy.len() != k_n * num_channels {
        return Err(invalid("energy matrix does not match the cluster labels"));
    }
    let q = labels.iter().max().map_or(0, |&m| m + 1);
    let mut count = vec![0usize; q];
    for &l in labels {
        count[l] += 1;
    }
    if let Some(empty) = count.iter().position(|&c| c == 0) {
        return Err(invalid(format!("cluster {empty} has no members")));
    }
    let mut sums = vec![0.0; q * num_channels];
    for (k, &l) in labels.iter().enumerate() {
        for m in 0..num_channels {
            sums[l * num_channels + m] += avg_energy[k * num_channels + m];
        }
    }
    let available = (0..k_n)
        .flat_map(|k| (0..num_channels).map(move |m| (k, m)))
        .map(|(k, m)| {
            let l = labels[k];
            sums[l * num_channels + m] / count[l] as f64 <= tau_mw
        })
        .collect();
    Ok(DecisionMap::new(k_n, num_channels, available))
}

/// Number of centralized clusters: `round(K / mean |N_k|)`, at least one.
pub fn centralized_cluster_count(num_bs: usize, mean_neighborhood: f64) -> usize {
    if mean_neighborhood <= 0.0 {
        return num_bs.max(1);
    }
    ((num_bs as f64 / mean_neighborhood).round() as usize).clamp(1, num_bs.max(1))
}

/// k-means cluster label per BS.
pub fn cluster_labels<R: Rng + ?Sized>(positions: &[Point], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    let pts: Vec<[f64; 2]> = positions.iter().map(|p| [p.x, p.y]).collect();
    kmeans(&pts, count, rng)
}

/// One uniformly drawn band per BS (a single channel when bands hold one).
pub fn noncoop_narrowband_channels<R: Rng + ?Sized>(plan: &SpectrumPlan, num_bs: usize, rng: &mut R) -> Vec<Vec<usize>> {
    (0..num_bs)
        .map(|_| plan.band_channels(rng.random_range(0..plan.num_bands)).collect())
        .collect()
}
