//! Link budget and the received-energy measurement model
//! `Y = V + Σ_j S_j` (noise plus incumbent powers with Rayleigh fading).

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{BaseStation, Incumbent, Point};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Thermal noise power over `bandwidth_hz` at the given PSD, in mW.
pub fn noise_power_with_psd(bandwidth_hz: f64, psd_dbm_per_hz: f64) -> f64 {
    dbm_to_mw(psd_dbm_per_hz + 10.0 * bandwidth_hz.log10())
}

/// Thermal noise power at −174 dBm/Hz, in mW.
pub fn noise_power(bandwidth_hz: f64) -> f64 {
    noise_power_with_psd(bandwidth_hz, -174.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// 3GPP TR 38.901 UMi street canyon.
    UmiStreetCanyon,
    /// `PL(d) = PL(1 m) + 10·n·log10(d)`, always LOS.
    LogDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelModelParams {
    pub kind: ModelKind,
    /// Log-distance exponent `n`.
    pub exponent: f64,
    /// Log-distance loss at 1 m; `None` uses free space at the carrier.
    pub reference_loss_db: Option<f64>,
    pub shadowing_std_los_db: f64,
    pub shadowing_std_nlos_db: f64,
    pub shadowing_enabled: bool,
    /// LOS probability `min(1, d1/d)·(1 − e^{−d/d2}) + e^{−d/d2}` parameters.
    pub los_d1_m: f64,
    pub los_d2_m: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub min_distance_m: f64,
}

impl Default for ChannelModelParams {
    fn default() -> Self {
        ChannelModelParams {
            kind: ModelKind::UmiStreetCanyon,
            exponent: 2.0,
            reference_loss_db: None,
            shadowing_std_los_db: 4.0,
            shadowing_std_nlos_db: 7.82,
            shadowing_enabled: true,
            los_d1_m: 18.0,
            los_d2_m: 36.0,
            noise_psd_dbm_per_hz: -174.0,
            min_distance_m: 1.0,
        }
    }
}

impl ChannelModelParams {
    pub fn log_distance(exponent: f64, shadowing_std_db: f64) -> Self {
        ChannelModelParams {
            kind: ModelKind::LogDistance,
            exponent,
            shadowing_std_los_db: shadowing_std_db,
            shadowing_std_nlos_db: shadowing_std_db,
            shadowing_enabled: shadowing_std_db > 0.0,
            ..Default::default()
        }
    }

    pub fn without_shadowing(mut self) -> Self {
        self.shadowing_enabled = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.shadowing_std_los_db < 0.0 || self.shadowing_std_nlos_db < 0.0 {
            return Err(invalid("shadowing standard deviations must be nonnegative"));
        }
        if !(self.exponent > 0.0) {
            return Err(invalid("path-loss exponent must be positive"));
        }
        if !(self.min_distance_m > 0.0 && self.los_d1_m > 0.0 && self.los_d2_m > 0.0) {
            return Err(invalid("distance parameters must be positive"));
        }
        Ok(())
    }

    pub fn noise_power(&self, bandwidth_hz: f64) -> f64 {
        noise_power_with_psd(bandwidth_hz, self.noise_psd_dbm_per_hz)
    }

    /// LOS probability at horizontal distance `d2d`.
    pub fn los_probability(&self, d2d: f64) -> f64 {
        match self.kind {
            ModelKind::LogDistance => 1.0,
            ModelKind::UmiStreetCanyon => {
                if d2d <= self.los_d1_m {
                    1.0
                } else {
                    let r = self.los_d1_m / d2d;
                    let e = (-d2d / self.los_d2_m).exp();
                    r + e * (1.0 - r)
                }
            }
        }
    }

    /// Deterministic path loss in dB (no shadowing).
    pub fn path_loss_db(&self, tx: &Point, rx: &Point, freq_hz: f64, los: bool) -> f64 {
        let d2d = tx.dist2d(rx).max(self.min_distance_m);
        let d3d = tx.dist3d(rx).max(self.min_distance_m);
        let fc_ghz = freq_hz / 1e9;
        match self.kind {
            ModelKind::LogDistance => {
                let pl0 = self
                    .reference_loss_db
                    .unwrap_or_else(|| 20.0 * (4.0 * std::f64::consts::PI * freq_hz / SPEED_OF_LIGHT).log10());
                pl0 + 10.0 * self.exponent * d3d.log10()
            }
            ModelKind::UmiStreetCanyon => {
                let h_bs = tx.z.max(rx.z);
                let h_ut = tx.z.min(rx.z);
                let pl_los = umi_los(d2d, d3d, h_bs, h_ut, freq_hz);
                if los {
                    pl_los
                } else {
                    let pl_nlos = 35.3 * d3d.log10() + 22.4 + 21.3 * fc_ghz.log10() - 0.3 * (h_ut - 1.5);
                    pl_los.max(pl_nlos)
                }
            }
        }
    }

    fn shadowing_std(&self, los: bool) -> f64 {
        if !self.shadowing_enabled {
            0.0
        } else if los {
            self.shadowing_std_los_db
        } else {
            self.shadowing_std_nlos_db
        }
    }
}

/// UMi street-canyon LOS path loss with the breakpoint distance computed from
/// effective antenna heights (`h_E = 1 m`).
fn umi_los(d2d: f64, d3d: f64, h_bs: f64, h_ut: f64, freq_hz: f64) -> f64 {
    let fc_ghz = freq_hz / 1e9;
    let hb = (h_bs - 1.0).max(0.0);
    let hu = (h_ut - 1.0).max(0.0);
    let d_bp = 4.0 * hb * hu * freq_hz / SPEED_OF_LIGHT;
    if d_bp <= 0.0 || d2d <= d_bp {
        32.4 + 21.0 * d3d.log10() + 20.0 * fc_ghz.log10()
    } else {
        32.4 + 40.0 * d3d.log10() + 20.0 * fc_ghz.log10() - 9.5 * (d_bp * d_bp + (h_bs - h_ut).powi(2)).log10()
    }
}

/// Large-scale state of one link, fixed for a realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub los: bool,
    pub path_loss_db: f64,
    pub shadowing_db: f64,
}

impl LinkState {
    /// Linear power gain (path loss times log-normal shadowing).
    pub fn gain(&self) -> f64 {
        10f64.powf((-self.path_loss_db + self.shadowing_db) / 10.0)
    }

    pub fn gain_db(&self) -> f64 {
        -self.path_loss_db + self.shadowing_db
    }
}

/// Draws the LOS state and shadowing of a link; the result is meant to be
/// stored and reused for every query within the realization.
pub fn link_gain<R: Rng + ?Sized>(tx: &Point, rx: &Point, freq_hz: f64, params: &ChannelModelParams, rng: &mut R) -> LinkState {
    let p_los = params.los_probability(tx.dist2d(rx).max(params.min_distance_m));
    let los = rng.random::<f64>() < p_los;
    let std = params.shadowing_std(los);
    let z: f64 = StandardNormal.sample(rng);
    LinkState {
        los,
        path_loss_db: params.path_loss_db(tx, rx, freq_hz, los),
        shadowing_db: std * z,
    }
}

/// Mean incumbent powers received at each BS on each channel for one
/// realization, with per-iteration Rayleigh fading applied at sampling time.
#[derive(Debug, Clone)]
pub struct ReceivedPowerTable {
    pub num_bs: usize,
    pub num_channels: usize,
    pub noise_mw: f64,
    /// `contributions[k * M + m]`: mean powers of active incumbents on `m` at `k`.
    contributions: Vec<Vec<f64>>,
    mean_signal: Vec<f64>,
}

impl ReceivedPowerTable {
    /// Builds the table from per-(incumbent, BS) link states. Contributions
    /// below `prune_ratio × noise` are dropped (0 keeps everything).
    pub fn new(
        bs: &[BaseStation],
        incumbents: &[Incumbent],
        links: &IncumbentLinks,
        num_channels: usize,
        channel_bandwidth_hz: f64,
        noise_mw: f64,
        prune_ratio: f64,
    ) -> Self {
        let k_count = bs.len();
        let mut contributions = vec![Vec::new(); k_count * num_channels];
        for (j, inc) in incumbents.iter().enumerate() {
            if !inc.active {
                continue;
            }
            let per_channel_mw = dbm_to_mw(inc.tx_power_dbm) * (channel_bandwidth_hz / inc.bandwidth_hz).min(1.0);
            for k in 0..k_count {
                let p = per_channel_mw * links.get(j, k).gain();
                if p < prune_ratio * noise_mw {
                    continue;
                }
                for m in inc.occupied_channels() {
                    if m < num_channels {
                        contributions[k * num_channels + m].push(p);
                    }
                }
            }
        }
        let mean_signal = contributions.iter().map(|c| c.iter().sum()).collect();
        ReceivedPowerTable {
            num_bs: k_count,
            num_channels,
            noise_mw,
            contributions,
            mean_signal,
        }
    }

    /// Fading-averaged incumbent power at BS `k` on channel `m`.
    pub fn mean_signal(&self, k: usize, m: usize) -> f64 {
        self.mean_signal[k * self.num_channels + m]
    }

    /// Mean energy `E[Y_{k,m}]` = noise + mean incumbent power.
    pub fn mean_energy(&self, k: usize, m: usize) -> f64 {
        self.noise_mw + self.mean_signal(k, m)
    }

    pub fn contributions(&self, k: usize, m: usize) -> &[f64] {
        &self.contributions[k * self.num_channels + m]
    }

    /// One energy sample: exponential noise energy plus each contribution
    /// scaled by an independent unit-mean Rayleigh power draw.
    pub fn energy_sample<R: Rng + ?Sized>(&self, k: usize, m: usize, rng: &mut R) -> EnergySample {
        let noise: f64 = Exp1.sample(rng);
        let mut v = self.noise_mw * noise;
        for &s in self.contributions(k, m) {
            let f: f64 = Exp1.sample(rng);
            v += s * f;
        }
        // an Exp(1) draw can be exactly zero; keep samples strictly positive
        if v <= 0.0 {
            v = f64::MIN_POSITIVE;
        }
        EnergySample {
            value: v,
            bs_id: k,
            channel_id: m,
        }
    }
}

/// One received-energy observation in linear mW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub value: f64,
    pub bs_id: usize,
    pub channel_id: usize,
}

/// Link states from every incumbent to every BS for a realization.
#[derive(Debug, Clone)]
pub struct IncumbentLinks {
    num_bs: usize,
    states: Vec<LinkState>,
}

impl IncumbentLinks {
    pub fn draw<R: Rng + ?Sized>(
        bs: &[BaseStation],
        incumbents: &[Incumbent],
        freq_hz: f64,
        params: &ChannelModelParams,
        rng: &mut R,
    ) -> Self {
        let mut states = Vec::with_capacity(bs.len() * incumbents.len());
        for inc in incumbents {
            for b in bs {
                states.push(link_gain(&inc.position, &b.position, freq_hz, params, rng));
            }
        }
        IncumbentLinks {
            num_bs: bs.len(),
            states,
        }
    }

    pub fn get(&self, incumbent: usize, bs: usize) -> &LinkState {
        &self.states[incumbent * self.num_bs + bs]
    }
}

/// Reference power `P̂_{k,j}` that BS `k` measures from BS `j`.
pub fn reference_power<R: Rng + ?Sized>(
    bs_k: &BaseStation,
    bs_j: &BaseStation,
    tx_power_dbm: f64,
    freq_hz: f64,
    params: &ChannelModelParams,
    rng: &mut R,
) -> Result<f64> {
    if bs_k.id == bs_j.id || !bs_k.neighbor_ids.contains(&bs_j.id) {
        return Err(invalid(format!("BS {} is not a neighbor of BS {}", bs_j.id, bs_k.id)));
    }
    let link = link_gain(&bs_j.position, &bs_k.position, freq_hz, params, rng);
    Ok(dbm_to_mw(tx_power_dbm) * link.gain())
}

/// Fills `ref_powers` on every BS. Each unordered pair is drawn once and the
/// same value is stored at both ends (reciprocal link).
pub fn assign_reference_powers<R: Rng + ?Sized>(
    bs: &mut [BaseStation],
    tx_power_dbm: f64,
    freq_hz: f64,
    params: &ChannelModelParams,
    rng: &mut R,
) {
    let n = bs.len();
    let index: std::collections::HashMap<usize, usize> = bs.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut table: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for k in 0..n {
        for &jid in &bs[k].neighbor_ids {
            let j = index[&jid];
            if j <= k {
                continue;
            }
            let p = reference_power(&bs[k], &bs[j], tx_power_dbm, freq_hz, params, rng)
                .expect("neighbor relation is checked above");
            table[k].push((bs[j].id, p));
            table[j].push((bs[k].id, p));
        }
    }
    for (b, mut t) in bs.iter_mut().zip(table) {
        t.sort_by_key(|e| e.0);
        b.ref_powers = t;
    }
}
