//! Evaluation quantities: block-level detection accuracy against the genie,
//! uplink sum rate, interference at incumbents and scheduled devices.

use serde::Serialize;

use crate::allocation::ChannelGrant;
use crate::error::{invalid, Result};
use crate::model::Incumbent;
use crate::propagation::ReceivedPowerTable;
use crate::sensing::DecisionMap;

/// Reported INR when no IoT transmission reaches an incumbent.
pub const INR_FLOOR_DB: f64 = -60.0;

/// True availability: mean incumbent power plus noise at most `τ`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundTruth {
    pub num_bs: usize,
    pub num_channels: usize,
    pub available: Vec<bool>,
}

impl GroundTruth {
    pub fn from_table(table: &ReceivedPowerTable, tau_mw: f64) -> Self {
        let mut available = Vec::with_capacity(table.num_bs * table.num_channels);
        for k in 0..table.num_bs {
            for m in 0..table.num_channels {
                available.push(table.mean_energy(k, m) <= tau_mw);
            }
        }
        GroundTruth {
            num_bs: table.num_bs,
            num_channels: table.num_channels,
            available,
        }
    }

    pub fn get(&self, k: usize, m: usize) -> bool {
        self.available[k * self.num_channels + m]
    }

    pub fn count_available(&self) -> usize {
        self.available.iter().filter(|&&a| a).count()
    }

    /// The genie's decisions.
    pub fn decisions(&self) -> DecisionMap {
        DecisionMap::new(self.num_bs, self.num_channels, self.available.clone())
    }
}

/// Confusion counts of declared availability against the truth. Counts
/// add across realizations, so pooled ratios come from summed counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BlockCounts {
    pub correct_available: usize,
    pub truly_available: usize,
    pub false_available: usize,
    pub truly_busy: usize,
}

impl BlockCounts {
    pub fn tally(declared: &DecisionMap, truth: &GroundTruth) -> Self {
        assert_eq!(declared.available.len(), truth.available.len(), "decision and truth sizes differ");
        let mut c = BlockCounts::default();
        for (&d, &t) in declared.available.iter().zip(&truth.available) {
            if t {
                c.truly_available += 1;
                c.correct_available += usize::from(d);
            } else {
                c.truly_busy += 1;
                c.false_available += usize::from(d);
            }
        }
        c
    }

    pub fn add(&mut self, other: &BlockCounts) {
        self.correct_available += other.correct_available;
        self.truly_available += other.truly_available;
        self.false_available += other.false_available;
        self.truly_busy += other.truly_busy;
    }

    /// 1 when nothing is truly available.
    pub fn utilization(&self) -> f64 {
        if self.truly_available == 0 {
            1.0
        } else {
            self.correct_available as f64 / self.truly_available as f64
        }
    }

    /// 0 when nothing is truly busy.
    pub fn misdetection(&self) -> f64 {
        if self.truly_busy == 0 {
            0.0
        } else {
            self.false_available as f64 / self.truly_busy as f64
        }
    }
}

/// Fraction of truly available blocks that are declared available.
pub fn utilization_ratio(declared: &DecisionMap, truth: &GroundTruth) -> f64 {
    BlockCounts::tally(declared, truth).utilization()
}

/// Fraction of truly busy blocks that are declared available.
pub fn misdetection_prob(declared: &DecisionMap, truth: &GroundTruth) -> f64 {
    BlockCounts::tally(declared, truth).misdetection()
}

/// Link gains needed to evaluate IoT uplinks.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkModel {
    pub num_devices: usize,
    pub num_bs: usize,
    pub num_incumbents: usize,
    pub device_tx_mw: f64,
    /// `device_bs_gain[d * K + k]`, linear.
    pub device_bs_gain: Vec<f64>,
    /// `device_incumbent_gain[d * J + j]`, linear.
    pub device_incumbent_gain: Vec<f64>,
    pub channel_bandwidth_hz: f64,
    /// Noise power over one channel.
    pub noise_mw: f64,
}

impl UplinkModel {
    pub fn check(&self) -> Result<()> {
        if self.device_bs_gain.len() != self.num_devices * self.num_bs
            || self.device_incumbent_gain.len() != self.num_devices * self.num_incumbents
        {
            return Err(invalid("uplink gain tables have the wrong size"));
        }
        if !(self.noise_mw > 0.0 && self.channel_bandwidth_hz > 0.0) {
            return Err(invalid("noise power and bandwidth must be positive"));
        }
        Ok(())
    }

    fn rx_at_bs(&self, d: usize, k: usize) -> f64 {
        self.device_tx_mw * self.device_bs_gain[d * self.num_bs + k]
    }

    fn rx_at_incumbent(&self, d: usize, j: usize) -> f64 {
        self.device_tx_mw * self.device_incumbent_gain[d * self.num_incumbents + j]
    }
}

/// Sum rate and mean SINR over scheduled links.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RateReport {
    pub sum_rate_bps: f64,
    /// Mean over scheduled devices; `None` when nothing is scheduled.
    pub mean_sinr_db: Option<f64>,
}

/// Uplink Shannon sum rate. Every granted channel carries one device per
/// slot in round-robin, so its rate is the average of its devices' rates;
/// co-channel grants elsewhere interfere with their average received power.
/// `incumbent_mw(k, m)` is the incumbent power at BS `k` on channel `m`.
pub fn sum_rate<F>(schedule: &[ChannelGrant], model: &UplinkModel, incumbent_mw: F) -> Result<RateReport>
where
    F: Fn(usize, usize) -> f64,
{
    model.check()?;
    let mut total = 0.0;
    let mut sinr_db_sum = 0.0;
    let mut devices = 0usize;
    for g in schedule {
        if g.devices.is_empty() {
            continue;
        }
        let mut interference = model.noise_mw + incumbent_mw(g.bs, g.channel);
        for o in schedule {
            if o.channel == g.channel && o.bs != g.bs && !o.devices.is_empty() {
                interference += o.devices.iter().map(|&d| model.rx_at_bs(d, g.bs)).sum::<f64>() / o.devices.len() as f64;
            }
        }
        let mut rate = 0.0;
        for &d in &g.devices {
            let sinr = model.rx_at_bs(d, g.bs) / interference;
            rate += model.channel_bandwidth_hz * (1.0 + sinr).log2();
            sinr_db_sum += 10.0 * sinr.log10();
            devices += 1;
        }
        total += rate / g.devices.len() as f64;
    }
    Ok(RateReport {
        sum_rate_bps: total,
        mean_sinr_db: (devices > 0).then(|| sinr_db_sum / devices as f64),
    })
}

/// INR in dB at every incumbent: average co-channel IoT power over its
/// occupied channels divided by the noise over its bandwidth, floored at
/// [`INR_FLOOR_DB`]. Inactive incumbents yield `None`.
pub fn inr_at_incumbents(
    schedule: &[ChannelGrant],
    model: &UplinkModel,
    incumbents: &[Incumbent],
    noise_psd_dbm_per_hz: f64,
) -> Result<Vec<Option<f64>>> {
    model.check()?;
    if incumbents.len() != model.num_incumbents {
        return Err(invalid("incumbent list and gain table disagree"));
    }
    let mut out = Vec::with_capacity(incumbents.len());
    for (j, inc) in incumbents.iter().enumerate() {
        if !inc.active {
            out.push(None);
            continue;
        }
        let mut power = 0.0;
        for g in schedule {
            if inc.occupies(g.channel) && !g.devices.is_empty() {
                power += g.devices.iter().map(|&d| model.rx_at_incumbent(d, j)).sum::<f64>() / g.devices.len() as f64;
            }
        }
        let noise = crate::propagation::noise_power_with_psd(inc.bandwidth_hz, noise_psd_dbm_per_hz);
        out.push(Some(inr_db(power, noise)));
    }
    Ok(out)
}

/// `10·log10(power / noise)` floored at [`INR_FLOOR_DB`].
pub fn inr_db(power_mw: f64, noise_mw: f64) -> f64 {
    if power_mw <= 0.0 {
        return INR_FLOOR_DB;
    }
    (10.0 * (power_mw / noise_mw).log10()).max(INR_FLOOR_DB)
}

/// Devices transmitting in one slot on truly available channels: each
/// granted, truly available channel with at least one device serves one.
pub fn devices_served(schedule: &[ChannelGrant], truth: &GroundTruth) -> usize {
    schedule
        .iter()
        .filter(|g| !g.devices.is_empty() && truth.get(g.bs, g.channel))
        .count()
}

/// Pearson correlation; 0 when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Metrics of one scheme in one realization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub utilization_ratio: f64,
    pub misdetection_prob: f64,
    pub sum_rate_bps: f64,
    pub mean_sinr_db: Option<f64>,
    pub mean_inr_db_at_incumbents: Option<f64>,
    pub devices_served: usize,
    pub collisions: usize,
    pub counts: BlockCounts,
}
