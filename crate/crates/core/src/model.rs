//! Network topology, spectrum plan and scenario configuration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::propagation::ChannelModelParams;

/// A position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point { x, y, z }
    }

    /// Horizontal (2D) distance.
    pub fn dist2d(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// 3D distance.
    pub fn dist3d(&self, other: &Point) -> f64 {
        let dz = self.z - other.z;
        (self.dist2d(other).powi(2) + dz * dz).sqrt()
    }
}

/// Rectangular deployment area `[0, width] × [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width_m: f64,
    pub height_m: f64,
}

impl Area {
    pub fn new(width_m: f64, height_m: f64) -> Self {
        Area { width_m, height_m }
    }

    pub fn square(side_m: f64) -> Self {
        Area::new(side_m, side_m)
    }

    fn check(&self) -> Result<()> {
        if !(self.width_m > 0.0 && self.height_m > 0.0) || !self.width_m.is_finite() || !self.height_m.is_finite() {
            return Err(invalid(format!("degenerate area {}x{}", self.width_m, self.height_m)));
        }
        Ok(())
    }

    /// Uniform point in the area at height `z`.
    pub fn sample<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> Point {
        Point::new(
            rng.random::<f64>() * self.width_m,
            rng.random::<f64>() * self.height_m,
            z,
        )
    }
}

/// Channelization of the shared wideband spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPlan {
    pub total_bandwidth_hz: f64,
    pub channel_bandwidth_hz: f64,
    pub num_channels: usize,
    pub num_bands: usize,
    pub channels_per_band: usize,
    pub center_frequency_hz: f64,
}

impl SpectrumPlan {
    /// `M = floor(B/b)` channels grouped into `L` bands of `p = floor(M/L)` channels.
    pub fn new(total_bandwidth_hz: f64, channel_bandwidth_hz: f64, num_bands: usize, center_frequency_hz: f64) -> Result<Self> {
        if !(total_bandwidth_hz > 0.0 && channel_bandwidth_hz > 0.0 && center_frequency_hz > 0.0) {
            return Err(invalid("bandwidths and center frequency must be positive"));
        }
        if channel_bandwidth_hz > total_bandwidth_hz {
            return Err(invalid("channel bandwidth exceeds total bandwidth"));
        }
        // tolerate representation error such as 80e6 / 20e6 = 3.9999999
        let num_channels = (total_bandwidth_hz / channel_bandwidth_hz * (1.0 + 1e-12)).floor() as usize;
        if num_bands == 0 {
            return Err(invalid("number of bands must be at least 1"));
        }
        if num_bands > num_channels {
            return Err(invalid(format!("{num_bands} bands but only {num_channels} channels")));
        }
        let channels_per_band = num_channels / num_bands;
        Ok(SpectrumPlan {
            total_bandwidth_hz,
            channel_bandwidth_hz,
            num_channels,
            num_bands,
            channels_per_band,
            center_frequency_hz,
        })
    }

    /// Channels of band `l`: `[l·p, (l+1)·p)`.
    pub fn band_channels(&self, band: usize) -> std::ops::Range<usize> {
        band * self.channels_per_band..(band + 1) * self.channels_per_band
    }

    /// Channels not covered by any band (when `p·L < M`).
    pub fn unassigned_channels(&self) -> std::ops::Range<usize> {
        self.num_bands * self.channels_per_band..self.num_channels
    }
}

/// A base station of the IoT network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: usize,
    pub position: Point,
    /// Sorted neighbor ids, always including `id` itself.
    pub neighbor_ids: Vec<usize>,
    pub assigned_band: Option<usize>,
    /// Channels this BS senses (`M_k`).
    pub assigned_channels: Vec<usize>,
    pub step_size: f64,
    /// Measured reference powers `(neighbor id, mW)` for neighbors other than self.
    pub ref_powers: Vec<(usize, f64)>,
}

impl BaseStation {
    pub fn new(id: usize, position: Point) -> Self {
        BaseStation {
            id,
            position,
            neighbor_ids: vec![id],
            assigned_band: None,
            assigned_channels: Vec::new(),
            step_size: 0.01,
            ref_powers: Vec::new(),
        }
    }
}

/// An incumbent transmitter occupying a contiguous block of channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub id: usize,
    pub position: Point,
    pub tx_power_dbm: f64,
    pub first_channel: usize,
    pub num_channels: usize,
    /// Transmit bandwidth; the transmit power is spread evenly over it.
    pub bandwidth_hz: f64,
    pub active: bool,
}

impl Incumbent {
    pub fn occupied_channels(&self) -> std::ops::Range<usize> {
        self.first_channel..self.first_channel + self.num_channels
    }

    pub fn occupies(&self, channel: usize) -> bool {
        self.occupied_channels().contains(&channel)
    }
}

/// Grid deployment: `count` BSs on a rows×cols lattice centered in the area,
/// one BS per lattice cell.
pub fn place_grid(count: usize, area: Area, height_m: f64) -> Result<Vec<BaseStation>> {
    if count == 0 {
        return Err(invalid("BS count must be positive"));
    }
    area.check()?;
    let (rows, cols) = grid_shape(count);
    let dx = area.width_m / cols as f64;
    let dy = area.height_m / rows as f64;
    let mut out = Vec::with_capacity(count);
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            let p = Point::new((c as f64 + 0.5) * dx, (r as f64 + 0.5) * dy, height_m);
            out.push(BaseStation::new(id, p));
        }
    }
    Ok(out)
}

/// Most square `rows × cols = count` factorization with `rows ≤ cols`.
pub fn grid_shape(count: usize) -> (usize, usize) {
    let mut rows = (count as f64).sqrt().floor() as usize;
    while rows > 1 && !count.is_multiple_of(rows) {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, count / rows)
}

/// Random deployment: positions i.i.d. uniform over the area.
pub fn place_random<R: Rng + ?Sized>(count: usize, area: Area, height_m: f64, rng: &mut R) -> Result<Vec<BaseStation>> {
    if count == 0 {
        return Err(invalid("BS count must be positive"));
    }
    area.check()?;
    Ok((0..count).map(|id| BaseStation::new(id, area.sample(height_m, rng))).collect())
}

/// Sets `N_k = {j : dist(j,k) ≤ R} ∪ {k}` on every BS (horizontal distance).
pub fn build_neighborhoods(bs: &mut [BaseStation], radius_m: f64) {
    let positions: Vec<Point> = bs.iter().map(|b| b.position).collect();
    let ids: Vec<usize> = bs.iter().map(|b| b.id).collect();
    for (k, b) in bs.iter_mut().enumerate() {
        let mut nb: Vec<usize> = (0..positions.len())
            .filter(|&j| j == k || positions[j].dist2d(&positions[k]) <= radius_m)
            .map(|j| ids[j])
            .collect();
        nb.sort_unstable();
        b.neighbor_ids = nb;
    }
}

/// Index of the nearest BS for each device; ties go to the lowest BS id.
pub fn associate_devices(devices: &[Point], bs: &[BaseStation]) -> Result<Vec<usize>> {
    if bs.is_empty() {
        return Err(invalid("cannot associate devices without base stations"));
    }
    Ok(devices
        .iter()
        .map(|d| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, b) in bs.iter().enumerate() {
                let dist = d.dist2d(&b.position);
                if dist < best_d || (dist == best_d && b.id < bs[best].id) {
                    best = i;
                    best_d = dist;
                }
            }
            bs[best].id
        })
        .collect())
}

/// Neighbor lists as plain vectors, indexed by BS position in the slice.
pub fn neighbor_lists(bs: &[BaseStation]) -> Vec<Vec<usize>> {
    bs.iter().map(|b| b.neighbor_ids.clone()).collect()
}

/// Mean neighborhood size `mean_k |N_k|`.
pub fn mean_neighborhood_size(bs: &[BaseStation]) -> f64 {
    if bs.is_empty() {
        return 0.0;
    }
    bs.iter().map(|b| b.neighbor_ids.len() as f64).sum::<f64>() / bs.len() as f64
}

/// How base stations are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeploymentKind {
    Grid,
    Random,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub total_bandwidth_hz: f64,
    pub channel_bandwidth_hz: f64,
    pub num_bands: usize,
    pub center_frequency_hz: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            total_bandwidth_hz: 80e6,
            channel_bandwidth_hz: 20e6,
            num_bands: 4,
            center_frequency_hz: 5.43e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeploymentConfig {
    pub kind: DeploymentKind,
    pub num_bs: usize,
    pub area_m: [f64; 2],
    pub height_m: f64,
    /// BS coordinates for `kind = "csv"`.
    pub csv_path: Option<String>,
    /// Reference-signal transmit power used for the `P̂` measurements.
    pub bs_tx_power_dbm: f64,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            kind: DeploymentKind::Grid,
            num_bs: 100,
            area_m: [2000.0, 2000.0],
            height_m: 10.0,
            csv_path: None,
            bs_tx_power_dbm: 23.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncumbentConfig {
    pub count: usize,
    /// Transmit power is drawn uniformly from `[min, max]` dBm.
    pub tx_power_dbm_min: f64,
    pub tx_power_dbm_max: f64,
    /// Candidate transmit bandwidths; each incumbent draws one uniformly and
    /// occupies `bandwidth / b` contiguous channels. Empty means one channel.
    pub bandwidths_hz: Vec<f64>,
    pub activity_probability: f64,
    pub height_m: f64,
    /// Optional coordinate file (`id,x_m,y_m,z_m` or `id,lat,lon`).
    pub csv_path: Option<String>,
}

impl Default for IncumbentConfig {
    fn default() -> Self {
        IncumbentConfig {
            count: 20,
            tx_power_dbm_min: 23.0,
            tx_power_dbm_max: 23.0,
            bandwidths_hz: Vec::new(),
            activity_probability: 1.0,
            height_m: 10.0,
            csv_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceConfig {
    pub count: usize,
    pub tx_power_dbm: f64,
    pub height_m: f64,
    /// Minimum devices per BS required for the fully-loaded check.
    pub min_per_bs: usize,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            count: 0,
            tx_power_dbm: 14.0,
            height_m: 1.5,
            min_per_bs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    pub step_size: f64,
    pub smoothing: f64,
    pub iterations: usize,
}

impl Default for SensingConfig {
    fn default() -> Self {
        SensingConfig {
            step_size: 0.01,
            smoothing: 0.95,
            iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmConfig {
    /// Restarts of the clustering scheduler.
    pub scheduler_restarts: usize,
    /// Iterations of the fast distributed allocation.
    pub fast_allocation_iterations: usize,
    /// Cluster count for centralized combining; `None` derives it from the
    /// mean neighborhood size.
    pub centralized_clusters: Option<usize>,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        AlgorithmConfig {
            scheduler_restarts: 10,
            fast_allocation_iterations: 10,
            centralized_clusters: None,
        }
    }
}

/// Full description of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub spectrum: SpectrumConfig,
    pub deployment: DeploymentConfig,
    pub neighborhood_radius_m: f64,
    pub incumbents: IncumbentConfig,
    pub devices: DeviceConfig,
    /// LBT energy threshold in dBm, stated for `threshold_reference_bandwidth_hz`.
    pub detection_threshold_dbm: f64,
    pub threshold_reference_bandwidth_hz: f64,
    pub sensing: SensingConfig,
    pub channel_model: ChannelModelParams,
    pub algorithms: AlgorithmConfig,
    /// Incumbent contributions weaker than this fraction of the channel noise
    /// are dropped from the power table (0 keeps all).
    pub contribution_prune_ratio: f64,
    pub rng_seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            spectrum: SpectrumConfig::default(),
            deployment: DeploymentConfig::default(),
            neighborhood_radius_m: 200.0,
            incumbents: IncumbentConfig::default(),
            devices: DeviceConfig::default(),
            detection_threshold_dbm: -62.0,
            threshold_reference_bandwidth_hz: 20e6,
            sensing: SensingConfig::default(),
            channel_model: ChannelModelParams::default(),
            algorithms: AlgorithmConfig::default(),
            contribution_prune_ratio: 0.0,
            rng_seed: 1,
        }
    }
}

impl Scenario {
    pub fn spectrum_plan(&self) -> Result<SpectrumPlan> {
        let s = &self.spectrum;
        SpectrumPlan::new(s.total_bandwidth_hz, s.channel_bandwidth_hz, s.num_bands, s.center_frequency_hz)
    }

    pub fn area(&self) -> Area {
        Area::new(self.deployment.area_m[0], self.deployment.area_m[1])
    }

    /// Energy threshold per channel in linear mW, scaled from the reference
    /// bandwidth to the channel bandwidth.
    pub fn channel_threshold_mw(&self) -> f64 {
        crate::propagation::dbm_to_mw(self.detection_threshold_dbm) * self.spectrum.channel_bandwidth_hz
            / self.threshold_reference_bandwidth_hz
    }

    /// Checks physical sanity of all fields.
    pub fn validate(&self) -> Result<()> {
        self.spectrum_plan()?;
        self.area().check()?;
        let d = &self.deployment;
        if d.kind != DeploymentKind::Csv && d.num_bs == 0 {
            return Err(invalid("deployment.num_bs must be positive"));
        }
        if d.kind == DeploymentKind::Csv && d.csv_path.is_none() {
            return Err(invalid("deployment.csv_path is required for csv deployments"));
        }
        if !(self.neighborhood_radius_m >= 0.0) {
            return Err(invalid("neighborhood_radius_m must be nonnegative"));
        }
        let inc = &self.incumbents;
        if inc.tx_power_dbm_min > inc.tx_power_dbm_max {
            return Err(invalid("incumbents.tx_power_dbm_min exceeds tx_power_dbm_max"));
        }
        if !(0.0..=1.0).contains(&inc.activity_probability) {
            return Err(invalid("incumbents.activity_probability must lie in [0, 1]"));
        }
        if inc.bandwidths_hz.iter().any(|&b| !(b > 0.0) || b > self.spectrum.total_bandwidth_hz) {
            return Err(invalid("incumbents.bandwidths_hz entries must lie in (0, total bandwidth]"));
        }
        let s = &self.sensing;
        if !(s.smoothing > 0.0 && s.smoothing < 1.0) {
            return Err(invalid("sensing.smoothing must lie in (0, 1)"));
        }
        if !(s.step_size >= 0.0) || s.iterations == 0 {
            return Err(invalid("sensing.step_size must be nonnegative and iterations positive"));
        }
        if !(self.threshold_reference_bandwidth_hz > 0.0) {
            return Err(invalid("threshold_reference_bandwidth_hz must be positive"));
        }
        if !(self.contribution_prune_ratio >= 0.0 && self.contribution_prune_ratio < 1.0) {
            return Err(invalid("contribution_prune_ratio must lie in [0, 1)"));
        }
        if self.algorithms.scheduler_restarts == 0 {
            return Err(invalid("algorithms.scheduler_restarts must be positive"));
        }
        self.channel_model.validate()
    }
}
