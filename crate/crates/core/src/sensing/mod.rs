//! Diffusion-based cooperative sensing: every BS keeps one weight per channel,
//! combines its neighbors' weights (adaptive similarity weights `α` on the
//! channels it senses, reference-power weights `β` elsewhere) and adapts the
//! sensed ones with an LMS step driven by its energy samples. The final
//! weight is compared with a threshold obtained by running the same recursion
//! on a constant input equal to the energy threshold.

mod rem;
mod schemes;

pub use rem::{build_rem, read_rss_csv, synthetic_indoor_grid, write_rss_csv, write_weight_map_csv, RemResult, RssGrid};
pub use schemes::{
    centralized_cluster_count, centralized_decide, cluster_labels, noncoop_narrowband_channels, run_scheme,
    Scheme, SchemeOutcome, SensingContext,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::BaseStation;

/// Relative floor for the squared distances in the similarity weights.
pub const ALPHA_EPS: f64 = 1e-12;

/// Recursion constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingParams {
    pub smoothing: f64,
    pub iterations: usize,
    /// Initial weight `w_{k,m,0}`.
    pub initial_weight: f64,
}

impl Default for SensingParams {
    fn default() -> Self {
        SensingParams {
            smoothing: 0.95,
            iterations: 200,
            initial_weight: 0.0,
        }
    }
}

/// Neighborhoods, static combiner and step sizes of the sensing network.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingNetwork {
    pub neighbors: Vec<Vec<usize>>,
    /// `beta[k][idx]` is the weight of `neighbors[k][idx]`; zero on self.
    pub beta: Vec<Vec<f64>>,
    pub step: Vec<f64>,
}

impl SensingNetwork {
    /// Builds the network from BSs with neighborhoods and reference powers
    /// filled in. BS ids must equal their slice positions.
    pub fn from_base_stations(bs: &[BaseStation]) -> Result<Self> {
        let mut neighbors = Vec::with_capacity(bs.len());
        let mut beta = Vec::with_capacity(bs.len());
        for (k, b) in bs.iter().enumerate() {
            if b.id != k {
                return Err(invalid("BS ids must match their positions"));
            }
            let powers: Vec<f64> = b
                .neighbor_ids
                .iter()
                .filter(|&&j| j != k)
                .map(|&j| {
                    b.ref_powers
                        .iter()
                        .find(|e| e.0 == j)
                        .map(|e| e.1)
                        .ok_or_else(|| invalid(format!("BS {k} lacks a reference power for neighbor {j}")))
                })
                .collect::<Result<_>>()?;
            let mut row = Vec::with_capacity(b.neighbor_ids.len());
            let bw = if powers.is_empty() { Vec::new() } else { beta_weights(&powers)? };
            let mut it = bw.into_iter();
            for &j in &b.neighbor_ids {
                row.push(if j == k { 0.0 } else { it.next().unwrap_or(0.0) });
            }
            neighbors.push(b.neighbor_ids.clone());
            beta.push(row);
        }
        Ok(SensingNetwork {
            neighbors,
            beta,
            step: bs.iter().map(|b| b.step_size).collect(),
        })
    }

    /// Network where every BS only sees itself.
    pub fn isolated(num_bs: usize, step: f64) -> Self {
        SensingNetwork {
            neighbors: (0..num_bs).map(|k| vec![k]).collect(),
            beta: vec![vec![0.0]; num_bs],
            step: vec![step; num_bs],
        }
    }

    /// Network with explicit neighbor lists and uniform `β` over the others.
    pub fn with_uniform_beta(neighbors: Vec<Vec<usize>>, step: f64) -> Self {
        let beta = neighbors
            .iter()
            .enumerate()
            .map(|(k, nb)| {
                let others = nb.iter().filter(|&&j| j != k).count();
                nb.iter()
                    .map(|&j| if j == k || others == 0 { 0.0 } else { 1.0 / others as f64 })
                    .collect()
            })
            .collect();
        let n = neighbors.len();
        SensingNetwork {
            neighbors,
            beta,
            step: vec![step; n],
        }
    }

    pub fn num_bs(&self) -> usize {
        self.neighbors.len()
    }

    /// Same network with combination disabled (`N_k = {k}`).
    pub fn without_cooperation(&self) -> Self {
        SensingNetwork {
            neighbors: (0..self.num_bs()).map(|k| vec![k]).collect(),
            beta: vec![vec![0.0]; self.num_bs()],
            step: self.step.clone(),
        }
    }
}

/// Which `(k, m)` blocks are measured by their BS, row-major `K×M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensedSet {
    pub num_bs: usize,
    pub num_channels: usize,
    mask: Vec<bool>,
}

impl SensedSet {
    pub fn all(num_bs: usize, num_channels: usize) -> Self {
        SensedSet {
            num_bs,
            num_channels,
            mask: vec![true; num_bs * num_channels],
        }
    }

    /// From per-BS channel lists `M_k`.
    pub fn from_channels(channels: &[Vec<usize>], num_channels: usize) -> Self {
        let mut mask = vec![false; channels.len() * num_channels];
        for (k, ch) in channels.iter().enumerate() {
            for &m in ch {
                if m < num_channels {
                    mask[k * num_channels + m] = true;
                }
            }
        }
        SensedSet {
            num_bs: channels.len(),
            num_channels,
            mask,
        }
    }

    pub fn get(&self, k: usize, m: usize) -> bool {
        self.mask[k * self.num_channels + m]
    }

    /// Per-BS sensed channel lists in increasing order.
    pub fn channel_lists(&self) -> Vec<Vec<usize>> {
        (0..self.num_bs)
            .map(|k| (0..self.num_channels).filter(|&m| self.get(k, m)).collect())
            .collect()
    }
}

/// Per-BS, per-channel recursion state after the last iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingState {
    pub num_bs: usize,
    pub num_channels: usize,
    pub w: Vec<f64>,
    pub d: Vec<f64>,
    /// Whether any measurement reached the block (directly or via neighbors).
    pub informed: Vec<bool>,
    pub iterations: usize,
    /// Blocks whose BS has no neighbor to relay an unsensed channel.
    pub isolated_unsensed: usize,
}

impl SensingState {
    pub fn w(&self, k: usize, m: usize) -> f64 {
        self.w[k * self.num_channels + m]
    }

    pub fn d(&self, k: usize, m: usize) -> f64 {
        self.d[k * self.num_channels + m]
    }

    pub fn informed(&self, k: usize, m: usize) -> bool {
        self.informed[k * self.num_channels + m]
    }
}

/// Binary availability per block (true = available).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionMap {
    pub num_bs: usize,
    pub num_channels: usize,
    pub available: Vec<bool>,
}

impl DecisionMap {
    pub fn new(num_bs: usize, num_channels: usize, available: Vec<bool>) -> Self {
        assert_eq!(available.len(), num_bs * num_channels);
        DecisionMap {
            num_bs,
            num_channels,
            available,
        }
    }

    pub fn all(num_bs: usize, num_channels: usize, value: bool) -> Self {
        DecisionMap::new(num_bs, num_channels, vec![value; num_bs * num_channels])
    }

    pub fn get(&self, k: usize, m: usize) -> bool {
        self.available[k * self.num_channels + m]
    }

    pub fn count_available(&self) -> usize {
        self.available.iter().filter(|&&a| a).count()
    }
}

/// First-order smoothing `d_i = ζ d_{i−1} + (1−ζ) Y_i`.
pub fn filter_d(d_prev: f64, y: f64, smoothing: f64) -> f64 {
    smoothing * d_prev + (1.0 - smoothing) * y
}

/// Similarity weights `α_j ∝ (target − w_j)^{−2}`, normalized. Squared
/// distances are floored at `ALPHA_EPS·scale²` with `scale` the largest
/// magnitude involved, so identical weights get the largest finite score;
/// all-zero inputs yield uniform weights.
pub fn alpha_update(target: f64, neighbor_weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; neighbor_weights.len()];
    alpha_into(target, neighbor_weights, &mut out);
    out
}

fn alpha_into(target: f64, ws: &[f64], out: &mut [f64]) {
    let scale = ws.iter().fold(target.abs(), |m, w| m.max(w.abs()));
    if scale == 0.0 || !scale.is_finite() {
        let u = 1.0 / ws.len() as f64;
        out.iter_mut().for_each(|a| *a = u);
        return;
    }
    let floor = ALPHA_EPS * scale * scale;
    let mut total = 0.0;
    for (a, &w) in out.iter_mut().zip(ws) {
        // scaled by 1/scale² to stay representable when weights are tiny
        let diff = (target - w) * (target - w);
        *a = scale * scale / diff.max(floor);
        total += *a;
    }
    out.iter_mut().for_each(|a| *a /= total);
}

/// Reference-power weights `β_j = P̂_j / Σ P̂` over the other neighbors.
pub fn beta_weights(ref_powers: &[f64]) -> Result<Vec<f64>> {
    if ref_powers.is_empty() {
        return Err(invalid("no neighbors to combine"));
    }
    if ref_powers.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(invalid("reference powers must be finite and nonnegative"));
    }
    let total: f64 = ref_powers.iter().sum();
    if total == 0.0 {
        return Ok(vec![1.0 / ref_powers.len() as f64; ref_powers.len()]);
    }
    Ok(ref_powers.iter().map(|p| p / total).collect())
}

/// `ψ = Σ_j c_j w_j`.
pub fn combine(coeffs: &[f64], weights: &[f64]) -> f64 {
    coeffs.iter().zip(weights).map(|(c, w)| c * w).sum()
}

/// `w = ψ + [sensed]·μ·y·(d − y·ψ)`.
pub fn adapt(psi: f64, y: f64, d: f64, step: f64, sensed: bool) -> f64 {
    if sensed {
        psi + step * y * (d - y * psi)
    } else {
        psi
    }
}

/// Runs `N` synchronous combine-then-adapt rounds. `sample(k, m, i)` returns
/// the energy of block `(k, m)` at iteration `i` (`i = 0` initializes `d`);
/// it is only called for sensed blocks, in `(i, k, m)` order.
pub fn run_diffusion<F>(net: &SensingNetwork, sensed: &SensedSet, params: &SensingParams, mut sample: F) -> Result<SensingState>
where
    F: FnMut(usize, usize, usize) -> f64,
{
    let k_n = net.num_bs();
    let m_n = sensed.num_channels;
    if sensed.num_bs != k_n {
        return Err(invalid("sensed set and network disagree on the BS count"));
    }
    if !(params.smoothing > 0.0 && params.smoothing < 1.0) {
        return Err(invalid("smoothing must lie in (0, 1)"));
    }
    let n = k_n * m_n;
    let mut w = vec![params.initial_weight; n];
    let mut d = vec![0.0; n];
    let mut informed = vec![false; n];
    for k in 0..k_n {
        for m in 0..m_n {
            if sensed.get(k, m) {
                d[k * m_n + m] = sample(k, m, 0);
                informed[k * m_n + m] = true;
            }
        }
    }
    let mut isolated_unsensed = 0;
    for k in 0..k_n {
        if net.neighbors[k].len() == 1 {
            isolated_unsensed += (0..m_n).filter(|&m| !sensed.get(k, m)).count();
        }
    }
    let mut w_next = w.clone();
    let mut d_next = d.clone();
    let mut inf_next = informed.clone();
    let mut coeff = Vec::new();
    let mut vals = Vec::new();
    for i in 1..=params.iterations {
        for k in 0..k_n {
            let nb = &net.neighbors[k];
            let mu = net.step[k];
            for m in 0..m_n {
                let idx = k * m_n + m;
                if sensed.get(k, m) {
                    let y = sample(k, m, i);
                    let dk = filter_d(d[idx], y, params.smoothing);
                    let wk = w[idx];
                    let gamma = (dk - y * wk) * y;
                    vals.clear();
                    vals.extend(nb.iter().filter(|&&j| informed[j * m_n + m]).map(|&j| w[j * m_n + m]));
                    coeff.resize(vals.len(), 0.0);
                    alpha_into(wk + mu * gamma, &vals, &mut coeff);
                    let psi = combine(&coeff, &vals);
                    w_next[idx] = adapt(psi, y, dk, mu, true);
                    d_next[idx] = dk;
                    inf_next[idx] = true;
                } else {
                    // β over the neighbors that hold information on m
                    let mut tot = 0.0;
                    let mut sw = 0.0;
                    let mut sd = 0.0;
                    for (&j, &b) in nb.iter().zip(&net.beta[k]) {
                        if b > 0.0 && informed[j * m_n + m] {
                            tot += b;
                            sw += b * w[j * m_n + m];
                            sd += b * d[j * m_n + m];
                        }
                    }
                    if tot > 0.0 {
                        w_next[idx] = sw / tot;
                        d_next[idx] = sd / tot;
                        inf_next[idx] = true;
                    } else {
                        w_next[idx] = w[idx];
                        d_next[idx] = d[idx];
                        inf_next[idx] = informed[idx];
                    }
                }
            }
        }
        std::mem::swap(&mut w, &mut w_next);
        std::mem::swap(&mut d, &mut d_next);
        std::mem::swap(&mut informed, &mut inf_next);
        if i % 16 == 0 || i == params.iterations {
            if let Some(bad) = w.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "weight of BS {} channel {} diverged at iteration {i}",
                    bad / m_n,
                    bad % m_n
                )));
            }
        }
    }
    Ok(SensingState {
        num_bs: k_n,
        num_channels: m_n,
        w,
        d,
        informed,
        iterations: params.iterations,
        isolated_unsensed,
    })
}

/// Thresholds `λ_{k,m}`: the weights produced by the same recursion when every
/// sensed block observes the constant energy `tau`.
pub fn calibrate_thresholds(net: &SensingNetwork, sensed: &SensedSet, params: &SensingParams, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("threshold must be positive"));
    }
    Ok(run_diffusion(net, sensed, params, |_, _, _| tau)?.w)
}

/// Available iff the block is informed and `w ≤ λ`.
pub fn decide(state: &SensingState, thresholds: &[f64]) -> DecisionMap {
    let available = state
        .w
        .iter()
        .zip(thresholds)
        .zip(&state.informed)
        .map(|((w, l), &inf)| inf && w <= l)
        .collect();
    DecisionMap::new(state.num_bs, state.num_channels, available)
}
