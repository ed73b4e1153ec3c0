//! Channel allocation over available blocks: exact per-channel optimum,
//! dual decomposition, the fast reward-propagation method, and the
//! non-cooperative baseline.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{invalid, io_err, Error, Result};
use crate::sensing::{DecisionMap, SensingState};

/// `r_{k,m} = 10·log10(τ / d_{k,m,N})` in dB; blocks no measurement reached
/// hold `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix {
    pub num_bs: usize,
    pub num_channels: usize,
    pub values: Vec<f64>,
}

impl RewardMatrix {
    pub fn new(num_bs: usize, num_channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_bs * num_channels {
            return Err(invalid("reward matrix has the wrong size"));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(invalid("rewards must be finite or -inf"));
        }
        Ok(RewardMatrix {
            num_bs,
            num_channels,
            values,
        })
    }

    pub fn get(&self, k: usize, m: usize) -> f64 {
        self.values[k * self.num_channels + m]
    }
}

pub fn compute_rewards(state: &SensingState, tau: f64) -> Result<RewardMatrix> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("threshold must be positive"));
    }
    let mut values = Vec::with_capacity(state.d.len());
    for (i, (&d, &inf)) in state.d.iter().zip(&state.informed).enumerate() {
        if !inf {
            values.push(f64::NEG_INFINITY);
            continue;
        }
        if !(d > 0.0) {
            return Err(Error::Numerical(format!(
                "filtered energy {d} at BS {} channel {} is not positive",
                i / state.num_channels,
                i % state.num_channels
            )));
        }
        values.push(10.0 * (tau / d).log10());
    }
    RewardMatrix::new(state.num_bs, state.num_channels, values)
}

/// Binary grants `z_{k,m}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Grants {
    pub num_bs: usize,
    pub num_channels: usize,
    pub z: Vec<bool>,
}

impl Grants {
    pub fn empty(num_bs: usize, num_channels: usize) -> Self {
        Grants {
            num_bs,
            num_channels,
            z: vec![false; num_bs * num_channels],
        }
    }

    pub fn get(&self, k: usize, m: usize) -> bool {
        self.z[k * self.num_channels + m]
    }

    pub fn set(&mut self, k: usize, m: usize, v: bool) {
        self.z[k * self.num_channels + m] = v;
    }

    pub fn count(&self) -> usize {
        self.z.iter().filter(|&&g| g).count()
    }

    /// Granted channels of BS `k` in increasing order.
    pub fn channels_of(&self, k: usize) -> Vec<usize> {
        (0..self.num_channels).filter(|&m| self.get(k, m)).collect()
    }

    pub fn utility(&self, rewards: &RewardMatrix) -> f64 {
        self.z
            .iter()
            .zip(&rewards.values)
            .filter(|(&g, _)| g)
            .map(|(_, &r)| r)
            .sum()
    }

    /// Number of `(k, m)` rows with more than one grant inside `N_k`.
    pub fn collisions(&self, neighbors: &[Vec<usize>]) -> usize {
        let mut count = 0;
        for nb in neighbors {
            for m in 0..self.num_channels {
                if nb.iter().filter(|&&j| self.get(j, m)).count() > 1 {
                    count += 1;
                }
            }
        }
        count
    }

    /// `Σ_{j∈N_k} z_{j,m} ≤ 1` for all rows and `z ≤ availability`.
    pub fn is_feasible(&self, neighbors: &[Vec<usize>], availability: &DecisionMap) -> bool {
        self.collisions(neighbors) == 0 && self.z.iter().zip(&availability.available).all(|(&g, &a)| !g || a)
    }
}

/// One row of an allocation trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub channel: usize,
    pub iteration: usize,
    pub bs_id: usize,
    pub z: bool,
    /// Price for dual decomposition, running best reward for the fast method.
    pub price_or_rbar: f64,
}

/// Allocation result plus convergence information.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationOutcome {
    pub grants: Grants,
    /// Largest (over channels) iteration at which the grants last changed.
    pub converged_iteration: usize,
    /// Total iterations executed (largest over channels).
    pub iterations_run: usize,
    /// False when some channel hit the iteration cap before stabilizing.
    pub converged: bool,
    /// Grants removed by the final feasibility repair.
    pub repaired: usize,
    pub trace: Vec<TraceRow>,
}

impl AllocationOutcome {
    pub fn utility(&self, rewards: &RewardMatrix) -> f64 {
        self.grants.utility(rewards)
    }
}

fn check_inputs(rewards: &RewardMatrix, availability: &DecisionMap, neighbors: &[Vec<usize>]) -> Result<()> {
    if availability.num_bs != rewards.num_bs
        || availability.num_channels != rewards.num_channels
        || neighbors.len() != rewards.num_bs
    {
        return Err(invalid("rewards, availability and neighborhoods disagree in size"));
    }
    for (k, nb) in neighbors.iter().enumerate() {
        if !nb.contains(&k) || nb.iter().any(|&j| j >= neighbors.len()) {
            return Err(invalid(format!("neighborhood of BS {k} must contain itself and valid ids")));
        }
    }
    Ok(())
}

/// Reward used by every method: the block must be available and its reward
/// strictly positive, otherwise `-inf`.
fn effective(rewards: &RewardMatrix, availability: &DecisionMap, k: usize, m: usize) -> f64 {
    let r = rewards.get(k, m);
    if availability.get(k, m) && r > 0.0 {
        r
    } else {
        f64::NEG_INFINITY
    }
}

/// Drops the lowest-reward grant (ties: higher id) from each violated row
/// until every row holds at most one grant. Returns the number dropped.
fn repair_channel(z: &mut [bool], eff: &[f64], neighbors: &[Vec<usize>]) -> usize {
    let mut dropped = 0;
    loop {
        let mut changed = false;
        for nb in neighbors {
            let granted: Vec<usize> = nb.iter().copied().filter(|&j| z[j]).collect();
            if granted.len() > 1 {
                let worst = granted
                    .iter()
                    .copied()
                    .min_by(|&a, &b| eff[a].total_cmp(&eff[b]).then(b.cmp(&a)))
                    .expect("nonempty");
                z[worst] = false;
                dropped += 1;
                changed = true;
            }
        }
        if !changed {
            return dropped;
        }
    }
}

/// Per-channel search limit for the exact allocation beyond brute force.
pub const CENTRALIZED_NODE_LIMIT: u64 = 50_000_000;

/// Exact per-channel optimum: the largest-reward set of positive-reward
/// available BSs with at most one grant per closed neighborhood.
pub fn solve_centralized(rewards: &RewardMatrix, availability: &DecisionMap, neighbors: &[Vec<usize>]) -> Result<Grants> {
    check_inputs(rewards, availability, neighbors)?;
    let k_n = rewards.num_bs;
    let mut grants = Grants::empty(k_n, rewards.num_channels);
    for m in 0..rewards.num_channels {
        let eff: Vec<f64> = (0..k_n).map(|k| effective(rewards, availability, k, m)).collect();
        let chosen = max_weight_exclusive(&eff, neighbors)?;
        for k in chosen {
            grants.set(k, m, true);
        }
    }
    Ok(grants)
}

/// Maximum-weight set over candidates with finite weight such that no two
/// chosen BSs lie in a common closed neighborhood.
fn max_weight_exclusive(eff: &[f64], neighbors: &[Vec<usize>]) -> Result<Vec<usize>> {
    let cand: Vec<usize> = (0..eff.len()).filter(|&k| eff[k].is_finite()).collect();
    let n = cand.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let pos: std::collections::HashMap<usize, usize> = cand.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    // conflict[i] = candidates sharing a row with i
    let mut conflict = vec![vec![false; n]; n];
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for nb in neighbors {
        let members: Vec<usize> = nb.iter().filter_map(|j| pos.get(j).copied()).collect();
        for &a in &members {
            for &b in &members {
                conflict[a][b] = true;
            }
        }
        if members.len() > 1 {
            rows.push(members);
        }
    }
    let w: Vec<f64> = cand.iter().map(|&k| eff[k]).collect();
    if n <= 20 {
        let mut best = (0.0, 0u32);
        let adj: Vec<u32> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && conflict[i][j]).fold(0u32, |m, j| m | (1 << j)))
            .collect();
        for mask in 1u32..(1u32 << n) {
            let mut ok = true;
            let mut total = 0.0;
            let mut rest = mask;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                if adj[i] & mask != 0 {
                    ok = false;
                    break;
                }
                total += w[i];
            }
            if ok && total > best.0 {
                best = (total, mask);
            }
        }
        return Ok((0..n).filter(|&i| best.1 & (1 << i) != 0).map(|i| cand[i]).collect());
    }
    // branch-and-bound in decreasing weight order with a clique-cover bound
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let mut clique_of = vec![usize::MAX; n];
    let mut cliques = 0;
    for &v in &order {
        if clique_of[v] != usize::MAX {
            continue;
        }
        let best_row = rows
            .iter()
            .filter(|r| r.contains(&v))
            .max_by_key(|r| r.iter().filter(|&&u| clique_of[u] == usize::MAX).count());
        match best_row {
            Some(r) => {
                for &u in r {
                    if clique_of[u] == usize::MAX {
                        clique_of[u] = cliques;
                    }
                }
            }
            None => clique_of[v] = cliques,
        }
        cliques += 1;
    }
    let mut search = Search {
        w: &w,
        order: &order,
        conflict: &conflict,
        clique_of: &clique_of,
        cliques,
        blocked: vec![0u32; n],
        chosen: Vec::new(),
        best: Vec::new(),
        best_value: 0.0,
        nodes: 0,
        cap_scratch: vec![f64::NEG_INFINITY; cliques],
    };
    search.dfs(0, 0.0)?;
    let mut out: Vec<usize> = search.best.iter().map(|&i| cand[i]).collect();
    out.sort_unstable();
    Ok(out)
}

struct Search<'a> {
    w: &'a [f64],
    order: &'a [usize],
    conflict: &'a [Vec<bool>],
    clique_of: &'a [usize],
    cliques: usize,
    blocked: Vec<u32>,
    chosen: Vec<usize>,
    best: Vec<usize>,
    best_value: f64,
    nodes: u64,
    cap_scratch: Vec<f64>,
}

impl Search<'_> {
    fn bound(&mut self, depth: usize) -> f64 {
        self.cap_scratch.iter_mut().for_each(|c| *c = f64::NEG_INFINITY);
        for &v in &self.order[depth..] {
            if self.blocked[v] == 0 {
                let c = &mut self.cap_scratch[self.clique_of[v]];
                *c = c.max(self.w[v]);
            }
        }
        let _ = self.cliques;
        self.cap_scratch.iter().filter(|c| c.is_finite()).sum()
    }

    fn dfs(&mut self, depth: usize, value: f64) -> Result<()> {
        self.nodes += 1;
        if self.nodes > CENTRALIZED_NODE_LIMIT {
            return Err(Error::SizeGuard(format!(
                "exact allocation exceeded {CENTRALIZED_NODE_LIMIT} search nodes on one channel"
            )));
        }
        if value > self.best_value {
            self.best_value = value;
            self.best = self.chosen.clone();
        }
        if depth == self.order.len() || value + self.bound(depth) <= self.best_value * (1.0 + 1e-12) {
            return Ok(());
        }
        let v = self.order[depth];
        if self.blocked[v] == 0 {
            for u in 0..self.w.len() {
                if u != v && self.conflict[v][u] {
                    self.blocked[u] += 1;
                }
            }
            self.chosen.push(v);
            self.dfs(depth + 1, value + self.w[v])?;
            self.chosen.pop();
            for u in 0..self.w.len() {
                if u != v && self.conflict[v][u] {
                    self.blocked[u] -= 1;
                }
            }
        }
        self.dfs(depth + 1, value)
    }
}

/// Options for the price-based method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    /// Step `c/√i`; `None` uses the largest positive reward on the channel.
    pub step_scale: Option<f64>,
    /// Stop once the grants are unchanged for this many iterations.
    pub stable_iterations: usize,
    pub max_iterations: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions {
            step_scale: None,
            stable_iterations: 10,
            max_iterations: 500,
        }
    }
}

/// Price-based allocation: each BS takes the channel when its reward covers
/// the summed prices of its neighborhood, and each price rises while its row
/// is oversubscribed and falls while it is empty.
pub fn dual_decomposition(
    rewards: &RewardMatrix,
    availability: &DecisionMap,
    neighbors: &[Vec<usize>],
    options: &DualOptions,
) -> Result<AllocationOutcome> {
    check_inputs(rewards, availability, neighbors)?;
    if options.step_scale.is_some_and(|c| !(c > 0.0)) || options.stable_iterations == 0 || options.max_iterations == 0 {
        return Err(invalid("dual step scale and iteration limits must be positive"));
    }
    let k_n = rewards.num_bs;
    let mut grants = Grants::empty(k_n, rewards.num_channels);
    let mut trace = Vec::new();
    let (mut conv_it, mut run_it, mut converged, mut repaired) = (0, 0, true, 0);
    for m in 0..rewards.num_channels {
        let eff: Vec<f64> = (0..k_n).map(|k| effective(rewards, availability, k, m)).collect();
        let c = options
            .step_scale
            .unwrap_or_else(|| eff.iter().copied().filter(|r| r.is_finite()).fold(0.0, f64::max));
        let mut z = vec![false; k_n];
        if c == 0.0 {
            continue;
        }
        let mut nu = vec![0.0; k_n];
        let mut last_change = 0;
        let mut i = 0;
        while i < options.max_iterations {
            i += 1;
            let znew: Vec<bool> = (0..k_n)
                .map(|k| eff[k].is_finite() && eff[k] >= neighbors[k].iter().map(|&j| nu[j]).sum::<f64>())
                .collect();
            if znew != z || i == 1 {
                last_change = i;
            }
            z = znew;
            let step = c / (i as f64).sqrt();
            for k in 0..k_n {
                let load = neighbors[k].iter().filter(|&&j| z[j]).count() as f64;
                nu[k] = (nu[k] - step * (1.0 - load)).max(0.0);
            }
            for k in 0..k_n {
                trace.push(TraceRow {
                    channel: m,
                    iteration: i,
                    bs_id: k,
                    z: z[k],
                    price_or_rbar: nu[k],
                });
            }
            if i - last_change >= options.stable_iterations {
                break;
            }
        }
        if i - last_change < options.stable_iterations {
            converged = false;
        }
        repaired += repair_channel(&mut z, &eff, neighbors);
        conv_it = conv_it.max(last_change);
        run_it = run_it.max(i);
        for k in 0..k_n {
            grants.set(k, m, z[k]);
        }
    }
    Ok(AllocationOutcome {
        grants,
        converged_iteration: conv_it,
        iterations_run: run_it,
        converged,
        repaired,
        trace,
    })
}

/// Reward key with the BS id as deterministic tie-break (lower id wins).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64, usize);

impl Key {
    const NONE: Key = Key(f64::NEG_INFINITY, usize::MAX);

    fn ge(self, other: Key) -> bool {
        self.0 > other.0 || (self.0 == other.0 && self.1 <= other.1)
    }

    fn max(self, other: Key) -> Key {
        if self.ge(other) {
            self
        } else {
            other
        }
    }
}

/// Fast distributed allocation by reward propagation, `iterations` rounds
/// per channel (10 by default), followed by a feasibility check that drops
/// residual conflicts.
pub fn fast_allocate(
    rewards: &RewardMatrix,
    availability: &DecisionMap,
    neighbors: &[Vec<usize>],
    iterations: usize,
) -> Result<AllocationOutcome> {
    check_inputs(rewards, availability, neighbors)?;
    if iterations == 0 {
        return Err(invalid("allocation needs at least one iteration"));
    }
    let k_n = rewards.num_bs;
    let mut grants = Grants::empty(k_n, rewards.num_channels);
    let mut trace = Vec::new();
    let (mut conv_it, mut repaired) = (0, 0);
    let mut converged = true;
    for m in 0..rewards.num_channels {
        let eff: Vec<f64> = (0..k_n).map(|k| effective(rewards, availability, k, m)).collect();
        let own: Vec<Key> = (0..k_n)
            .map(|k| if eff[k].is_finite() { Key(eff[k], k) } else { Key::NONE })
            .collect();
        if own.iter().all(|&k| k == Key::NONE) {
            continue;
        }
        let mut rbar: Vec<Key> = (0..k_n)
            .map(|k| neighbors[k].iter().fold(Key::NONE, |a, &j| a.max(own[j])))
            .collect();
        let mut contenders: Vec<Vec<usize>> = neighbors.to_vec();
        let mut z = vec![false; k_n];
        let mut last_change = 0;
        for i in 1..=iterations {
            let znew: Vec<bool> = (0..k_n)
                .map(|k| {
                    if own[k] == Key::NONE {
                        return false;
                    }
                    let target = if i == 1 {
                        rbar[k]
                    } else {
                        contenders[k].iter().fold(Key::NONE, |a, &j| a.max(rbar[j]).max(own[j]))
                    };
                    own[k].ge(target)
                })
                .collect();
            if znew != z {
                last_change = i;
            }
            z = znew;
            let load: Vec<usize> = (0..k_n).map(|k| neighbors[k].iter().filter(|&&j| z[j]).count()).collect();
            let next: Vec<Key> = (0..k_n)
                .map(|k| {
                    if load[k] >= 1 {
                        neighbors[k].iter().filter(|&&j| z[j]).fold(Key::NONE, |a, &j| a.max(rbar[j]))
                    } else {
                        rbar[k]
                    }
                })
                .collect();
            rbar = next;
            for k in 0..k_n {
                contenders[k] = neighbors[k].iter().copied().filter(|&j| load[j] >= 1).collect();
                trace.push(TraceRow {
                    channel: m,
                    iteration: i,
                    bs_id: k,
                    z: z[k],
                    price_or_rbar: rbar[k].0,
                });
            }
        }
        if last_change == iterations && iterations > 1 {
            converged = false;
        }
        repaired += repair_channel(&mut z, &eff, neighbors);
        conv_it = conv_it.max(last_change);
        for k in 0..k_n {
            grants.set(k, m, z[k]);
        }
    }
    Ok(AllocationOutcome {
        grants,
        converged_iteration: conv_it,
        iterations_run: iterations,
        converged,
        repaired,
        trace,
    })
}

/// Each BS takes every channel it sensed and decided available, with no
/// coordination. Collisions are reported, not prevented.
pub fn noncoop_allocate(availability: &DecisionMap, sensed_channels: &[Vec<usize>]) -> Result<Grants> {
    if sensed_channels.len() != availability.num_bs {
        return Err(invalid("channel lists and decisions disagree on the BS count"));
    }
    let mut g = Grants::empty(availability.num_bs, availability.num_channels);
    for (k, chans) in sensed_channels.iter().enumerate() {
        for &m in chans {
            if m >= availability.num_channels {
                return Err(invalid(format!("channel {m} out of range")));
            }
            if availability.get(k, m) {
                g.set(k, m, true);
            }
        }
    }
    Ok(g)
}

/// Devices sharing one granted channel of one BS in round-robin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChannelGrant {
    pub bs: usize,
    pub channel: usize,
    /// Device indices in service order; each holds a `1/len` time share.
    pub devices: Vec<usize>,
}

/// Distributes each BS's granted channels over its devices (device-index
/// order): device `i` of the BS uses granted channel `i mod g`.
pub fn schedule_devices(grants: &Grants, associations: &[usize]) -> Result<Vec<ChannelGrant>> {
    let mut per_bs: Vec<Vec<usize>> = vec![Vec::new(); grants.num_bs];
    for (dev, &k) in associations.iter().enumerate() {
        if k >= grants.num_bs {
            return Err(invalid(format!("device {dev} is associated with unknown BS {k}")));
        }
        per_bs[k].push(dev);
    }
    let mut out = Vec::new();
    for (k, devs) in per_bs.iter().enumerate() {
        let chans = grants.channels_of(k);
        if chans.is_empty() {
            continue;
        }
        let mut slots: Vec<ChannelGrant> = chans
            .iter()
            .map(|&m| ChannelGrant {
                bs: k,
                channel: m,
                devices: Vec::new(),
            })
            .collect();
        for (i, &d) in devs.iter().enumerate() {
            slots[i % chans.len()].devices.push(d);
        }
        out.extend(slots);
    }
    Ok(out)
}

/// Writes `channel,iteration,bs_id,z,price_or_rbar`.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut body = String::from("channel,iteration,bs_id,z,price_or_rbar\n");
    for t in trace {
        body.push_str(&format!("{},{},{},{},{}\n", t.channel, t.iteration, t.bs_id, u8::from(t.z), t.price_or_rbar));
    }
    out.write_all(body.as_bytes()).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3() -> Vec<Vec<usize>> {
        vec![vec![0, 1], vec![0, 1, 2], vec![1, 2]]
    }

    fn rewards(k: usize, m: usize, v: &[f64]) -> RewardMatrix {
        RewardMatrix::new(k, m, v.to_vec()).unwrap()
    }

    #[test]
    fn reward_arithmetic() {
        let state = SensingState {
            num_bs: 1,
            num_channels: 3,
            w: vec![0.0; 3],
            d: vec![2.0, 0.2, 4.0],
            informed: vec![true; 3],
            iterations: 1,
            isolated_unsensed: 0,
        };
        let r = compute_rewards(&state, 2.0).unwrap();
        assert!(r.get(0, 0).abs() < 1e-12);
        assert!((r.get(0, 1) - 10.0).abs() < 1e-12);
        assert!((r.get(0, 2) + 3.0103).abs() < 1e-4);
        let mut bad = state.clone();
        bad.d[0] = 0.0;
        assert!(compute_rewards(&bad, 2.0).is_err());
        bad.informed[0] = false;
        assert_eq!(compute_rewards(&bad, 2.0).unwrap().get(0, 0), f64::NEG_INFINITY);
    }

    #[test]
    fn chain_centralized_and_fast_agree() {
        let r = rewards(3, 1, &[3.0, 2.0, 2.5]);
        let av = DecisionMap::all(3, 1, true);
        let c = solve_centralized(&r, &av, &chain3()).unwrap();
        assert_eq!(c.z, vec![true, false, false]);
        let f = fast_allocate(&r, &av, &chain3(), 10).unwrap();
        let first: Vec<bool> = f.trace.iter().filter(|t| t.iteration == 1).map(|t| t.z).collect();
        assert_eq!(first, vec![true, false, true]);
        assert_eq!(f.grants.z, vec![true, false, false]);
        assert_eq!(f.converged_iteration, 2);
        assert_eq!(f.repaired, 0);
    }

    #[test]
    fn single_bs_cases() {
        let nb = vec![vec![0]];
        let r = rewards(1, 1, &[1.5]);
        let av = DecisionMap::all(1, 1, true);
        assert!(solve_centralized(&r, &av, &nb).unwrap().get(0, 0));
        let f = fast_allocate(&r, &av, &nb, 10).unwrap();
        assert!(f.grants.get(0, 0));
        assert_eq!(f.converged_iteration, 1);
        let d = dual_decomposition(&r, &av, &nb, &DualOptions::default()).unwrap();
        assert!(d.grants.get(0, 0));
        assert!(d.trace.iter().all(|t| t.price_or_rbar == 0.0));
        let none = DecisionMap::all(1, 1, false);
        assert!(!solve_centralized(&r, &none, &nb).unwrap().get(0, 0));
        assert!(!fast_allocate(&r, &none, &nb, 10).unwrap().grants.get(0, 0));
    }

    #[test]
    fn mutual_neighbors_pick_larger_reward() {
        let nb = vec![vec![0, 1], vec![0, 1]];
        let av = DecisionMap::all(2, 1, true);
        let f = fast_allocate(&rewards(2, 1, &[2.0, 1.0]), &av, &nb, 10).unwrap();
        assert_eq!(f.grants.z, vec![true, false]);
        let d = dual_decomposition(&rewards(2, 1, &[5.0, 1.0]), &av, &nb, &DualOptions::default()).unwrap();
        assert_eq!(d.grants.z, vec![true, false]);
        assert_eq!(d.repaired, 0);
        assert!(d.converged_iteration > 1);
    }

    #[test]
    fn nonpositive_rewards_never_granted() {
        let nb = vec![vec![0]];
        let av = DecisionMap::all(1, 1, true);
        for v in [0.0, -2.0] {
            let r = rewards(1, 1, &[v]);
            assert!(!solve_centralized(&r, &av, &nb).unwrap().get(0, 0));
            assert!(!fast_allocate(&r, &av, &nb, 10).unwrap().grants.get(0, 0));
            assert!(!dual_decomposition(&r, &av, &nb, &DualOptions::default()).unwrap().grants.get(0, 0));
        }
    }

    #[test]
    fn branch_and_bound_matches_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            // 24-node ring with radius-2 neighborhoods forces the search path
            let k = 24;
            let nb: Vec<Vec<usize>> = (0..k)
                .map(|i| {
                    let mut v: Vec<usize> = (0..k).filter(|&j| {
                        let d = (i as i64 - j as i64).rem_euclid(k as i64);
                        d <= 1 || d >= k as i64 - 1
                    }).collect();
                    v.sort_unstable();
                    v
                })
                .collect();
            let vals: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..5.0)).collect();
            let r = rewards(k, 1, &vals);
            let av = DecisionMap::all(k, 1, true);
            let g = solve_centralized(&r, &av, &nb).unwrap();
            assert!(g.is_feasible(&nb, &av));
            // ring: chosen nodes must be at cyclic distance ≥ 3; dynamic program oracle
            let best = ring_oracle(&vals);
            assert!((g.utility(&r) - best).abs() < 1e-9, "{} vs {best}", g.utility(&r));
        }
    }

    /// Max-weight subset of a cycle with pairwise cyclic distance ≥ 3:
    /// condition on whether node 0 or node 1 is chosen, then run a path DP.
    fn ring_oracle(w: &[f64]) -> f64 {
        let n = w.len();
        let path = |lo: usize, hi: usize| -> f64 {
            let mut dp: Vec<f64> = Vec::new();
            for i in lo..=hi {
                let j = dp.len();
                let take = w[i] + if j >= 3 { dp[j - 3] } else { 0.0 };
                let skip = if j >= 1 { dp[j - 1] } else { 0.0 };
                dp.push(take.max(skip));
            }
            dp.last().copied().unwrap_or(0.0)
        };
        let neither = path(2, n - 1);
        let zero = w[0] + path(3, n - 3);
        let one = w[1] + path(4, n - 2);
        neither.max(zero).max(one)
    }

    #[test]
    fn noncoop_collisions() {
        let nb = vec![vec![0, 1], vec![0, 1]];
        let av = DecisionMap::all(2, 2, true);
        let same = noncoop_allocate(&av, &[vec![0], vec![0]]).unwrap();
        assert_eq!(same.collisions(&nb), 2);
        let disjoint = noncoop_allocate(&av, &[vec![0], vec![1]]).unwrap();
        assert_eq!(disjoint.collisions(&nb), 0);
        let busy = noncoop_allocate(&DecisionMap::all(2, 2, false), &[vec![0], vec![1]]).unwrap();
        assert_eq!(busy.count(), 0);
    }

    #[test]
    fn round_robin_schedule() {
        let mut g = Grants::empty(2, 3);
        g.set(0, 0, true);
        g.set(0, 2, true);
        let assoc = vec![0, 0, 0, 0, 1];
        let s = schedule_devices(&g, &assoc).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].devices, vec![0, 2]);
        assert_eq!(s[1].devices, vec![1, 3]);
        g.set(0, 2, false);
        let s = schedule_devices(&g, &assoc).unwrap();
        assert_eq!(s[0].devices.len(), 4);
    }
}
