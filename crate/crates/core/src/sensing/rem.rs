use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{run_diffusion, SensedSet, SensingNetwork, SensingParams};
use crate::error::{invalid, io_err, Error, Result};
use crate::propagation::dbm_to_mw;

/// Recorded RSS time series per node (dBm).
#[derive(Debug, Clone, PartialEq)]
pub struct RssGrid {
    pub node_ids: Vec<u64>,
    pub positions: Vec<[f64; 2]>,
    /// `samples[node][t]` in dBm.
    pub samples: Vec<Vec<f64>>,
}

impl RssGrid {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Time-averaged RSS in dBm, averaged in the linear domain.
    pub fn mean_rss_dbm(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| 10.0 * (s.iter().map(|&v| dbm_to_mw(v)).sum::<f64>() / s.len() as f64).log10())
            .collect()
    }
}

/// Reads `node_id,x_m,y_m,rss_dbm_sample_1,...,rss_dbm_sample_T`.
pub fn read_rss_csv(path: &Path) -> Result<RssGrid> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let fixed = ["node_id", "x_m", "y_m"];
    if headers.len() < 4 || headers.iter().take(3).ne(fixed.iter().copied()) {
        return Err(invalid(format!(
            "{}: expected header node_id,x_m,y_m,rss_dbm_sample_1,...",
            path.display()
        )));
    }
    let t = headers.len() - 3;
    let mut grid = RssGrid {
        node_ids: Vec::new(),
        positions: Vec::new(),
        samples: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Parse {
            file: path.display().to_string(),
            line,
            message: format!("invalid {what}"),
        };
        if rec.len() != t + 3 {
            return Err(bad("column count"));
        }
        grid.node_ids.push(rec[0].parse().map_err(|_| bad("node_id"))?);
        let x: f64 = rec[1].parse().map_err(|_| bad("x_m"))?;
        let y: f64 = rec[2].parse().map_err(|_| bad("y_m"))?;
        grid.positions.push([x, y]);
        let s: Vec<f64> = (3..t + 3)
            .map(|c| rec[c].parse::<f64>().map_err(|_| bad("RSS sample")))
            .collect::<Result<_>>()?;
        grid.samples.push(s);
    }
    Ok(grid)
}

/// Interpolated weight map.
#[derive(Debug, Clone, PartialEq)]
pub struct RemResult {
    pub weights: Vec<f64>,
    pub participating: Vec<bool>,
}

/// Runs the diffusion recursion on a random subset (`fraction` of the nodes,
/// at least one) using the recorded series as measurements, with neighbors
/// within `comm_radius_m`. Other nodes get `Σ β_l w_l` with `β ∝ d^{−2}`
/// over the participating set.
pub fn build_rem<R: Rng + ?Sized>(
    grid: &RssGrid,
    fraction: f64,
    comm_radius_m: f64,
    step: f64,
    smoothing: f64,
    rng: &mut R,
) -> Result<RemResult> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid("participating fraction must lie in (0, 1]"));
    }
    let n = grid.len();
    if n == 0 {
        return Err(invalid("empty RSS grid"));
    }
    let t = grid.samples[0].len();
    if t < 2 || grid.samples.iter().any(|s| s.len() != t) {
        return Err(invalid("every node needs the same number (≥ 2) of samples"));
    }
    let count = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut selected: Vec<usize> = if count == n { (0..n).collect() } else { sample(rng, n, count).into_vec() };
    selected.sort_unstable();
    let pos: Vec<[f64; 2]> = selected.iter().map(|&i| grid.positions[i]).collect();
    let dist = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let neighbors: Vec<Vec<usize>> = (0..count)
        .map(|a| (0..count).filter(|&b| a == b || dist(&pos[a], &pos[b]) <= comm_radius_m).collect())
        .collect();
    let net = SensingNetwork::with_uniform_beta(neighbors, step);
    let params = SensingParams {
        smoothing,
        iterations: t - 1,
        initial_weight: 0.0,
    };
    let state = run_diffusion(&net, &SensedSet::all(count, 1), &params, |k, _, i| dbm_to_mw(grid.samples[selected[k]][i]))?;
    let mut weights = vec![0.0; n];
    let mut participating = vec![false; n];
    for (s, &node) in selected.iter().enumerate() {
        weights[node] = state.w(s, 0);
        participating[node] = true;
    }
    for j in 0..n {
        if participating[j] {
            continue;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        let mut exact = None;
        for (s, &node) in selected.iter().enumerate() {
            let d = dist(&grid.positions[j], &grid.positions[node]);
            if d == 0.0 {
                exact = Some(state.w(s, 0));
                break;
            }
            let b = 1.0 / (d * d);
            num += b * state.w(s, 0);
            den += b;
        }
        weights[j] = exact.unwrap_or(num / den);
    }
    Ok(RemResult { weights, participating })
}

/// Writes `node_id,x_m,y_m,w`.
pub fn write_weight_map_csv(path: &Path, grid: &RssGrid, weights: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node_id", "x_m", "y_m", "w"])?;
    for i in 0..grid.len() {
        w.write_record([
            grid.node_ids[i].to_string(),
            grid.positions[i][0].to_string(),
            grid.positions[i][1].to_string(),
            format!("{:e}", weights[i]),
        ])?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// 20×20 nodes on a 0.2 m lattice below one source 1.5 m above the floor
/// at (1.3 m, 2.7 m): log-distance field `−40 − 30 log10(d)` dBm with 40
/// Rayleigh-faded samples per node. Returns the grid and the noise-free
/// mean field in dBm.
pub fn synthetic_indoor_grid<R: Rng + ?Sized>(rng: &mut R) -> (RssGrid, Vec<f64>) {
    let src = [1.3, 2.7, 1.5];
    let mut g = RssGrid {
        node_ids: Vec::with_capacity(400),
        positions: Vec::with_capacity(400),
        samples: Vec::with_capacity(400),
    };
    let mut field = Vec::with_capacity(400);
    for i in 0..400u64 {
        let p = [(i % 20) as f64 * 0.2, (i / 20) as f64 * 0.2];
        let d = ((p[0] - src[0]).powi(2) + (p[1] - src[1]).powi(2) + src[2] * src[2]).sqrt();
        let mean_dbm = -40.0 - 30.0 * d.log10();
        field.push(mean_dbm);
        let s: Vec<f64> = (0..40)
            .map(|_| {
                let f: f64 = Exp1.sample(rng);
                mean_dbm + 10.0 * f.max(1e-6).log10()
            })
            .collect();
        g.node_ids.push(i);
        g.positions.push(p);
        g.samples.push(s);
    }
    (g, field)
}

/// Writes `node_id,x_m,y_m,rss_dbm_sample_1..T`.
pub fn write_rss_csv(path: &Path, grid: &RssGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let t = grid.samples.first().map_or(0, |s| s.len());
    let mut header = vec!["node_id".to_string(), "x_m".into(), "y_m".into()];
    header.extend((1..=t).map(|i| format!("rss_dbm_sample_{i}")));
    w.write_record(&header)?;
    for i in 0..grid.len() {
        let mut rec = vec![
            grid.node_ids[i].to_string(),
            grid.positions[i][0].to_string(),
            grid.positions[i][1].to_string(),
        ];
        rec.extend(grid.samples[i].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}
