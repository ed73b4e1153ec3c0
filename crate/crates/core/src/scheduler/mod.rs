//! Band-level sensing assignment: every BS senses exactly one band and band
//! `l` is sensed by `q̃_l` BSs, minimizing the largest per-band reporting cost
//! `max_l Σ_j Σ_k c̃_{j,k,l} x̃_{k,l}`.

mod exact;
mod heuristic;
mod kmeans;
mod lp;

pub use exact::{solve_exact, solve_exact_with, ExactOptions};
pub use heuristic::heuristic_schedule;
pub use kmeans::kmeans;
pub use lp::{round_lp_solution, solve_lp_relaxation, solve_lp_rounded, LpSolution};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Point, SpectrumPlan};

/// Cost tensor storage.
#[derive(Debug, Clone, PartialEq)]
enum Costs {
    /// Band-independent costs `c̃_{j,k,l} = d[j·K + k]`.
    Shared(Vec<f64>),
    /// Full tensor `c̃_{j,k,l} = c[(j·K + k)·L + l]`.
    Full(Vec<f64>),
}

/// One instance of the band-level assignment problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentInstance {
    pub num_bs: usize,
    pub num_bands: usize,
    pub required: Vec<usize>,
    costs: Costs,
    /// `band_cost[k·L + l] = Σ_j c̃_{j,k,l}`.
    band_cost: Vec<f64>,
}

impl AssignmentInstance {
    /// Instance with a full cost tensor laid out as `(j·K + k)·L + l`.
    pub fn new(num_bs: usize, num_bands: usize, required: Vec<usize>, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != num_bs * num_bs * num_bands {
            return Err(invalid("cost tensor must have K·K·L entries"));
        }
        Self::build(num_bs, num_bands, required, Costs::Full(costs))
    }

    /// Instance with band-independent costs equal to the BS-BS distances.
    pub fn from_positions(positions: &[Point], required: Vec<usize>) -> Result<Self> {
        let k = positions.len();
        let mut d = vec![0.0; k * k];
        for j in 0..k {
            for i in 0..k {
                d[j * k + i] = positions[j].dist2d(&positions[i]);
            }
        }
        Self::build(k, required.len(), required, Costs::Shared(d))
    }

    fn build(num_bs: usize, num_bands: usize, required: Vec<usize>, costs: Costs) -> Result<Self> {
        if num_bs == 0 || num_bands == 0 {
            return Err(invalid("instance needs at least one BS and one band"));
        }
        if required.len() != num_bands {
            return Err(invalid("required counts must have one entry per band"));
        }
        let total: usize = required.iter().sum();
        if total != num_bs {
            return Err(Error::Infeasible(format!("required counts sum to {total}, expected {num_bs}")));
        }
        let raw = match &costs {
            Costs::Shared(v) | Costs::Full(v) => v,
        };
        if raw.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(invalid("costs must be finite and nonnegative"));
        }
        let mut inst = AssignmentInstance {
            num_bs,
            num_bands,
            required,
            costs,
            band_cost: Vec::new(),
        };
        let mut band_cost = vec![0.0; num_bs * num_bands];
        for k in 0..num_bs {
            for l in 0..num_bands {
                band_cost[k * num_bands + l] = (0..num_bs).map(|j| inst.cost(j, k, l)).sum();
            }
        }
        inst.band_cost = band_cost;
        Ok(inst)
    }

    /// `c̃_{j,k,l}`.
    pub fn cost(&self, j: usize, k: usize, l: usize) -> f64 {
        match &self.costs {
            Costs::Shared(d) => d[j * self.num_bs + k],
            Costs::Full(c) => c[(j * self.num_bs + k) * self.num_bands + l],
        }
    }

    /// `Σ_j c̃_{j,k,l}`: cost added to band `l` when BS `k` senses it.
    pub fn band_cost(&self, k: usize, l: usize) -> f64 {
        self.band_cost[k * self.num_bands + l]
    }

    /// True when every band sees the same costs.
    pub fn is_band_independent(&self) -> bool {
        matches!(self.costs, Costs::Shared(_))
    }

    /// Per-band loads `Σ_k a_{k,l} x_{k,l}` of an assignment.
    pub fn band_loads(&self, bands: &[usize]) -> Vec<f64> {
        let mut loads = vec![0.0; self.num_bands];
        for (k, &l) in bands.iter().enumerate() {
            loads[l] += self.band_cost(k, l);
        }
        loads
    }

    /// Objective `Z = max_l Σ_j Σ_k c̃_{j,k,l} x̃_{k,l}`.
    pub fn objective(&self, bands: &[usize]) -> f64 {
        self.band_loads(bands).into_iter().fold(0.0, f64::max)
    }

    /// Whether `bands` satisfies the row and column constraints.
    pub fn is_feasible(&self, bands: &[usize]) -> bool {
        if bands.len() != self.num_bs || bands.iter().any(|&l| l >= self.num_bands) {
            return false;
        }
        let mut counts = vec![0usize; self.num_bands];
        for &l in bands {
            counts[l] += 1;
        }
        counts == self.required
    }
}

/// `K` BSs split as evenly as possible over `L` bands (earlier bands take the remainder).
pub fn uniform_counts(num_bs: usize, num_bands: usize) -> Vec<usize> {
    (0..num_bands)
        .map(|l| num_bs / num_bands + usize::from(l < num_bs % num_bands))
        .collect()
}

/// Binary `K×L` assignment, stored as the band index of every BS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    pub num_bands: usize,
    pub bands: Vec<usize>,
}

impl AssignmentMatrix {
    pub fn new(num_bands: usize, bands: Vec<usize>) -> Self {
        AssignmentMatrix { num_bands, bands }
    }

    /// Dense 0/1 matrix, row-major `K×L`.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.bands
            .iter()
            .map(|&b| (0..self.num_bands).map(|l| u8::from(l == b)).collect())
            .collect()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.to_dense().iter().map(|r| r.iter().map(|&v| v as usize).sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_bands];
        for &b in &self.bands {
            c[b] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    LpRounded,
    Heuristic,
    Random,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::LpRounded => "lp_rounded",
            Method::Heuristic => "heuristic",
            Method::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    /// Branch-and-bound nodes or simplex pivots, depending on the method.
    pub iterations: u64,
    /// Best known lower bound on the optimum (exact and LP methods).
    pub lower_bound: Option<f64>,
    /// Exact method: optimality proven within the configured tolerance.
    pub proven_optimal: bool,
    /// LP method: the relaxation was already integral.
    pub lp_integral: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub matrix: AssignmentMatrix,
    pub objective: f64,
    pub method: Method,
    pub stats: SolveStats,
}

impl AssignmentResult {
    pub(crate) fn new(inst: &AssignmentInstance, bands: Vec<usize>, method: Method, stats: SolveStats) -> Self {
        debug_assert!(inst.is_feasible(&bands));
        AssignmentResult {
            objective: inst.objective(&bands),
            matrix: AssignmentMatrix::new(inst.num_bands, bands),
            method,
            stats,
        }
    }
}

/// Uniformly random feasible assignment.
pub fn random_assignment<R: Rng + ?Sized>(inst: &AssignmentInstance, rng: &mut R) -> AssignmentResult {
    let mut slots: Vec<usize> = inst
        .required
        .iter()
        .enumerate()
        .flat_map(|(l, &q)| std::iter::repeat_n(l, q))
        .collect();
    slots.shuffle(rng);
    AssignmentResult::new(inst, slots, Method::Random, SolveStats::default())
}

/// Channel sets `M_k` implied by a band assignment: band `l` covers
/// channels `[l·p, (l+1)·p)`.
pub fn assignment_to_channels(matrix: &AssignmentMatrix, plan: &SpectrumPlan) -> Vec<Vec<usize>> {
    matrix.bands.iter().map(|&l| plan.band_channels(l).collect()).collect()
}
