use super::{solve_lp_relaxation, AssignmentInstance, AssignmentResult, Method, SolveStats};
use crate::error::{Error, Result};

/// Settings of the branch-and-bound solver.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactOptions {
    /// Stop once the incumbent is within this relative distance of the lower
    /// bound (a node is pruned when it cannot improve the incumbent by more).
    /// `0.0` demands strict optimality.
    pub relative_gap: f64,
    /// Node budget; when exhausted the best incumbent is returned with
    /// `proven_optimal = false`.
    pub node_limit: u64,
    pub max_bs: usize,
    pub max_bands: usize,
    /// Feasible assignments used as initial incumbents.
    pub warm_starts: Vec<Vec<usize>>,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions {
            relative_gap: 1e-4,
            node_limit: 20_000_000,
            max_bs: 60,
            max_bands: 6,
            warm_starts: Vec::new(),
        }
    }
}

/// Exact min-max assignment with the default options.
pub fn solve_exact(inst: &AssignmentInstance) -> Result<AssignmentResult> {
    solve_exact_with(inst, &ExactOptions::default())
}

/// Depth-first branch-and-bound over BSs (largest cost first), branching on
/// the band, with per-band capacity bounds and an averaging bound.
pub fn solve_exact_with(inst: &AssignmentInstance, opts: &ExactOptions) -> Result<AssignmentResult> {
    if inst.num_bs > opts.max_bs || inst.num_bands > opts.max_bands {
        return Err(Error::SizeGuard(format!(
            "exact solver limited to K ≤ {}, L ≤ {} (got K = {}, L = {})",
            opts.max_bs, opts.max_bands, inst.num_bs, inst.num_bands
        )));
    }
    let k_n = inst.num_bs;
    let l_n = inst.num_bands;

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut consider = |bands: Vec<usize>| {
        if inst.is_feasible(&bands) {
            let improved = local_search(inst, bands);
            let z = inst.objective(&improved);
            if best.as_ref().is_none_or(|(bz, _)| z < *bz) {
                best = Some((z, improved));
            }
        }
    };
    for w in &opts.warm_starts {
        consider(w.clone());
    }
    consider(greedy(inst));
    let (mut inc_z, mut inc) = best.expect("greedy start is always feasible");

    let lp_bound = solve_lp_relaxation(inst).map(|lp| lp.objective).unwrap_or(0.0);
    // relaxation value carries simplex round-off; shave it slightly
    let mut root_lb = lp_bound * (1.0 - 1e-9);
    for l in 0..l_n {
        let mut col: Vec<f64> = (0..k_n).map(|k| inst.band_cost(k, l)).collect();
        col.sort_by(f64::total_cmp);
        root_lb = root_lb.max(col[..inst.required[l]].iter().sum());
    }

    let mut nodes = 0u64;
    let mut proven = inc_z <= root_lb * (1.0 + opts.relative_gap);
    if !proven {
        let mut search = Search::new(inst, opts.relative_gap);
        search.incumbent = inc_z;
        search.best = inc.clone();
        let finished = search.run(opts.node_limit);
        nodes = search.nodes;
        inc_z = search.incumbent;
        inc = search.best;
        proven = finished;
    }
    let lower_bound = if proven { root_lb.max(inc_z / (1.0 + opts.relative_gap)).min(inc_z) } else { root_lb };
    debug_assert!((inst.objective(&inc) - inc_z).abs() <= 1e-9 * inc_z.max(1.0));
    Ok(AssignmentResult::new(
        inst,
        inc,
        Method::Exact,
        SolveStats {
            iterations: nodes,
            lower_bound: Some(lower_bound),
            proven_optimal: proven,
            lp_integral: false,
        },
    ))
}

/// Largest item first into the open band with the smallest resulting load.
fn greedy(inst: &AssignmentInstance) -> Vec<usize> {
    let l_n = inst.num_bands;
    let mut order: Vec<usize> = (0..inst.num_bs).collect();
    let key = |k: usize| (0..l_n).map(|l| inst.band_cost(k, l)).fold(0.0, f64::max);
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut loads = vec![0.0; l_n];
    let mut cap = inst.required.clone();
    let mut bands = vec![0; inst.num_bs];
    for k in order {
        let l = (0..l_n)
            .filter(|&l| cap[l] > 0)
            .min_by(|&a, &b| (loads[a] + inst.band_cost(k, a)).total_cmp(&(loads[b] + inst.band_cost(k, b))))
            .expect("capacities sum to K");
        bands[k] = l;
        cap[l] -= 1;
        loads[l] += inst.band_cost(k, l);
    }
    bands
}

/// Swap improvement: exchange one or two BSs of the most loaded band with the
/// same number from another band while that lowers the pair's maximum below
/// the current objective.
fn local_search(inst: &AssignmentInstance, mut bands: Vec<usize>) -> Vec<usize> {
    let l_n = inst.num_bands;
    let a = |k: usize, l: usize| inst.band_cost(k, l);
    for _ in 0..10_000 {
        let loads = inst.band_loads(&bands);
        let (top, &zmax) = loads
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("at least one band");
        let members = |l: usize| -> Vec<usize> { (0..bands.len()).filter(|&k| bands[k] == l).collect() };
        let in_top = members(top);
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        for other in (0..l_n).filter(|&l| l != top) {
            let in_other = members(other);
            // single swaps
            for &i in &in_top {
                for &j in &in_other {
                    let nt = loads[top] - a(i, top) + a(j, top);
                    let no = loads[other] - a(j, other) + a(i, other);
                    let m = nt.max(no);
                    if m < zmax * (1.0 - 1e-12) && best.as_ref().is_none_or(|(bm, _)| m < *bm) {
                        best = Some((m, vec![(i, other), (j, top)]));
                    }
                }
            }
            // pair swaps
            for (x, &i1) in in_top.iter().enumerate() {
                for &i2 in &in_top[x + 1..] {
                    for (y, &j1) in in_other.iter().enumerate() {
                        for &j2 in &in_other[y + 1..] {
                            let nt = loads[top] - a(i1, top) - a(i2, top) + a(j1, top) + a(j2, top);
                            let no = loads[other] - a(j1, other) - a(j2, other) + a(i1, other) + a(i2, other);
                            let m = nt.max(no);
                            if m < zmax * (1.0 - 1e-12) && best.as_ref().is_none_or(|(bm, _)| m < *bm) {
                                best = Some((m, vec![(i1, other), (i2, other), (j1, top), (j2, top)]));
                            }
                        }
                    }
                }
            }
        }
        match best {
            Some((_, moves)) => {
                for (k, l) in moves {
                    bands[k] = l;
                }
            }
            None => break,
        }
    }
    bands
}

struct Search<'a> {
    inst: &'a AssignmentInstance,
    gap: f64,
    order: Vec<usize>,
    /// `suffix_prefix[d][l][c]`: sum of the `c` smallest `a_{k,l}` over items `order[d..]`.
    suffix_prefix: Vec<Vec<Vec<f64>>>,
    /// Σ over `order[d..]` of `min_l a_{k,l}`.
    suffix_min: Vec<f64>,
    loads: Vec<f64>,
    cap: Vec<usize>,
    current: Vec<usize>,
    incumbent: f64,
    best: Vec<usize>,
    nodes: u64,
    limit: u64,
}

impl<'a> Search<'a> {
    fn new(inst: &'a AssignmentInstance, gap: f64) -> Self {
        let k_n = inst.num_bs;
        let l_n = inst.num_bands;
        let mut order: Vec<usize> = (0..k_n).collect();
        let key = |k: usize| (0..l_n).map(|l| inst.band_cost(k, l)).fold(f64::INFINITY, f64::min);
        order.sort_by(|&x, &y| key(y).total_cmp(&key(x)).then(x.cmp(&y)));
        let mut suffix_prefix = Vec::with_capacity(k_n + 1);
        let mut suffix_min = vec![0.0; k_n + 1];
        for d in 0..=k_n {
            let per_band: Vec<Vec<f64>> = (0..l_n)
                .map(|l| {
                    let mut v: Vec<f64> = order[d..].iter().map(|&k| inst.band_cost(k, l)).collect();
                    v.sort_by(f64::total_cmp);
                    let mut pre = Vec::with_capacity(v.len() + 1);
                    pre.push(0.0);
                    let mut s = 0.0;
                    for x in v {
                        s += x;
                        pre.push(s);
                    }
                    pre
                })
                .collect();
            suffix_prefix.push(per_band);
            suffix_min[d] = order[d..].iter().map(|&k| key(k)).sum();
        }
        Search {
            inst,
            gap,
            order,
            suffix_prefix,
            suffix_min,
            loads: vec![0.0; l_n],
            cap: inst.required.clone(),
            current: vec![usize::MAX; k_n],
            incumbent: f64::INFINITY,
            best: Vec::new(),
            nodes: 0,
            limit: 0,
        }
    }

    /// Returns true when the search space was exhausted within the node limit.
    fn run(&mut self, limit: u64) -> bool {
        self.limit = limit;
        self.dfs(0)
    }

    fn bound(&self, depth: usize) -> f64 {
        let l_n = self.inst.num_bands;
        let mut lb = (self.loads.iter().sum::<f64>() + self.suffix_min[depth]) / l_n as f64;
        for l in 0..l_n {
            lb = lb.max(self.loads[l] + self.suffix_prefix[depth][l][self.cap[l]]);
        }
        lb
    }

    fn dfs(&mut self, depth: usize) -> bool {
        self.nodes += 1;
        if self.nodes > self.limit {
            return false;
        }
        if depth == self.inst.num_bs {
            let z = self.loads.iter().cloned().fold(0.0, f64::max);
            if z < self.incumbent {
                self.incumbent = z;
                self.best = self.current.clone();
            }
            return true;
        }
        if self.bound(depth) * (1.0 + self.gap) >= self.incumbent {
            return true;
        }
        let k = self.order[depth];
        let l_n = self.inst.num_bands;
        let mut choices: Vec<usize> = (0..l_n).filter(|&l| self.cap[l] > 0).collect();
        choices.sort_by(|&x, &y| {
            (self.loads[x] + self.inst.band_cost(k, x)).total_cmp(&(self.loads[y] + self.inst.band_cost(k, y)))
        });
        let shared = self.inst.is_band_independent();
        let mut tried: Vec<(f64, usize)> = Vec::new();
        for l in choices {
            if shared {
                // bands in identical states are interchangeable
                let state = (self.loads[l], self.cap[l]);
                if tried.iter().any(|&(ld, c)| ld == state.0 && c == state.1) {
                    continue;
                }
                tried.push(state);
            }
            let a = self.inst.band_cost(k, l);
            if (self.loads[l] + a) * (1.0 + self.gap) >= self.incumbent {
                continue;
            }
            self.loads[l] += a;
            self.cap[l] -= 1;
            self.current[k] = l;
            let complete = self.dfs(depth + 1);
            self.loads[l] -= a;
            self.cap[l] += 1;
            self.current[k] = usize::MAX;
            if !complete {
                return false;
            }
            if self.incumbent <= self.bound(depth) * (1.0 + self.gap) {
                break;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point;
    use crate::scheduler::uniform_counts;

    fn strict() -> ExactOptions {
        ExactOptions {
            relative_gap: 0.0,
            ..Default::default()
        }
    }

    fn enumerate(inst: &AssignmentInstance) -> f64 {
        fn rec(inst: &AssignmentInstance, k: usize, cur: &mut Vec<usize>, best: &mut f64) {
            if k == inst.num_bs {
                if inst.is_feasible(cur) {
                    *best = best.min(inst.objective(cur));
                }
                return;
            }
            for l in 0..inst.num_bands {
                cur.push(l);
                rec(inst, k + 1, cur, best);
                cur.pop();
            }
        }
        let mut best = f64::INFINITY;
        rec(inst, 0, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn equal_costs_any_assignment() {
        let c = vec![1.0; 2 * 2 * 2];
        let inst = AssignmentInstance::new(2, 2, vec![1, 1], c).unwrap();
        let r = solve_exact_with(&inst, &strict()).unwrap();
        assert!((r.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unit_square_pairs_diagonals() {
        let pos = vec![
            Point::new(0.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(1.0, 1.0, 0.0),
        ];
        let inst = AssignmentInstance::from_positions(&pos, vec![2, 2]).unwrap();
        let r = solve_exact_with(&inst, &strict()).unwrap();
        assert!((r.objective - enumerate(&inst)).abs() < 1e-12);
        assert!(r.stats.proven_optimal);
    }

    #[test]
    fn matches_enumeration_on_band_dependent_costs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let k = 7;
            let l = 3;
            let c: Vec<f64> = (0..k * k * l).map(|_| rng.random::<f64>() * 10.0).collect();
            let inst = AssignmentInstance::new(k, l, vec![3, 2, 2], c).unwrap();
            let r = solve_exact_with(&inst, &strict()).unwrap();
            assert!(inst.is_feasible(&r.matrix.bands));
            assert!((r.objective - enumerate(&inst)).abs() < 1e-9);
        }
    }

    #[test]
    fn size_guard() {
        let pos: Vec<Point> = (0..61).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        let inst = AssignmentInstance::from_positions(&pos, uniform_counts(61, 1)).unwrap();
        assert!(matches!(solve_exact(&inst), Err(Error::SizeGuard(_))));
    }
}
