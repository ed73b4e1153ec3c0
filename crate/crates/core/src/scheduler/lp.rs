use super::{AssignmentInstance, AssignmentResult, Method, SolveStats};
use crate::error::{Error, Result};

/// Values within this distance of 0 or 1 count as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;
const PIVOT_EPS: f64 = 1e-9;

/// Optimal solution of the LP relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// `x[k·L + l]`.
    pub x: Vec<f64>,
    /// Optimal `t = max_l Σ_k a_{k,l} x_{k,l}`: a lower bound on the integer optimum.
    pub objective: f64,
    pub pivots: u64,
}

impl LpSolution {
    pub fn is_integral(&self) -> bool {
        self.x.iter().all(|&v| (v - v.round()).abs() <= INTEGRALITY_TOL)
    }
}

/// Solves the relaxation `min t` s.t. `Σ_l x_{k,l} = 1`, `Σ_k x_{k,l} = q̃_l`,
/// `Σ_k a_{k,l} x_{k,l} ≤ t`, `x ≥ 0` with a dense two-phase primal simplex
/// using Bland's rule.
pub fn solve_lp_relaxation(inst: &AssignmentInstance) -> Result<LpSolution> {
    let k_n = inst.num_bs;
    let l_n = inst.num_bands;
    let nx = k_n * l_n;
    let t_col = nx;
    let n = nx + 1 + l_n;
    let scale = (0..k_n)
        .flat_map(|k| (0..l_n).map(move |l| (k, l)))
        .map(|(k, l)| inst.band_cost(k, l))
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut rows = Vec::with_capacity(k_n + 2 * l_n);
    let mut rhs = Vec::with_capacity(k_n + 2 * l_n);
    for k in 0..k_n {
        let mut r = vec![0.0; n];
        for l in 0..l_n {
            r[k * l_n + l] = 1.0;
        }
        rows.push(r);
        rhs.push(1.0);
    }
    for l in 0..l_n {
        let mut r = vec![0.0; n];
        for k in 0..k_n {
            r[k * l_n + l] = 1.0;
        }
        rows.push(r);
        rhs.push(inst.required[l] as f64);
    }
    for l in 0..l_n {
        let mut r = vec![0.0; n];
        for k in 0..k_n {
            r[k * l_n + l] = inst.band_cost(k, l) / scale;
        }
        r[t_col] = -1.0;
        r[nx + 1 + l] = 1.0;
        rows.push(r);
        rhs.push(0.0);
    }
    let mut cost = vec![0.0; n];
    cost[t_col] = 1.0;
    let (sol, value, pivots) = simplex(rows, rhs, cost)?;
    Ok(LpSolution {
        x: sol[..nx].iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        objective: value * scale,
        pivots,
    })
}

/// Minimizes `cᵀx` subject to `Ax = b`, `x ≥ 0` (`b ≥ 0`). Returns the
/// solution, the optimal value and the pivot count.
pub(crate) fn simplex(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, c: Vec<f64>) -> Result<(Vec<f64>, f64, u64)> {
    let m = a.len();
    let n = c.len();
    for i in 0..m {
        if b[i] < 0.0 {
            b[i] = -b[i];
            for v in a[i].iter_mut() {
                *v = -*v;
            }
        }
    }
    // reuse unit columns as the starting basis, add artificials elsewhere
    let mut basis = vec![usize::MAX; m];
    for j in 0..n {
        let nz: Vec<usize> = (0..m).filter(|&i| a[i][j] != 0.0).collect();
        if nz.len() == 1 && a[nz[0]][j] == 1.0 && basis[nz[0]] == usize::MAX {
            basis[nz[0]] = j;
        }
    }
    let art_rows: Vec<usize> = (0..m).filter(|&i| basis[i] == usize::MAX).collect();
    let total = n + art_rows.len();
    let mut t: Vec<Vec<f64>> = a
        .into_iter()
        .zip(&b)
        .map(|(mut r, &bi)| {
            r.resize(total, 0.0);
            r.push(bi);
            r
        })
        .collect();
    for (idx, &i) in art_rows.iter().enumerate() {
        t[i][n + idx] = 1.0;
        basis[i] = n + idx;
    }
    let mut pivots = 0u64;

    if !art_rows.is_empty() {
        let mut c1 = vec![0.0; total];
        for c in c1.iter_mut().skip(n) {
            *c = 1.0;
        }
        let obj = run_phase(&mut t, &mut basis, &c1, total, &mut pivots)?;
        if obj > 1e-7 * (1.0 + b.iter().sum::<f64>()) {
            return Err(Error::Infeasible("linear relaxation has no feasible point".into()));
        }
        // drive zero-level artificials out of the basis; drop redundant rows
        let mut i = 0;
        while i < t.len() {
            if basis[i] >= n {
                if let Some(j) = (0..n).find(|&j| t[i][j].abs() > PIVOT_EPS) {
                    pivot(&mut t, &mut basis, i, j);
                    pivots += 1;
                } else {
                    t.remove(i);
                    basis.remove(i);
                    continue;
                }
            }
            i += 1;
        }
        for row in t.iter_mut() {
            let rhs = row[total];
            row.truncate(n);
            row.push(rhs);
        }
    }
    let obj = run_phase(&mut t, &mut basis, &c, n, &mut pivots)?;
    let mut x = vec![0.0; n];
    for (i, &bv) in basis.iter().enumerate() {
        x[bv] = t[i][n];
    }
    Ok((x, obj, pivots))
}

fn run_phase(t: &mut [Vec<f64>], basis: &mut [usize], c: &[f64], ncols: usize, pivots: &mut u64) -> Result<f64> {
    let rhs = t.first().map_or(0, |r| r.len() - 1);
    loop {
        // reduced costs r_j = c_j − c_Bᵀ B⁻¹ A_j (tableau already holds B⁻¹A)
        let entering = (0..ncols).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let z: f64 = basis.iter().zip(t.iter()).map(|(&bv, row)| c[bv] * row[j]).sum();
            c[j] - z < -PIVOT_EPS
        });
        let Some(j) = entering else {
            let value = basis.iter().zip(t.iter()).map(|(&bv, row)| c[bv] * row[rhs]).sum();
            return Ok(value);
        };
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in t.iter().enumerate() {
            if row[j] > PIVOT_EPS {
                let ratio = row[rhs] / row[j];
                let better = match leave {
                    None => true,
                    Some((li, lr)) => ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && basis[i] < basis[li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((i, _)) = leave else {
            return Err(Error::Numerical("linear program is unbounded".into()));
        };
        pivot(t, basis, i, j);
        *pivots += 1;
        if *pivots > 1_000_000 {
            return Err(Error::Numerical("simplex pivot limit reached".into()));
        }
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, c: usize) {
    let p = t[r][c];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let prow = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i == r {
            continue;
        }
        let f = row[c];
        if f != 0.0 {
            for (v, pv) in row.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
        }
    }
    basis[r] = c;
}

/// Turns an LP solution into a feasible assignment: keep the integral ones,
/// then repeatedly fix the largest fractional `x_{k,l}` whose band still has
/// room (`q̄_l < q̃_l`), ties to the lower `(k, l)`. Rows that end up with no
/// usable fractional entry go to the open band with the smallest resulting
/// load.
pub fn round_lp_solution(inst: &AssignmentInstance, x: &[f64]) -> Vec<usize> {
    let k_n = inst.num_bs;
    let l_n = inst.num_bands;
    let mut bands = vec![usize::MAX; k_n];
    let mut filled = vec![0usize; l_n];
    for k in 0..k_n {
        for l in 0..l_n {
            if (x[k * l_n + l] - 1.0).abs() <= INTEGRALITY_TOL && bands[k] == usize::MAX && filled[l] < inst.required[l] {
                bands[k] = l;
                filled[l] += 1;
            }
        }
    }
    let mut frac: Vec<(usize, usize, f64)> = (0..k_n)
        .filter(|&k| bands[k] == usize::MAX)
        .flat_map(|k| (0..l_n).map(move |l| (k, l)))
        .map(|(k, l)| (k, l, x[k * l_n + l]))
        .filter(|&(_, _, v)| v > INTEGRALITY_TOL)
        .collect();
    frac.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    for (k, l, _) in frac {
        if filled == inst.required {
            break;
        }
        if bands[k] == usize::MAX && filled[l] < inst.required[l] {
            bands[k] = l;
            filled[l] += 1;
        }
    }
    let mut loads = vec![0.0; l_n];
    for (k, &l) in bands.iter().enumerate() {
        if l != usize::MAX {
            loads[l] += inst.band_cost(k, l);
        }
    }
    for k in 0..k_n {
        if bands[k] != usize::MAX {
            continue;
        }
        let l = (0..l_n)
            .filter(|&l| filled[l] < inst.required[l])
            .min_by(|&a, &b| (loads[a] + inst.band_cost(k, a)).total_cmp(&(loads[b] + inst.band_cost(k, b))))
            .expect("open band exists while rows remain");
        bands[k] = l;
        filled[l] += 1;
        loads[l] += inst.band_cost(k, l);
    }
    bands
}

/// LP relaxation followed by the rounding procedure.
pub fn solve_lp_rounded(inst: &AssignmentInstance) -> Result<AssignmentResult> {
    let lp = solve_lp_relaxation(inst)?;
    let bands = round_lp_solution(inst, &lp.x);
    Ok(AssignmentResult::new(
        inst,
        bands,
        Method::LpRounded,
        SolveStats {
            iterations: lp.pivots,
            lower_bound: Some(lp.objective),
            proven_optimal: false,
            lp_integral: lp.is_integral(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point;

    #[test]
    fn simplex_small_problem() {
        // min -x0 - 2x1  s.t. x0 + x1 + s0 = 4, x1 + s1 = 3
        let a = vec![vec![1.0, 1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]];
        let (x, v, _) = simplex(a, vec![4.0, 3.0], vec![-1.0, -2.0, 0.0, 0.0]).unwrap();
        assert!((v + 7.0).abs() < 1e-9);
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn simplex_detects_infeasibility() {
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(simplex(a, vec![1.0, 2.0], vec![1.0, 1.0]), Err(Error::Infeasible(_))));
    }

    #[test]
    fn single_band_lp_is_total_cost() {
        let pos: Vec<Point> = (0..5).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        let inst = AssignmentInstance::from_positions(&pos, vec![5]).unwrap();
        let r = solve_lp_rounded(&inst).unwrap();
        assert_eq!(r.matrix.bands, vec![0; 5]);
        assert!(r.stats.lp_integral);
        assert!((r.objective - inst.objective(&[0; 5])).abs() < 1e-9);
    }

    #[test]
    fn lp_value_is_average_load_for_shared_costs() {
        let pos: Vec<Point> = (0..8).map(|i| Point::new((i * i) as f64, i as f64, 0.0)).collect();
        let inst = AssignmentInstance::from_positions(&pos, vec![4, 4]).unwrap();
        let lp = solve_lp_relaxation(&inst).unwrap();
        let total: f64 = (0..8).map(|k| inst.band_cost(k, 0)).sum();
        assert!((lp.objective - total / 2.0).abs() < 1e-6 * total);
    }

    #[test]
    fn rounding_keeps_integral_solutions() {
        let pos: Vec<Point> = (0..4).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        let inst = AssignmentInstance::from_positions(&pos, vec![2, 2]).unwrap();
        let x = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        assert_eq!(round_lp_solution(&inst, &x), vec![0, 1, 1, 0]);
    }

    #[test]
    fn rounding_prefers_largest_fraction() {
        let pos: Vec<Point> = (0..4).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        let inst = AssignmentInstance::from_positions(&pos, vec![2, 2]).unwrap();
        // rows 0,1 integral; rows 2,3 fractional with 0.7 on (2,1) and 0.6 on (3,1)
        let x = vec![1.0, 0.0, 0.0, 1.0, 0.3, 0.7, 0.6, 0.4];
        // band 1 has one slot left: (2,1) takes it, row 3 must go to band 0
        assert_eq!(round_lp_solution(&inst, &x), vec![0, 1, 1, 0]);
    }
}
