use rand::seq::SliceRandom;
use rand::Rng;

use super::{kmeans, AssignmentInstance, AssignmentResult, Method, SolveStats};
use crate::error::{invalid, Result};
use crate::model::Point;

/// Clustering scheduler. For each of `restarts` random band orders, the
/// remaining BSs are split into `q̃_l` k-means clusters for the next band `l`
/// and each cluster contributes the BS `argmin_e Σ_{j∈C} c̃_{j,e,l}`. The
/// order with the lowest objective wins (earliest on ties).
pub fn heuristic_schedule<R: Rng + ?Sized>(
    inst: &AssignmentInstance,
    positions: &[Point],
    restarts: usize,
    rng: &mut R,
) -> Result<AssignmentResult> {
    if positions.len() != inst.num_bs {
        return Err(invalid("one position per BS is required"));
    }
    if restarts == 0 {
        return Err(invalid("at least one restart is required"));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts {
        let mut order: Vec<usize> = (0..inst.num_bands).collect();
        order.shuffle(rng);
        let bands = one_pass(inst, positions, &order, rng)?;
        let z = inst.objective(&bands);
        if best.as_ref().is_none_or(|(bz, _)| z < *bz) {
            best = Some((z, bands));
        }
    }
    let (_, bands) = best.expect("restarts > 0");
    Ok(AssignmentResult::new(
        inst,
        bands,
        Method::Heuristic,
        SolveStats {
            iterations: restarts as u64,
            ..Default::default()
        },
    ))
}

fn one_pass<R: Rng + ?Sized>(inst: &AssignmentInstance, positions: &[Point], order: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..inst.num_bs).collect();
    let mut bands = vec![usize::MAX; inst.num_bs];
    for &l in order {
        let q = inst.required[l];
        if q == 0 {
            continue;
        }
        if remaining.len() < q {
            return Err(invalid(format!("{} BSs left for {q} clusters", remaining.len())));
        }
        let pts: Vec<[f64; 2]> = remaining.iter().map(|&k| [positions[k].x, positions[k].y]).collect();
        let labels = kmeans(&pts, q, rng)?;
        let mut picked = Vec::with_capacity(q);
        for c in 0..q {
            let members: Vec<usize> = remaining
                .iter()
                .zip(&labels)
                .filter(|(_, &lab)| lab == c)
                .map(|(&k, _)| k)
                .collect();
            picked.push(cluster_representative(inst, &members, l));
        }
        for &k in &picked {
            bands[k] = l;
        }
        remaining.retain(|k| !picked.contains(k));
    }
    Ok(bands)
}

/// `argmin_{e∈C} Σ_{j∈C} c̃_{j,e,l}`, lowest id on ties.
pub(crate) fn cluster_representative(inst: &AssignmentInstance, members: &[usize], band: usize) -> usize {
    let mut best = members[0];
    let mut best_cost = f64::INFINITY;
    for &e in members {
        let c: f64 = members.iter().map(|&j| inst.cost(j, e, band)).sum();
        if c < best_cost || (c == best_cost && e < best) {
            best = e;
            best_cost = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_band_takes_everyone() {
        let pos: Vec<Point> = (0..6).map(|i| Point::new(i as f64 * 10.0, 0.0, 0.0)).collect();
        let inst = AssignmentInstance::from_positions(&pos, vec![6]).unwrap();
        let r = heuristic_schedule(&inst, &pos, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.matrix.bands, vec![0; 6]);
        assert!((r.objective - inst.objective(&[0; 6])).abs() < 1e-12);
    }

    #[test]
    fn middle_of_line_is_representative() {
        let pos: Vec<Point> = (0..3).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        let inst = AssignmentInstance::from_positions(&pos, vec![3]).unwrap();
        // summed distances: 3, 2, 3
        assert_eq!(cluster_representative(&inst, &[0, 1, 2], 0), 1);
    }

    #[test]
    fn result_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pos: Vec<Point> = (0..30).map(|_| Point::new(rng.random::<f64>() * 2000.0, rng.random::<f64>() * 2000.0, 0.0)).collect();
        let inst = AssignmentInstance::from_positions(&pos, super::super::uniform_counts(30, 4)).unwrap();
        let r = heuristic_schedule(&inst, &pos, 10, &mut rng).unwrap();
        assert!(inst.is_feasible(&r.matrix.bands));
    }
}
