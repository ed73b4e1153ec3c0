use rand::Rng;

use crate::error::{invalid, Result};

/// Lloyd's k-means on 2D points with k-means++ seeding. Returns the cluster
/// label of every point. Stops when labels are stable or after 100 rounds;
/// an empty cluster is reseeded at the point farthest from its own centroid.
pub fn kmeans<R: Rng + ?Sized>(points: &[[f64; 2]], q: usize, rng: &mut R) -> Result<Vec<usize>> {
    if q == 0 {
        return Err(invalid("k-means needs at least one cluster"));
    }
    let n = points.len();
    if n < q {
        return Err(invalid(format!("{n} points cannot form {q} clusters")));
    }
    let mut centers = seed_plus_plus(points, q, rng);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let l = nearest(p, &centers);
            if labels[i] != l {
                labels[i] = l;
                changed = true;
            }
        }
        let mut sums = vec![[0.0f64; 2]; q];
        let mut counts = vec![0usize; q];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            counts[l] += 1;
        }
        for c in 0..q {
            if counts[c] > 0 {
                centers[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
        let mut reseeded = false;
        for c in 0..q {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| {
                    dist2(&points[a], &centers[labels[a]])
                        .total_cmp(&dist2(&points[b], &centers[labels[b]]))
                        .then(b.cmp(&a))
                });
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                labels[i] = c;
                counts[c] = 1;
                centers[c] = points[i];
                reseeded = true;
            }
        }
        if !changed && !reseeded {
            break;
        }
    }
    Ok(labels)
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &[f64; 2], centers: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = dist2(p, center);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &[[f64; 2]], q: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    while centers.len() < q {
        let total: f64 = (0..n).filter(|&i| !chosen[i]).map(|i| d2[i]).sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !chosen[i]) {
                u -= d2[i];
                if u < 0.0 && d2[i] > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !chosen[i] && d2[i] > 0.0).unwrap())
        } else {
            // all remaining points coincide with chosen centers
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(points[pick]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &points[pick]));
        }
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn singleton_and_single_cluster() {
        let pts: Vec<[f64; 2]> = (0..7).map(|i| [i as f64, (i * i) as f64]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = kmeans(&pts, 7, &mut rng).unwrap();
        l.sort_unstable();
        assert_eq!(l, (0..7).collect::<Vec<_>>());
        assert!(kmeans(&pts, 1, &mut rng).unwrap().iter().all(|&x| x == 0));
        assert!(kmeans(&pts, 0, &mut rng).is_err());
        assert!(kmeans(&pts, 8, &mut rng).is_err());
    }

    #[test]
    fn recovers_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (b, cx) in [(0usize, 0.0), (1, 100.0)] {
            for _ in 0..40 {
                pts.push([cx + n.sample(&mut rng), n.sample(&mut rng)]);
                truth.push(b);
            }
        }
        for s in 0..20 {
            let l = kmeans(&pts, 2, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
            let flip = l[0] != truth[0];
            assert!(l.iter().zip(&truth).all(|(&a, &t)| (a == t) != flip));
        }
    }

    #[test]
    fn duplicate_points_still_give_nonempty_clusters() {
        let pts = vec![[0.0, 0.0]; 5];
        let l = kmeans(&pts, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for c in 0..3 {
            assert!(l.contains(&c));
        }
    }
}
