//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BatchingError, EmbeddingVector};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index per input vector.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster SSE after each assignment step, starting with the
    /// assignment to the seeded centroids.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn sse(&self) -> f64 {
        *self.sse_history.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn seed_centroids(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();

    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, d) in dist.iter().enumerate() {
                if *d <= 0.0 {
                    continue;
                }
                if target < *d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            // rounding can run past the end; fall back to the last positive weight
            pick.unwrap_or_else(|| dist.iter().rposition(|d| *d > 0.0).unwrap())
        } else {
            // all remaining points coincide with a centroid
            let free: Vec<usize> = (0..n).filter(|i| !chosen[*i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.push(points[next].to_vec());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().unwrap()));
        }
    }
    centroids
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>], out: &mut [usize]) -> f64 {
    let mut sse = 0.0;
    for (slot, p) in out.iter_mut().zip(points) {
        let (idx, d) = nearest(p, centroids);
        *slot = idx;
        sse += d;
    }
    sse
}

/// Recomputes centroids as member means. A centroid that lost all its members
/// moves onto the point farthest from its own centroid. Returns the largest
/// centroid displacement (Euclidean).
fn update(points: &[&[f64]], assignments: &mut [usize], centroids: &mut [Vec<f64>]) -> f64 {
    let dim = centroids[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments.iter()) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }

    let mut moved: f64 = 0.0;
    let mut next: Vec<Vec<f64>> = centroids.to_vec();
    for c in 0..k {
        if counts[c] > 0 {
            next[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let farthest = points
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assignments[*i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, &next[assignments[i]])))
            .fold(None::<(usize, f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        if let Some((i, _)) = farthest {
            counts[assignments[i]] -= 1;
            assignments[i] = c;
            counts[c] = 1;
            next[c] = points[i].to_vec();
        }
    }
    for (old, new) in centroids.iter_mut().zip(next) {
        moved = moved.max(sq_dist(old, &new).sqrt());
        *old = new;
    }
    moved
}

pub fn kmeans(
    vectors: &[EmbeddingVector],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansResult, BatchingError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(BatchingError::InvalidClusterCount { k, points: n });
    }
    let dim = vectors[0].dimension();
    if let Some(bad) = vectors.iter().find(|v| v.dimension() != dim) {
        return Err(BatchingError::DimensionMismatch {
            expected: dim,
            found: bad.dimension(),
        });
    }
    let points: Vec<&[f64]> = vectors.iter().map(|v| v.values()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&points, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut sse_history = vec![assign(&points, &centroids, &mut assignments)];

    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let moved = update(&points, &mut assignments, &mut centroids);
        let sse = assign(&points, &centroids, &mut assignments);
        let prev = *sse_history.last().unwrap();
        debug_assert!(
            sse <= prev + 1e-9 * prev.max(1.0),
            "k-means SSE increased from {prev} to {sse}"
        );
        sse_history.push(sse);
        if moved < tol {
            break;
        }
    }

    Ok(KMeansResult {
        assignments,
        centroids,
        sse_history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(points: &[&[f64]]) -> Vec<EmbeddingVector> {
        points
            .iter()
            .map(|p| EmbeddingVector::new(p.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn two_separated_pairs() {
        let v = vecs(&[&[0.0, 0.0], &[0.0, 1.0], &[10.0, 10.0], &[10.0, 11.0]]);
        for seed in 0..20 {
            let r = kmeans(&v, 2, seed, 100, 1e-9).unwrap();
            let a = &r.assignments;
            assert_eq!(a[0], a[1]);
            assert_eq!(a[2], a[3]);
            assert_ne!(a[0], a[2]);
            assert!((r.sse() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equals_n_gives_zero_sse() {
        let v = vecs(&[&[0.0], &[3.0], &[7.0], &[8.0], &[20.0]]);
        let r = kmeans(&v, 5, 7, 50, 0.0).unwrap();
        let mut seen = r.assignments.clone();
        seen.sort();
        assert_eq!(seen, [0, 1, 2, 3, 4]);
        assert_eq!(r.sse(), 0.0);
    }

    #[test]
    fn single_cluster_centroid_is_mean() {
        let v = vecs(&[&[1.0, 2.0], &[3.0, 6.0], &[5.0, 1.0]]);
        let r = kmeans(&v, 1, 0, 10, 0.0).unwrap();
        assert!(r.assignments.iter().all(|&a| a == 0));
        assert!((r.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((r.centroids[0][1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_points_do_not_stall_seeding() {
        let v = vecs(&[&[1.0], &[1.0], &[1.0]]);
        let r = kmeans(&v, 3, 3, 10, 0.0).unwrap();
        assert_eq!(r.sse(), 0.0);
    }

    #[test]
    fn argument_errors() {
        let v = vecs(&[&[1.0], &[2.0]]);
        assert!(matches!(
            kmeans(&v, 3, 0, 10, 0.0),
            Err(BatchingError::InvalidClusterCount { .. })
        ));
        assert!(matches!(
            kmeans(&v, 0, 0, 10, 0.0),
            Err(BatchingError::InvalidClusterCount { .. })
        ));
        let mixed = vecs(&[&[1.0], &[2.0, 3.0]]);
        assert!(matches!(
            kmeans(&mixed, 1, 0, 10, 0.0),
            Err(BatchingError::DimensionMismatch {
                expected: 1,
                found: 2
            })
        ));
    }
}
