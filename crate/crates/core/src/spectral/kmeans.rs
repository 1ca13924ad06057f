//! Lloyd's k-means with k-means++ seeding, and the adjusted Rand index.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy)]
pub struct KMeansOptions {
    /// Independent seedings; the lowest-inertia run wins.
    pub restarts: usize,
    pub max_iterations: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centers: Array2<f64>,
    pub inertia: f64,
}

fn dist2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++: first centre uniform, each next centre drawn with probability
/// proportional to squared distance from the nearest chosen centre.
pub fn kmeans_plus_plus(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centers = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(points.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist2(points.row(i), centers.row(c)));
        }
    }
    centers
}

fn assign(points: &Array2<f64>, centers: &Array2<f64>, labels: &mut [usize]) -> (bool, f64) {
    let mut changed = false;
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        // Ties keep the current label, then the lowest centre index.
        let start = if *label < centers.nrows() {
            (*label, dist2(points.row(i), centers.row(*label)))
        } else {
            (0, f64::INFINITY)
        };
        let (best, d) = (0..centers.nrows())
            .map(|c| (c, dist2(points.row(i), centers.row(c))))
            .fold(start, |acc, x| if x.1 < acc.1 { x } else { acc });
        if *label != best {
            *label = best;
            changed = true;
        }
        inertia += d;
    }
    (changed, inertia)
}

fn lloyd(points: &Array2<f64>, mut centers: Array2<f64>, max_iterations: usize) -> KMeansResult {
    let (n, dim) = points.dim();
    let k = centers.nrows();
    let mut labels = vec![usize::MAX; n];
    let mut inertia = assign(points, &centers, &mut labels).1;
    for _ in 0..max_iterations {
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums.row_mut(l).scaled_add(1.0, &points.row(i));
            counts[l] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / count as f64));
            } else {
                // Re-seed an empty cluster at the point farthest from its centre.
                let far = (0..n)
                    .map(|i| (i, dist2(points.row(i), centers.row(labels[i]))))
                    .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
                    .0;
                centers.row_mut(c).assign(&points.row(far));
                labels[far] = c;
            }
        }
        let (changed, value) = assign(points, &centers, &mut labels);
        inertia = value;
        if !changed {
            break;
        }
    }
    KMeansResult {
        labels,
        centers,
        inertia,
    }
}

/// Seeded k-means over the rows of `points`; labels are renumbered in order
/// of first appearance so equal partitions give equal labels.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64, options: KMeansOptions) -> KMeansResult {
    assert!(k >= 1 && k <= points.nrows(), "k must lie in 1..=n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..options.restarts.max(1) {
        let centers = kmeans_plus_plus(points, k, &mut rng);
        let run = lloyd(points, centers, options.max_iterations);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    let mut relabel = HashMap::new();
    for l in &mut best.labels {
        let next = relabel.len();
        *l = *relabel.entry(*l).or_insert(next);
    }
    let mut centers = Array2::zeros(best.centers.raw_dim());
    for (&old, &new) in &relabel {
        centers.row_mut(new).assign(&best.centers.row(old));
    }
    best.centers = centers;
    best
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as u64;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n).max(1.0);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        // Both labelings trivial (one cluster, or all singletons).
        return 1.0;
    }
    (index - expected) / (max - expected)
}
