//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iters: usize,
    /// Stop once `Σ‖Δc‖² / Σ‖c‖²` falls below this.
    pub tol: f64,
    /// Independent k-means++ starts; the run with the lowest inertia wins.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_restarts() -> usize {
    8
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            restarts: default_restarts(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Tensor,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    /// Number of empty clusters re-seeded from the farthest point.
    pub reseeds: usize,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the closest row of `centroids`; ties go to
/// the lowest index.
pub fn nearest(centroids: &Tensor, p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..centroids.rows() {
        let d = sq_dist(centroids.row(j), p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &Tensor, k: usize, rng: &mut impl Rng) -> Tensor {
    let n = points.rows();
    let d = points.cols();
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(points.row(first));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(first)))
        .collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(points.row(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    Tensor::new(vec![k, d], centroids).expect("k×d centroids")
}

/// Clusters the rows of `points` into `k` groups, keeping the best of
/// `cfg.restarts` runs (ties go to the earliest).
pub fn kmeans(points: &Tensor, k: usize, cfg: &KMeansConfig, rng: &mut impl Rng) -> KMeans {
    assert!(
        points.rows() >= 1 && k >= 1,
        "k-means needs at least one point and one cluster"
    );
    let mut best = lloyd(points, k, cfg, rng);
    for _ in 1..cfg.restarts {
        let run = lloyd(points, k, cfg, rng);
        if run.inertia < best.inertia {
            best = run;
        }
    }
    best
}

fn lloyd(points: &Tensor, k: usize, cfg: &KMeansConfig, rng: &mut impl Rng) -> KMeans {
    let n = points.rows();
    let d = points.cols();
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    let mut reseeds = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (j, dd) = nearest(&centroids, points.row(i));
            changed |= assignment[i] != j;
            assignment[i] = j;
            dist[i] = dd;
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let j = assignment[i];
            counts[j] += 1;
            for (s, x) in sums[j * d..(j + 1) * d].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            // Farthest point among clusters that can spare one.
            let donor = (0..n)
                .filter(|&i| counts[assignment[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            let Some(i) = donor else { continue };
            let old = assignment[i];
            counts[old] -= 1;
            for (s, x) in sums[old * d..(old + 1) * d].iter_mut().zip(points.row(i)) {
                *s -= x;
            }
            assignment[i] = j;
            counts[j] = 1;
            sums[j * d..(j + 1) * d].copy_from_slice(points.row(i));
            dist[i] = 0.0;
            reseeds += 1;
        }
        let mut shift = 0.0;
        let mut norm = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let row = centroids.row_mut(j);
            for (c, s) in row.iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                let new = s / counts[j] as f64;
                shift += (new - *c) * (new - *c);
                norm += *c * *c;
                *c = new;
            }
        }
        if shift <= cfg.tol * norm.max(f64::MIN_POSITIVE) {
            for i in 0..n {
                assignment[i] = nearest(&centroids, points.row(i)).0;
            }
            break;
        }
    }
    let inertia = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(assignment[i])))
        .sum();
    KMeans {
        centroids,
        assignment,
        iterations,
        reseeds,
        inertia,
    }
}
