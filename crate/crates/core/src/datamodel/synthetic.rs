//! Planted-structure generator.
//!
//! Behaviors follow a first-order Markov chain `T`. Items are split into
//! `n_clusters` clusters (item `i` sits in cluster `i % C` at rank `i / C`).
//! Each behavior owns an item kernel: given the previous item's cluster `c`,
//! the next cluster is `(c + shift) % C` with probability `focus` and uniform
//! otherwise; inside the chosen cluster an item of rank `r` has weight
//! `((r + rank_offset) % size + 1)^-zipf`.
//!
//! Every cluster kernel is doubly stochastic, so the previous cluster is
//! uniform and independent of the behavior history at every step. This makes
//! the optimal predictors computable in closed form from `T` and the kernels.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::{BehaviorVocab, Event, InteractionDataset, UserSequence};
use crate::numerics::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorKernel {
    pub shift: usize,
    pub focus: f64,
    pub zipf: f64,
    #[serde(default)]
    pub rank_offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub dim: usize,
    /// Standard deviation of cluster centroids.
    pub centroid_scale: f64,
    /// Sub-clusters per cluster (assigned by `rank % n_sub`); 0 disables.
    #[serde(default)]
    pub n_sub: usize,
    #[serde(default)]
    pub sub_scale: f64,
    pub noise: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            centroid_scale: 3.0,
            n_sub: 4,
            sub_scale: 0.8,
            noise: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_items: usize,
    pub behaviors: Vec<String>,
    pub target: String,
    pub n_users: usize,
    /// Sequence lengths are uniform on `[min_len, max_len]`.
    pub min_len: usize,
    pub max_len: usize,
    pub transition: Vec<Vec<f64>>,
    pub n_clusters: usize,
    pub kernels: Vec<BehaviorKernel>,
    #[serde(default)]
    pub features: FeatureSpec,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Four behaviors, 512 items in 16 clusters, sticky behavior chain with
    /// 0.8 on the diagonal and distinct kernel shifts per behavior.
    pub fn planted(n_users: usize, seed: u64) -> Self {
        let b = 4;
        let transition = (0..b)
            .map(|i| {
                (0..b)
                    .map(|j| if i == j { 0.8 } else { 0.2 / 3.0 })
                    .collect()
            })
            .collect();
        let kernels = (0..b)
            .map(|i| BehaviorKernel {
                shift: i * 3 + 1,
                focus: 0.9,
                zipf: 1.6,
                rank_offset: i * 5,
            })
            .collect();
        Self {
            n_items: 512,
            behaviors: ["click", "cart", "fav", "buy"].map(String::from).to_vec(),
            target: "buy".into(),
            n_users,
            min_len: 5,
            max_len: 12,
            transition,
            n_clusters: 16,
            kernels,
            features: FeatureSpec::default(),
            seed,
        }
    }

    /// Skewed behavior marginals: every step is a click with probability
    /// 0.88 and clicks land uniformly on the catalog, while the three rare
    /// behaviors stay in the previous item's cluster and concentrate on a few
    /// items inside it (a different few per behavior).
    pub fn skewed(n_users: usize, seed: u64) -> Self {
        let mut spec = Self::planted(n_users, seed);
        let row = vec![0.88, 0.04, 0.04, 0.04];
        spec.transition = vec![row; 4];
        spec.kernels[0] = BehaviorKernel {
            shift: 0,
            focus: 0.0,
            zipf: 0.0,
            rank_offset: 0,
        };
        for k in &mut spec.kernels[1..] {
            k.shift = 0;
            k.focus = 0.95;
            k.zipf = 2.0;
        }
        spec
    }

    pub fn n_behaviors(&self) -> usize {
        self.behaviors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nb = self.behaviors.len();
        let bad = |m: String| Err(Error::Config(m));
        if nb == 0 {
            return bad("at least one behavior is required".into());
        }
        if !self.behaviors.contains(&self.target) {
            return Err(Error::UnknownBehavior {
                name: self.target.clone(),
                known: self.behaviors.clone(),
            });
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_items {
            return bad(format!(
                "{} clusters over {} items leaves empty clusters",
                self.n_clusters, self.n_items
            ));
        }
        if self.n_users == 0 {
            return bad("n_users must be positive".into());
        }
        if self.min_len < 3 || self.max_len < self.min_len {
            return bad(format!(
                "sequence lengths [{}, {}] must satisfy 3 <= min <= max",
                self.min_len, self.max_len
            ));
        }
        if self.transition.len() != nb || self.transition.iter().any(|r| r.len() != nb) {
            return bad(format!("transition matrix must be {nb}x{nb}"));
        }
        for (i, row) in self.transition.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return bad(format!(
                    "transition row {i} is not a probability vector (sum {s})"
                ));
            }
        }
        if self.kernels.len() != nb {
            return bad(format!(
                "expected {nb} item kernels, found {}",
                self.kernels.len()
            ));
        }
        for (i, k) in self.kernels.iter().enumerate() {
            if !(0.0..=1.0).contains(&k.focus) || !(k.zipf >= 0.0) {
                return bad(format!("kernel {i}: focus must be in [0,1] and zipf >= 0"));
            }
        }
        if self.features.dim == 0 {
            return bad("feature dim must be positive".into());
        }
        Ok(())
    }

    pub fn cluster_of(&self, item: usize) -> usize {
        item % self.n_clusters
    }

    pub fn cluster_members(&self, c: usize) -> Vec<usize> {
        (c..self.n_items).step_by(self.n_clusters).collect()
    }

    /// Within-cluster item weights of behavior `b` for cluster `c`, normalized.
    fn within_cluster(&self, b: usize, c: usize) -> Vec<f64> {
        let k = &self.kernels[b];
        let size = self.cluster_members(c).len();
        let w: Vec<f64> = (0..size)
            .map(|r| (((r + k.rank_offset) % size + 1) as f64).powf(-k.zipf))
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    /// `P(next cluster | previous cluster c, behavior b)`.
    fn cluster_kernel(&self, b: usize, c: usize) -> Vec<f64> {
        let k = &self.kernels[b];
        let cc = self.n_clusters;
        let mut p = vec![(1.0 - k.focus) / cc as f64; cc];
        p[(c + k.shift) % cc] += k.focus;
        p
    }

    /// `P(next item | previous cluster c, behavior b)` over the whole catalog.
    pub fn item_distribution(&self, b: usize, c: usize) -> Vec<f64> {
        let pc = self.cluster_kernel(b, c);
        let mut out = vec![0.0; self.n_items];
        for (cl, &pcl) in pc.iter().enumerate() {
            for (&item, w) in self
                .cluster_members(cl)
                .iter()
                .zip(self.within_cluster(b, cl))
            {
                out[item] = pcl * w;
            }
        }
        out
    }

    pub fn stationary(&self) -> Vec<f64> {
        stationary_distribution(&self.transition)
    }
}

/// Stationary distribution of a row-stochastic matrix, by iterating the lazy
/// chain `(I + T)/2` from the uniform vector (handles periodic chains).
pub fn stationary_distribution(t: &[Vec<f64>]) -> Vec<f64> {
    let n = t.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            next[i] += 0.5 * pi[i];
            for j in 0..n {
                next[j] += 0.5 * pi[i] * t[i][j];
            }
        }
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    let s: f64 = pi.iter().sum();
    pi.iter().map(|p| p / s).collect()
}

fn top_k_mass(p: &[f64], k: usize) -> f64 {
    let mut v = p.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.iter().take(k).sum()
}

/// Closed-form optimal scores of the generator at a single prediction step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesReference {
    pub stationary: Vec<f64>,
    pub next_behavior_accuracy: f64,
    pub cutoffs: Vec<usize>,
    /// Hit rate when the true next behavior is given.
    pub behavior_specific_hit: Vec<f64>,
    /// Hit rate restricted to steps whose next behavior is the target.
    pub target_hit: Vec<f64>,
    /// Hit rate of ranking (behavior, item) pairs jointly.
    pub behavior_item_hit: Vec<f64>,
}

impl BayesReference {
    pub fn compute(spec: &SyntheticSpec, cutoffs: &[usize]) -> Result<Self> {
        spec.validate()?;
        let nb = spec.n_behaviors();
        let cc = spec.n_clusters;
        let pi = spec.stationary();
        let target = spec
            .behaviors
            .iter()
            .position(|n| *n == spec.target)
            .expect("validated");
        let next_behavior_accuracy = (0..nb)
            .map(|b| pi[b] * spec.transition[b].iter().cloned().fold(0.0, f64::max))
            .sum();
        let dists: Vec<Vec<Vec<f64>>> = (0..nb)
            .map(|b| (0..cc).map(|c| spec.item_distribution(b, c)).collect())
            .collect();
        let mut behavior_specific_hit = Vec::new();
        let mut target_hit = Vec::new();
        let mut behavior_item_hit = Vec::new();
        for &k in cutoffs {
            let per_b: Vec<f64> = (0..nb)
                .map(|b| dists[b].iter().map(|d| top_k_mass(d, k)).sum::<f64>() / cc as f64)
                .collect();
            behavior_specific_hit.push((0..nb).map(|b| pi[b] * per_b[b]).sum());
            target_hit.push(per_b[target]);
            let mut joint = 0.0;
            for (prev, &w) in pi.iter().enumerate() {
                for c in 0..cc {
                    let mut scores = Vec::with_capacity(nb * spec.n_items);
                    for (b, dist) in dists.iter().enumerate() {
                        let tb = spec.transition[prev][b];
                        scores.extend(dist[c].iter().map(|p| tb * p));
                    }
                    joint += w * top_k_mass(&scores, k) / cc as f64;
                }
            }
            behavior_item_hit.push(joint);
        }
        Ok(Self {
            stationary: pi,
            next_behavior_accuracy,
            cutoffs: cutoffs.to_vec(),
            behavior_specific_hit,
            target_hit,
            behavior_item_hit,
        })
    }

    pub fn at(&self, values: &[f64], k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| values[i])
    }
}

/// Output of [`generate_synthetic`].
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: InteractionDataset,
    pub features: Tensor,
    pub clusters: Vec<usize>,
    pub bayes: BayesReference,
}

/// Clustered item features: `centroid[c] + sub[c][rank % n_sub] + noise`.
pub fn generate_features(
    n_items: usize,
    n_clusters: usize,
    spec: &FeatureSpec,
    rng: &mut impl Rng,
) -> Result<(Tensor, Vec<usize>)> {
    if n_clusters == 0 || n_clusters > n_items {
        return Err(Error::Config(format!(
            "{n_clusters} clusters over {n_items} items leaves empty clusters"
        )));
    }
    let d = spec.dim;
    let normal = |s: f64| Normal::new(0.0, s.max(0.0)).map_err(|e| Error::Config(e.to_string()));
    let centroid = normal(spec.centroid_scale)?;
    let sub = normal(spec.sub_scale)?;
    let noise = normal(spec.noise)?;
    let centroids: Vec<Vec<f64>> = (0..n_clusters)
        .map(|_| (0..d).map(|_| centroid.sample(rng)).collect())
        .collect();
    let n_sub = spec.n_sub.max(1);
    let subs: Vec<Vec<Vec<f64>>> = (0..n_clusters)
        .map(|_| {
            (0..n_sub)
                .map(|_| {
                    (0..d)
                        .map(|_| if spec.n_sub > 0 { sub.sample(rng) } else { 0.0 })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(n_items * d);
    let mut clusters = Vec::with_capacity(n_items);
    for i in 0..n_items {
        let c = i % n_clusters;
        let s = (i / n_clusters) % n_sub;
        clusters.push(c);
        for j in 0..d {
            data.push(centroids[c][j] + subs[c][s][j] + noise.sample(rng));
        }
    }
    Ok((Tensor::new(vec![n_items, d], data)?, clusters))
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nb = spec.n_behaviors();
    let cc = spec.n_clusters;
    let members: Vec<Vec<usize>> = (0..cc).map(|c| spec.cluster_members(c)).collect();
    let weight_err = |e: rand::distr::weighted::Error| Error::Config(e.to_string());
    let pick_item: Vec<Vec<WeightedIndex<f64>>> = (0..nb)
        .map(|b| {
            (0..cc)
                .map(|c| WeightedIndex::new(spec.within_cluster(b, c)).map_err(weight_err))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let next_behavior: Vec<WeightedIndex<f64>> = spec
        .transition
        .iter()
        .map(|row| WeightedIndex::new(row.iter().copied()).map_err(weight_err))
        .collect::<Result<_>>()?;
    let first_behavior = WeightedIndex::new(spec.stationary()).map_err(weight_err)?;

    let mut users = Vec::with_capacity(spec.n_users);
    for u in 0..spec.n_users {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut events = Vec::with_capacity(len);
        let mut b = first_behavior.sample(&mut rng);
        let mut c = rng.random_range(0..cc);
        for t in 0..len {
            if t > 0 {
                b = next_behavior[b].sample(&mut rng);
                let k = &spec.kernels[b];
                c = if rng.random::<f64>() < k.focus {
                    (c + k.shift) % cc
                } else {
                    rng.random_range(0..cc)
                };
            }
            let item = members[c][pick_item[b][c].sample(&mut rng)];
            events.push(Event {
                item: item as u32,
                behavior: b as u32,
                timestamp: t as i64,
            });
        }
        users.push(UserSequence {
            raw_id: format!("u{u}"),
            events,
        });
    }
    let vocab = BehaviorVocab::with_target_name(spec.behaviors.clone(), &spec.target)?;
    let labels = (0..spec.n_items).map(|i| format!("i{i}")).collect();
    let dataset = InteractionDataset::new(vocab, labels, users)?;
    let mut feature_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let (features, clusters) =
        generate_features(spec.n_items, cc, &spec.features, &mut feature_rng)?;
    let bayes = BayesReference::compute(spec, &[1, 5, 10])?;
    Ok(SyntheticData {
        dataset,
        features,
        clusters,
        bayes,
    })
}
