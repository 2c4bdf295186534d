//! Balanced semantic ids: a quantized-autoencoder first digit, a k-means
//! second digit fitted separately inside every first-digit group, and a
//! seeded random third digit that separates items sharing both.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::kmeans;
use super::quantizer::{FitReport, QuantizedAutoencoder};
use super::{CodeAssignment, TokenizerConfig};
use crate::numerics::{Checkpoint, Tensor};
use crate::{Error, Result};

/// k-means model of one first-digit group.
#[derive(Clone, Debug, PartialEq)]
pub struct Level2Group {
    pub first_digit: u32,
    /// Items the model was fitted on, ascending.
    pub members: Vec<u32>,
    pub centroids: Tensor,
    /// Set when every fitted residual belongs to an item of this group.
    pub fitted_on_own_group: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Level1 {
    pub autoencoder: QuantizedAutoencoder,
    pub report: FitReport,
    pub first_digits: Vec<u32>,
    /// `z − e_r` per item.
    pub residuals: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SidFit {
    pub level1: Level1,
    pub level2: Vec<Level2Group>,
    pub codes: CodeAssignment,
}

fn sub_seed(seed: u64, tag: u64, index: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

pub fn fit_level1(features: &Tensor, cfg: &TokenizerConfig) -> Result<Level1> {
    if features.rows() == 0 {
        return Err(Error::Config("no item features".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 1, 0));
    let (autoencoder, report) = QuantizedAutoencoder::fit(features, cfg, 1, &mut rng)?;
    let z = autoencoder.encode(features)?;
    let a = autoencoder.assign(&z);
    let residuals = autoencoder.residuals(&z, &a, 0);
    Ok(Level1 {
        first_digits: a.digits.iter().map(|d| d[0]).collect(),
        autoencoder,
        report,
        residuals,
    })
}

/// Second digits from an independent k-means per first-digit group, with
/// `min(K, group size)` clusters.
pub fn fit_level2(
    residuals: &Tensor,
    first: &[u32],
    cfg: &TokenizerConfig,
) -> Result<(Vec<u32>, Vec<Level2Group>)> {
    if residuals.rows() != first.len() {
        return Err(Error::Shape {
            op: "fit_level2",
            lhs: residuals.shape().to_vec(),
            rhs: vec![first.len()],
        });
    }
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (item, &f) in first.iter().enumerate() {
        groups.entry(f).or_default().push(item as u32);
    }
    let d = residuals.cols();
    let mut second = vec![0u32; first.len()];
    let mut models = Vec::with_capacity(groups.len());
    for (j, members) in groups {
        let mut data = Vec::with_capacity(members.len() * d);
        for &i in &members {
            data.extend_from_slice(residuals.row(i as usize));
        }
        let points = Tensor::new(vec![members.len(), d], data)?;
        let k = cfg.k.min(members.len());
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 2, u64::from(j)));
        let km = kmeans(&points, k, &cfg.kmeans, &mut rng);
        for (pos, &i) in members.iter().enumerate() {
            second[i as usize] = km.assignment[pos] as u32;
        }
        models.push(Level2Group {
            first_digit: j,
            fitted_on_own_group: members.iter().all(|&i| first[i as usize] == j),
            members,
            centroids: km.centroids,
        });
    }
    Ok((second, models))
}

/// Distinct third digits inside every `(c1, c2)` group from a seeded
/// permutation of `0..group size`.
pub fn assign_level3(first: &[u32], second: &[u32], k: usize, seed: u64) -> Result<Vec<u32>> {
    let mut groups: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (item, (&a, &b)) in first.iter().zip(second).enumerate() {
        groups.entry((a, b)).or_default().push(item);
    }
    let mut third = vec![0u32; first.len()];
    for ((a, b), members) in groups {
        if members.len() > k {
            return Err(Error::GroupOverflow {
                group: vec![a, b],
                size: members.len(),
                capacity: k,
            });
        }
        let mut perm: Vec<u32> = (0..members.len() as u32).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(sub_seed(seed, 3, (u64::from(a) << 32) | u64::from(b)));
        perm.shuffle(&mut rng);
        for (&item, &digit) in members.iter().zip(&perm) {
            third[item] = digit;
        }
    }
    Ok(third)
}

pub fn fit_sid(features: &Tensor, cfg: &TokenizerConfig) -> Result<SidFit> {
    cfg.validate()?;
    if cfg.m != 3 {
        return Err(Error::Config(format!(
            "semantic ids use exactly 3 digits, got m = {}",
            cfg.m
        )));
    }
    let level1 = fit_level1(features, cfg)?;
    let (second, level2) = fit_level2(&level1.residuals, &level1.first_digits, cfg)?;
    let third = assign_level3(&level1.first_digits, &second, cfg.k, cfg.seed)?;
    let codes: Vec<Vec<u32>> = (0..third.len())
        .map(|i| vec![level1.first_digits[i], second[i], third[i]])
        .collect();
    let codes = CodeAssignment::new(vec![cfg.k; 3], &codes)?;
    Ok(SidFit {
        level1,
        level2,
        codes,
    })
}

impl SidFit {
    /// Adds autoencoder weights, codebook, EMA state and per-group centroids.
    pub fn write_state(&self, ckpt: &mut Checkpoint) {
        let ae = &self.level1.autoencoder;
        ckpt.push_params("ae.", &ae.params);
        ckpt.push_f64(
            "codebook.0",
            ae.codebooks[0].shape(),
            ae.codebooks[0].data().to_vec(),
        );
        ckpt.push_f64(
            "ema_count.0",
            &[ae.ema_counts[0].len()],
            ae.ema_counts[0].clone(),
        );
        for g in &self.level2 {
            ckpt.push_f64(
                format!("level2.{}.centroids", g.first_digit),
                g.centroids.shape(),
                g.centroids.data().to_vec(),
            );
            ckpt.push_u64(
                format!("level2.{}.members", g.first_digit),
                &[g.members.len()],
                g.members.iter().map(|&m| u64::from(m)).collect(),
            );
        }
    }
}
