//! Prefix histograms of code tables.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::CodeAssignment;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    /// Prefix length.
    pub level: usize,
    /// Number of possible prefixes (product of the first `level` cardinalities).
    pub bins: f64,
    pub occupied: usize,
    pub max_count: usize,
    /// Population variance of the counts over all `bins` prefixes, empty ones
    /// included.
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeStats {
    pub levels: Vec<LevelStats>,
    /// Items whose first `depth` digits are shared with at least one other item.
    pub collisions: usize,
    pub depth: usize,
}

/// Histogram variance from the occupied counts only; the empty bins enter
/// through the mean.
pub fn histogram_variance(occupied_counts: &[usize], bins: f64) -> f64 {
    let n: f64 = occupied_counts.iter().map(|&c| c as f64).sum();
    let sq: f64 = occupied_counts.iter().map(|&c| (c as f64).powi(2)).sum();
    let mean = n / bins;
    (sq / bins - mean * mean).max(0.0)
}

/// Smallest achievable variance when `n` items fill `bins` prefixes: every
/// count is `⌊n/bins⌋` or one more.
pub fn minimal_variance(n: usize, bins: f64) -> f64 {
    let q = (n as f64 / bins).floor();
    let extra = n as f64 - q * bins;
    let mean = n as f64 / bins;
    ((bins - extra) * (q - mean).powi(2) + extra * (q + 1.0 - mean).powi(2)) / bins
}

fn prefix_counts(codes: &CodeAssignment, level: usize) -> HashMap<&[u32], usize> {
    let mut counts = HashMap::new();
    for code in codes.iter() {
        *counts.entry(&code[..level]).or_insert(0) += 1;
    }
    counts
}

pub fn collision_count(codes: &CodeAssignment, depth: usize) -> usize {
    prefix_counts(codes, depth)
        .values()
        .filter(|&&c| c > 1)
        .sum()
}

/// Statistics for prefix lengths `1..=levels`; collisions are counted at depth
/// `levels`.
pub fn code_distribution_stats(codes: &CodeAssignment, levels: usize) -> CodeStats {
    let levels = levels.min(codes.m());
    let mut out = Vec::with_capacity(levels);
    for level in 1..=levels {
        let counts: Vec<usize> = prefix_counts(codes, level).into_values().collect();
        let bins: f64 = codes.cardinalities()[..level]
            .iter()
            .map(|&c| c as f64)
            .product();
        out.push(LevelStats {
            level,
            bins,
            occupied: counts.len(),
            max_count: counts.iter().copied().max().unwrap_or(0),
            variance: histogram_variance(&counts, bins),
        });
    }
    CodeStats {
        levels: out,
        collisions: collision_count(codes, levels),
        depth: levels,
    }
}
