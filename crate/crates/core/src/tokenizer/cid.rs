//! Balanced chunked ids: each item gets a seeded random integer written in
//! base `k`.
//!
//! The random integers are not a uniform subset of `0..k^m`. Item `v` first
//! receives a random rank `π(v)` in `0..|V|`; the integer is `π(v)` with its
//! base-`k` digits reversed. The level-`l` prefix of the reversed number is
//! the reversed low `l` digits of the rank, i.e. a bijection of
//! `π(v) mod k^l`, so at every level the prefix counts differ by at most one.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CodeAssignment;
use crate::{Error, Result};

/// `m` base-`k` digits of `i`, most significant first.
pub fn to_base_digits(mut i: u64, k: u64, m: usize) -> Vec<u32> {
    let mut out = vec![0u32; m];
    for slot in out.iter_mut().rev() {
        *slot = (i % k) as u32;
        i /= k;
    }
    out
}

pub fn from_base_digits(digits: &[u32], k: u64) -> u64 {
    digits.iter().fold(0, |acc, &d| acc * k + u64::from(d))
}

fn capacity(k: usize, m: usize) -> Option<u64> {
    (k as u64).checked_pow(m as u32)
}

/// The random integer assigned to each item (before digit expansion).
pub fn cid_integers(n_items: usize, k: usize, m: usize, seed: u64) -> Result<Vec<u64>> {
    if k < 2 || m == 0 {
        return Err(Error::Config(format!(
            "chunked ids need k >= 2 and m >= 1 (k {k}, m {m})"
        )));
    }
    match capacity(k, m) {
        Some(c) if c >= n_items as u64 => {}
        _ => {
            return Err(Error::Capacity(format!(
                "{k}^{m} codes cannot hold {n_items} items"
            )))
        }
    }
    let mut rank: Vec<u64> = (0..n_items as u64).collect();
    rank.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(rank
        .into_iter()
        .map(|r| {
            let mut d = to_base_digits(r, k as u64, m);
            d.reverse();
            from_base_digits(&d, k as u64)
        })
        .collect())
}

pub fn build_cid(n_items: usize, k: usize, m: usize, seed: u64) -> Result<CodeAssignment> {
    let ints = cid_integers(n_items, k, m, seed)?;
    let codes: Vec<Vec<u32>> = ints
        .iter()
        .map(|&i| to_base_digits(i, k as u64, m))
        .collect();
    CodeAssignment::new(vec![k; m], &codes)
}
