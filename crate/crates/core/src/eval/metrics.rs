/// 1-based rank of the first entry equal to `truth`.
pub fn first_rank<T: PartialEq>(ranked: &[T], truth: &T) -> Option<usize> {
    ranked.iter().position(|x| x == truth).map(|i| i + 1)
}

pub fn hit_rate_at_k<T: PartialEq>(ranked: &[T], truth: &T, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    match first_rank(ranked, truth) {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

/// Single-relevant-item NDCG: `1 / log2(1 + rank)` inside the cutoff.
pub fn ndcg_at_k<T: PartialEq>(ranked: &[T], truth: &T, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    match first_rank(ranked, truth) {
        Some(r) if r <= k => 1.0 / ((1 + r) as f64).log2(),
        _ => 0.0,
    }
}
