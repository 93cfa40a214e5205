/// Bucket for the offset `key_pos - query_pos`. Small distances get their
/// own bucket; larger ones share logarithmically sized buckets up to
/// `max_distance`. Bidirectional tables spend half the buckets on keys after
/// the query; causal tables map every future offset to bucket 0.
pub fn relative_position_bucket(
    query_pos: usize,
    key_pos: usize,
    n_buckets: usize,
    max_distance: usize,
    bidirectional: bool,
) -> usize {
    let rel = key_pos as i64 - query_pos as i64;
    let mut buckets = n_buckets;
    let mut base = 0;
    let distance = if bidirectional {
        buckets /= 2;
        if rel > 0 {
            base = buckets;
        }
        rel.unsigned_abs() as usize
    } else {
        (-rel).max(0) as usize
    };
    let max_exact = (buckets / 2).max(1);
    if distance < max_exact {
        return base + distance;
    }
    let span = (max_distance as f64 / max_exact as f64).ln();
    let scaled = (distance as f64 / max_exact as f64).ln() / span * (buckets - max_exact) as f64;
    base + (max_exact + scaled as usize).min(buckets - 1)
}

/// Flat bucket ids for a `q_len × k_len` attention map.
pub(crate) fn bucket_matrix(q_len: usize, k_len: usize, n_buckets: usize, max_distance: usize, bidirectional: bool) -> Vec<usize> {
    let mut out = Vec::with_capacity(q_len * k_len);
    for q in 0..q_len {
        for k in 0..k_len {
            out.push(relative_position_bucket(q, k, n_buckets, max_distance, bidirectional));
        }
    }
    out
}
