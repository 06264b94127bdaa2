use crate::error::{Error, Result};

/// Quantile edges of the uncensored survival times: edge `k` is the
/// `k·n/n_bins`-th order statistic, giving `n_bins − 1` strictly increasing
/// cut points.
pub fn compute_bin_edges(uncensored_times: &[f64], n_bins: usize) -> Result<Vec<f64>> {
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be positive"));
    }
    if uncensored_times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("non-finite survival time"));
    }
    let mut sorted = uncensored_times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < n_bins {
        return Err(Error::invalid(format!(
            "{} distinct uncensored times cannot form {n_bins} bins",
            distinct.len()
        )));
    }
    let n = sorted.len();
    let edges: Vec<f64> = (1..n_bins).map(|k| sorted[k * n / n_bins]).collect();
    if edges.windows(2).any(|w| w[0] >= w[1]) || edges.first().is_some_and(|&e| e <= sorted[0]) {
        return Err(Error::invalid("tied survival times collapse a quantile bin"));
    }
    Ok(edges)
}

/// Index of the half-open interval `[edge_{k-1}, edge_k)` holding `months`.
pub fn assign_time_bin(months: f64, edges: &[f64]) -> usize {
    edges.partition_point(|&e| e <= months)
}
