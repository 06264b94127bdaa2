use crate::error::{Error, Result};

/// Otsu's threshold over a 256-bin gray-level histogram.
///
/// A threshold `t` splits levels into `[0, t)` and `[t, 255]`. Only
/// thresholds leaving both classes non-empty qualify; among them the one
/// with the largest between-class variance wins, lowest level on ties. A
/// histogram occupying a single level returns that level.
pub fn otsu_threshold(histogram: &[f64; 256]) -> Result<usize> {
    if histogram.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(Error::invalid("histogram counts must be finite and nonnegative"));
    }
    let total: f64 = histogram.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("empty histogram"));
    }
    let grand: f64 = histogram.iter().enumerate().map(|(i, &c)| i as f64 * c).sum();
    let mut w0 = 0.0;
    let mut s0 = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for t in 1..256 {
        w0 += histogram[t - 1];
        s0 += (t - 1) as f64 * histogram[t - 1];
        let w1 = total - w0;
        if w0 <= 0.0 || w1 <= 0.0 {
            continue;
        }
        let m0 = s0 / w0;
        let m1 = (grand - s0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if best.map_or(true, |(_, b)| between > b) {
            best = Some((t, between));
        }
    }
    Ok(match best {
        Some((t, _)) => t,
        None => histogram.iter().position(|&c| c > 0.0).expect("total > 0"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive oracle: class statistics recomputed from scratch for
    /// every candidate threshold.
    fn brute_force(h: &[f64; 256]) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for t in 0..256 {
            let lo: Vec<(f64, f64)> = (0..t).map(|i| (i as f64, h[i])).collect();
            let hi: Vec<(f64, f64)> = (t..256).map(|i| (i as f64, h[i])).collect();
            let w = |c: &[(f64, f64)]| c.iter().map(|p| p.1).sum::<f64>();
            let (wl, wh) = (w(&lo), w(&hi));
            if wl == 0.0 || wh == 0.0 {
                continue;
            }
            let ml = lo.iter().map(|p| p.0 * p.1).sum::<f64>() / wl;
            let mh = hi.iter().map(|p| p.0 * p.1).sum::<f64>() / wh;
            let n = wl + wh;
            let v = (wl / n) * (wh / n) * (ml - mh).powi(2);
            // relative slack absorbs summation-order differences between the two routes
            if best.map_or(true, |(_, b)| v > b * (1.0 + 1e-12)) {
                best = Some((t, v));
            }
        }
        best.map_or_else(|| h.iter().position(|&c| c > 0.0).unwrap(), |b| b.0)
    }

    #[test]
    fn two_spikes_split_between_them() {
        let mut h = [0.0; 256];
        h[10] = 50.0;
        h[200] = 70.0;
        let t = otsu_threshold(&h).unwrap();
        assert!(t > 10 && t <= 200, "{t}");
        assert_eq!(t, 11);
    }

    #[test]
    fn single_spike_returns_its_level() {
        let mut h = [0.0; 256];
        h[7] = 3.0;
        assert_eq!(otsu_threshold(&h).unwrap(), 7);
    }

    #[test]
    fn empty_histogram_is_an_error() {
        assert!(otsu_threshold(&[0.0; 256]).is_err());
    }

    #[test]
    fn matches_exhaustive_search_on_random_histograms() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..1000 {
            let mut h = [0.0; 256];
            let occupied = rng.random_range(1..40);
            for _ in 0..occupied {
                h[rng.random_range(0..256)] += rng.random_range(1..500) as f64;
            }
            assert_eq!(otsu_threshold(&h).unwrap(), brute_force(&h), "trial {trial}");
        }
    }
}
