//! Slow reference implementations the library results are compared against.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Harrell's C by enumerating every ordered pair.
pub fn brute_cindex(risks: &[f64], times: &[f64], censored: &[bool]) -> Option<f64> {
    let n = risks.len();
    let (mut comparable, mut score) = (0usize, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j || censored[i] || times[i] >= times[j] {
                continue;
            }
            comparable += 1;
            if risks[i] > risks[j] {
                score += 1.0;
            } else if risks[i] == risks[j] {
                score += 0.5;
            }
        }
    }
    (comparable > 0).then(|| score / comparable as f64)
}

/// `(t, S(t))` at every distinct event time, each recomputed from scratch as
/// the product over earlier event times of `1 − deaths / at risk`.
pub fn product_limit(times: &[f64], events: &[bool]) -> Vec<(f64, f64)> {
    let mut event_times: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    event_times
        .iter()
        .map(|&t| {
            let s = event_times
                .iter()
                .filter(|&&u| u <= t)
                .map(|&u| {
                    let at_risk = times.iter().filter(|&&x| x >= u).count() as f64;
                    let deaths = times.iter().zip(events).filter(|(&x, &e)| e && x == u).count() as f64;
                    1.0 - deaths / at_risk
                })
                .product();
            (t, s)
        })
        .collect()
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Cheapest assignment of a square cost matrix and the runner-up's cost.
pub fn best_assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64, f64) {
    let mut scored: Vec<(f64, Vec<usize>)> = permutations(n)
        .into_iter()
        .map(|p| ((0..n).map(|i| cost[i * n + p[i]]).sum(), p))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let second = scored[1].0;
    let (best, perm) = scored.swap_remove(0);
    (perm, best, second)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Random survival cohort with tied times and tied risks mixed in.
pub fn random_cohort(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let risks = (0..n).map(|_| f64::from(rng.random_range(0..8u8))).collect();
    let times = (0..n).map(|_| f64::from(rng.random_range(1..12u8))).collect();
    let censored = (0..n).map(|_| rng.random_bool(0.3)).collect();
    (risks, times, censored)
}

/// Average ranks, ties sharing the mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        order[i..=j].iter().for_each(|&k| r[k] = mean);
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
