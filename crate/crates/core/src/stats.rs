//! Survival losses and evaluation statistics on plain `f64` data.
//!
//! Hazards are discrete-time: `h[n]` is the probability of the event in bin
//! `n` given survival to it, and `S[n] = Π_{k≤n} (1 − h[k])`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, LOG_FLOOR};

/// Per-bin hazards with their cumulative survival.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazardCurve {
    pub hazards: Vec<f64>,
    pub survival: Vec<f64>,
}

impl HazardCurve {
    pub fn from_hazards(hazards: Vec<f64>) -> Result<Self> {
        let survival = cumulative_survival(&hazards)?;
        Ok(HazardCurve { hazards, survival })
    }

    pub fn n_bins(&self) -> usize {
        self.hazards.len()
    }
}

/// Running product of `1 − h`.
pub fn cumulative_survival(hazards: &[f64]) -> Result<Vec<f64>> {
    if let Some(h) = hazards.iter().find(|h| !(0.0..=1.0).contains(*h)) {
        return Err(Error::invalid(format!("hazard {h} outside [0, 1]")));
    }
    let mut s = 1.0;
    Ok(hazards
        .iter()
        .map(|h| {
            s *= 1.0 - h;
            s
        })
        .collect())
}

fn clamped_ln(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// Discrete-time negative log-likelihood of one patient.
///
/// Censored patients (`censored = true`) pay `−log S(y)`; uncensored ones pay
/// `−log S(y−1) − log h(y)` with `S(−1) = 1`.
pub fn nll_survival_loss(curve: &HazardCurve, censored: bool, bin: usize) -> Result<f64> {
    if bin >= curve.n_bins() {
        return Err(Error::invalid(format!("time bin {bin} outside 0..{}", curve.n_bins())));
    }
    if censored {
        return Ok(-clamped_ln(curve.survival[bin]));
    }
    let before = if bin == 0 { 1.0 } else { curve.survival[bin - 1] };
    Ok(-clamped_ln(before) - clamped_ln(curve.hazards[bin]))
}

/// `log Σ exp(z) − z[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(format!("class {label} outside 0..{}", logits.len())));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

/// Everything the joint loss needs for one patient.
#[derive(Clone, Debug)]
pub struct LossCase<'a> {
    pub curve: &'a HazardCurve,
    pub cancer_logits: &'a [f64],
    pub cancer_label: usize,
    pub censored: bool,
    pub bin: usize,
}

/// Batch mean of cross-entropy plus survival NLL.
pub fn total_loss(cases: &[LossCase<'_>]) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut sum = 0.0;
    for c in cases {
        sum += cross_entropy(c.cancer_logits, c.cancer_label)? + nll_survival_loss(c.curve, c.censored, c.bin)?;
    }
    Ok(sum / cases.len() as f64)
}

/// Scalar risk, higher is worse: minus the summed survival curve.
pub fn risk_score(curve: &HazardCurve) -> f64 {
    -curve.survival.iter().sum::<f64>()
}

/// Harrell's concordance index.
///
/// A pair is comparable when the earlier time is an observed event; it is
/// concordant when that patient has the higher risk, and tied risks earn half.
pub fn concordance_index(risks: &[f64], times: &[f64], censored: &[bool]) -> Result<f64> {
    let n = risks.len();
    if times.len() != n || censored.len() != n {
        return Err(Error::Shape {
            op: "concordance_index",
            lhs: vec![n],
            rhs: vec![times.len(), censored.len()],
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut comparable = 0u64;
    let mut score = 0.0;
    let mut start = 0;
    while start < n {
        // group of tied times; pairs inside it are not comparable
        let mut end = start + 1;
        while end < n && times[order[end]] == times[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            if censored[i] {
                continue;
            }
            for &j in &order[end..] {
                comparable += 1;
                if risks[i] > risks[j] {
                    score += 1.0;
                } else if risks[i] == risks[j] {
                    score += 0.5;
                }
            }
        }
        start = end;
    }
    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(score / comparable as f64)
}

/// Product-limit survival estimate. Survival is 1 before `times[0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// Survival just after each event time.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

/// Kaplan–Meier estimator. `events[i]` is true when patient `i` died.
pub fn km_curve(times: &[f64], events: &[bool]) -> Result<KmCurve> {
    if times.is_empty() || times.len() != events.len() {
        return Err(Error::invalid("km_curve needs matching nonempty times and events"));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut curve = KmCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut s = 1.0;
    let mut at_risk = times.len();
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut end = k;
        let mut d = 0;
        while end < order.len() && times[order[end]] == t {
            d += usize::from(events[order[end]]);
            end += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
        at_risk -= end - k;
        k = end;
    }
    Ok(curve)
}

/// Two-group logrank test outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogrankResult {
    pub statistic: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
    pub variance: f64,
}

/// A survival observation: time and whether the event was observed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub time: f64,
    pub event: bool,
}

/// Logrank test of group A against group B, one degree of freedom.
pub fn logrank_test(a: &[Observation], b: &[Observation]) -> Result<LogrankResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("logrank needs two nonempty groups"));
    }
    let mut event_times: Vec<f64> = a.iter().chain(b).filter(|o| o.event).map(|o| o.time).collect();
    if event_times.is_empty() {
        return Err(Error::invalid("logrank needs at least one event"));
    }
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let count = |g: &[Observation], t: f64| {
        let at_risk = g.iter().filter(|o| o.time >= t).count() as f64;
        let died = g.iter().filter(|o| o.event && o.time == t).count() as f64;
        (at_risk, died)
    };
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    for &t in &event_times {
        let (na, da) = count(a, t);
        let (nb, db) = count(b, t);
        let n = na + nb;
        let d = da + db;
        observed += da;
        expected += d * na / n;
        if n > 1.0 {
            variance += d * (na / n) * (nb / n) * (n - d) / (n - 1.0);
        }
    }
    let statistic = if variance > 0.0 {
        (observed - expected).powi(2) / variance
    } else {
        0.0
    };
    Ok(LogrankResult {
        statistic,
        p_value: chi2_sf(statistic, 1.0),
        observed_a: observed,
        expected_a: expected,
        variance,
    })
}

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series for P(a, x)
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * log_prefix.exp()
    } else {
        // modified Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        log_prefix.exp() * h
    }
}

/// Chi-square survival function with `k` degrees of freedom.
pub fn chi2_sf(x: f64, k: f64) -> f64 {
    gamma_q(k / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Splits patients at the median risk: the lower `⌈n/2⌉` of a stable
/// ascending sort form the low-risk group.
pub fn median_risk_split(risks: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
    if risks.len() < 2 {
        return Err(Error::invalid("median split needs at least two patients"));
    }
    let mut order: Vec<usize> = (0..risks.len()).collect();
    order.sort_by(|&a, &b| risks[a].total_cmp(&risks[b]));
    let high = order.split_off(risks.len().div_ceil(2));
    Ok((order, high))
}

/// Metrics of one validation fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_validation: usize,
    pub per_cancer_cindex: BTreeMap<String, Option<f64>>,
    pub overall_mean_cindex: Option<f64>,
    pub logrank_p: BTreeMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Cross-validated metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_cancer_cindex: BTreeMap<String, Option<f64>>,
    pub overall_mean_cindex: Option<f64>,
    pub logrank_p: BTreeMap<String, Option<f64>>,
    pub fold_details: Vec<FoldMetrics>,
}

/// Unweighted mean of the defined values, `None` if there are none.
pub fn mean_defined<'a>(values: impl IntoIterator<Item = &'a Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// CSV of both KM curves on the union of their event times, starting at 0.
pub fn km_csv(low: &KmCurve, high: &KmCurve) -> String {
    let mut grid: Vec<f64> = low.times.iter().chain(&high.times).copied().collect();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut out = String::from("time,survival_low,survival_high\n");
    for t in grid {
        let _ = writeln!(out, "{t},{},{}", low.survival_at(t), high.survival_at(t));
    }
    out
}

/// Step plot of the two KM curves with the logrank p-value in the title.
pub fn km_svg(low: &KmCurve, high: &KmCurve, p_value: f64) -> String {
    let (w, h, m) = (480.0, 320.0, 40.0);
    let t_max = low.times.iter().chain(&high.times).copied().fold(1.0, f64::max);
    let x = |t: f64| m + (w - 2.0 * m) * t / t_max;
    let y = |s: f64| h - m - (h - 2.0 * m) * s;
    let path = |c: &KmCurve| {
        let mut pts = vec![format!("{:.2},{:.2}", x(0.0), y(1.0))];
        let mut s = 1.0;
        for (&t, &v) in c.times.iter().zip(&c.survival) {
            pts.push(format!("{:.2},{:.2}", x(t), y(s)));
            pts.push(format!("{:.2},{:.2}", x(t), y(v)));
            s = v;
        }
        pts.push(format!("{:.2},{:.2}", x(t_max), y(s)));
        pts.join(" ")
    };
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{b}" stroke="black"/>"#,
        b = h - m,
        r = w - m
    );
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="steelblue" points="{}"/>"#, path(low));
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="firebrick" points="{}"/>"#, path(high));
    let _ = writeln!(svg, r#"<text x="{m}" y="24" font-size="14">low risk (blue) vs high risk (red), logrank p = {p_value:.4e}</text>"#);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(h: &[f64]) -> HazardCurve {
        HazardCurve::from_hazards(h.to_vec()).unwrap()
    }

    #[test]
    fn cumulative_survival_examples() {
        assert_eq!(cumulative_survival(&[0.0, 0.0, 0.0]).unwrap(), vec![1.0; 3]);
        assert_eq!(cumulative_survival(&[1.0, 0.3, 0.6]).unwrap(), vec![0.0; 3]);
        let s = cumulative_survival(&[0.1, 0.2]).unwrap();
        assert!((s[0] - 0.9).abs() < 1e-15 && (s[1] - 0.72).abs() < 1e-15);
        assert!(cumulative_survival(&[0.5, 1.5]).is_err());
        assert!(cumulative_survival(&[f64::NAN]).is_err());
    }

    #[test]
    fn nll_examples() {
        assert_eq!(nll_survival_loss(&curve(&[0.0, 0.0]), true, 1).unwrap(), 0.0);
        assert_eq!(nll_survival_loss(&curve(&[1.0, 0.4]), false, 0).unwrap(), 0.0);
        let v = nll_survival_loss(&curve(&[0.1, 0.2]), false, 1).unwrap();
        assert!((v - (-(0.9f64.ln()) - 0.2f64.ln())).abs() < 1e-12);
        assert!((v - 1.7148).abs() < 1e-4);
        assert!(nll_survival_loss(&curve(&[0.1, 0.2]), false, 2).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let c = curve(&[0.0, 0.0]);
        let logits = [0.0; 5];
        let case = LossCase {
            curve: &c,
            cancer_logits: &logits,
            cancer_label: 3,
            censored: true,
            bin: 1,
        };
        assert!((total_loss(&[case.clone()]).unwrap() - 5f64.ln()).abs() < 1e-15);
        let sharp = [0.0, 0.0, 0.0, 800.0, 0.0];
        let perfect = LossCase {
            cancer_logits: &sharp,
            ..case
        };
        assert_eq!(total_loss(&[perfect]).unwrap(), 0.0);
        assert!(total_loss(&[]).is_err());
    }

    #[test]
    fn risk_extremes() {
        assert_eq!(risk_score(&curve(&[0.0; 4])), -4.0);
        assert_eq!(risk_score(&curve(&[1.0, 0.2, 0.3, 0.1])), 0.0);
    }

    #[test]
    fn cindex_examples() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let c = [false; 4];
        assert_eq!(concordance_index(&[4.0, 3.0, 2.0, 1.0], &t, &c).unwrap(), 1.0);
        assert_eq!(concordance_index(&[1.0, 2.0, 3.0, 4.0], &t, &c).unwrap(), 0.0);
        assert_eq!(concordance_index(&[7.0; 4], &t, &c).unwrap(), 0.5);
        assert!(matches!(
            concordance_index(&[1.0, 2.0], &t[..2], &[true, true]),
            Err(Error::NoComparablePairs)
        ));
    }

    #[test]
    fn km_examples() {
        let flat = km_curve(&[1.0, 2.0], &[false, false]).unwrap();
        assert!(flat.times.is_empty());
        assert_eq!(flat.survival_at(10.0), 1.0);
        let one = km_curve(&[5.0, 6.0, 7.0, 8.0], &[true, false, false, false]).unwrap();
        assert_eq!(one.times, vec![5.0]);
        assert_eq!(one.survival, vec![0.75]);
        let all = km_curve(&[1.0, 2.0, 3.0, 4.0], &[true; 4]).unwrap();
        assert_eq!(all.survival, vec![0.75, 0.5, 0.25, 0.0]);
        assert_eq!(all.survival_at(0.5), 1.0);
        assert_eq!(all.survival_at(2.5), 0.5);
    }

    fn obs(v: &[(f64, bool)]) -> Vec<Observation> {
        v.iter().map(|&(time, event)| Observation { time, event }).collect()
    }

    #[test]
    fn logrank_identical_groups() {
        let g = obs(&[(1.0, true), (3.0, false), (4.0, true)]);
        let r = logrank_test(&g, &g).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-10);
        assert!(logrank_test(&obs(&[(1.0, false)]), &obs(&[(2.0, false)])).is_err());
    }

    #[test]
    fn logrank_six_patients_by_hand() {
        // A: deaths at 2 and 4, censored at 6. B: deaths at 1 and 3, censored at 5.
        //  t  nA nB n  dA dB  E_A      V
        //  1  3  3  6  0  1   1/2      1·(1/2)(1/2)(5/5)      = 1/4
        //  2  3  2  5  1  0   3/5      1·(3/5)(2/5)(4/4)      = 6/25
        //  3  2  2  4  0  1   1/2      1/4
        //  4  2  1  3  1  0   2/3      1·(2/3)(1/3)           = 2/9
        // O_A = 2, E_A = 34/15, V = 1/4 + 6/25 + 1/4 + 2/9
        let a = obs(&[(2.0, true), (4.0, true), (6.0, false)]);
        let b = obs(&[(1.0, true), (3.0, true), (5.0, false)]);
        let r = logrank_test(&a, &b).unwrap();
        let e = 0.5 + 0.6 + 0.5 + 2.0 / 3.0;
        let v = 0.25 + 6.0 / 25.0 + 0.25 + 2.0 / 9.0;
        assert_eq!(r.observed_a, 2.0);
        assert!((r.expected_a - e).abs() < 1e-12);
        assert!((r.variance - v).abs() < 1e-12);
        assert!((r.statistic - (2.0 - e) * (2.0 - e) / v).abs() < 1e-12);
    }

    #[test]
    fn chi2_against_statrs() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for k in [1.0, 2.0, 3.0, 7.5] {
            let d = ChiSquared::new(k).unwrap();
            for x in [1e-6, 0.01, 0.3, 1.0, 2.5, 3.84, 10.0, 30.0, 80.0] {
                let ours = chi2_sf(x, k);
                let theirs = d.sf(x);
                assert!((ours - theirs).abs() < 1e-10, "k={k} x={x}: {ours} vs {theirs}");
            }
        }
        assert!((chi2_sf(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn median_split_examples() {
        let (lo, hi) = median_risk_split(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((lo, hi), (vec![1, 3], vec![2, 0]));
        let (lo, hi) = median_risk_split(&[1.0; 5]).unwrap();
        assert_eq!((lo.len(), hi.len()), (3, 2));
        let r: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let (lo, hi) = median_risk_split(&r).unwrap();
        assert_eq!((lo.len(), hi.len()), (51, 50));
        assert!(median_risk_split(&[1.0]).is_err());
    }

    #[test]
    fn km_outputs_render() {
        let a = km_curve(&[1.0, 2.0], &[true, true]).unwrap();
        let b = km_curve(&[3.0, 4.0], &[true, false]).unwrap();
        let csv = km_csv(&a, &b);
        assert!(csv.starts_with("time,survival_low,survival_high\n0,1,1\n"));
        assert_eq!(csv.lines().count(), 5);
        let svg = km_svg(&a, &b, 0.01);
        assert!(svg.contains("<polyline") && svg.trim_end().ends_with("</svg>"));
    }

    proptest! {
        #[test]
        fn censored_loss_ignores_later_bins(
            h in prop::collection::vec(0.0f64..1.0, 2..8),
            noise in prop::collection::vec(0.0f64..1.0, 8),
            y in 0usize..8,
        ) {
            let y = y % h.len();
            let base = nll_survival_loss(&curve(&h), true, y).unwrap();
            let mut h2 = h.clone();
            for k in y + 1..h2.len() {
                h2[k] = noise[k];
            }
            prop_assert_eq!(base, nll_survival_loss(&curve(&h2), true, y).unwrap());
            prop_assert!(base >= 0.0);
            prop_assert!(nll_survival_loss(&curve(&h), false, y).unwrap() >= 0.0);
        }

        #[test]
        fn survival_is_monotone_and_bounded(h in prop::collection::vec(0.0f64..=1.0, 1..10)) {
            let s = cumulative_survival(&h).unwrap();
            prop_assert_eq!(s[0], 1.0 - h[0]);
            for w in s.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn larger_hazards_mean_larger_risk(
            h in prop::collection::vec(0.0f64..0.9, 1..8),
            bump in prop::collection::vec(0.0f64..0.1, 8),
        ) {
            let h2: Vec<f64> = h.iter().zip(&bump).map(|(a, b)| a + b).collect();
            prop_assert!(risk_score(&curve(&h2)) >= risk_score(&curve(&h)));
        }

        #[test]
        fn cindex_flips_and_is_rank_invariant(
            data in prop::collection::vec((0u32..1_000_000, 1u32..50, any::<bool>()), 2..30),
        ) {
            let risks: Vec<f64> = data.iter().enumerate().map(|(i, d)| d.0 as f64 + i as f64 * 1e-3).collect();
            let times: Vec<f64> = data.iter().map(|d| d.1 as f64).collect();
            let mut cens: Vec<bool> = data.iter().map(|d| d.2).collect();
            cens[0] = false;
            if let Ok(c) = concordance_index(&risks, &times, &cens) {
                let neg: Vec<f64> = risks.iter().map(|r| -r).collect();
                let flipped = concordance_index(&neg, &times, &cens).unwrap();
                prop_assert!((c + flipped - 1.0).abs() < 1e-12);
                let warped: Vec<f64> = risks.iter().map(|r| (r / 1e5).exp() + r.powi(3)).collect();
                prop_assert_eq!(c, concordance_index(&warped, &times, &cens).unwrap());
            }
        }
    }
}
