//! Goodness-of-fit and rank statistics used by the experiment verdicts.

use crate::error::{Error, Result};

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_pvalue(lambda: f64) -> f64 {
    if lambda.is_nan() {
        return f64::NAN;
    }
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form of the cdf; converges fast for small λ.
        let scale = (2.0 * std::f64::consts::PI).sqrt() / lambda;
        let c = -std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=20 {
            let j = (2 * k - 1) as f64;
            let term = (c * j * j).exp();
            cdf += term;
            if term < 1e-16 {
                break;
            }
        }
        return (1.0 - scale * cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 && k >= 20 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov statistic `D` and asymptotic p-value.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(Error::Usage("KS test needs a nonempty sample".into()));
    }
    if sample.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("KS sample contains NaN".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        let f = cdf(v);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above).max(below);
    }
    Ok((d, kolmogorov_pvalue(n.sqrt() * d)))
}

/// Two-sample Kolmogorov–Smirnov test with effective size `ab/(a+b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Usage("KS test needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Numerical("KS sample contains NaN".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = na * nb / (na + nb);
    Ok((d, kolmogorov_pvalue(en.sqrt() * d)))
}

/// Kendall's rank correlation, tie-corrected (τ_b).
pub fn rank_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!(
            "rank correlation needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Usage(
            "rank correlation needs at least two pairs".into(),
        ));
    }
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_a, mut ties_b) = (0i64, 0i64);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let da = a[i].total_cmp(&a[j]) as i64;
            let db = b[i].total_cmp(&b[j]) as i64;
            match (da, db) {
                (0, 0) => {
                    ties_a += 1;
                    ties_b += 1;
                }
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = (a.len() * (a.len() - 1) / 2) as i64;
    let denom = (((pairs - ties_a) as f64) * ((pairs - ties_b) as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::Numerical(
            "rank correlation is undefined when one sample is constant".into(),
        ));
    }
    Ok((concordant - discordant) as f64 / denom)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample covariance; NaN below two observations.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 || a.len() != b.len() {
        return f64::NAN;
    }
    let (ma, mb) = (mean(a), mean(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (a.len() - 1) as f64
}

/// Median (average of the middle pair for even lengths); NaN when empty.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::innovations::SeedStream;
    use crate::numeric::{normal_cdf, normal_quantile};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn kolmogorov_branches_agree_at_the_switch() {
        let lo = kolmogorov_pvalue(1.18 - 1e-12);
        let hi = kolmogorov_pvalue(1.18);
        assert!((lo - hi).abs() < 1e-10);
        // classical critical values
        assert!((kolmogorov_pvalue(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_pvalue(1.6276) - 0.01).abs() < 1e-4);
        assert!((kolmogorov_pvalue(0.8276) - 0.5).abs() < 1e-3);
        assert_eq!(kolmogorov_pvalue(0.0), 1.0);
        assert!(kolmogorov_pvalue(10.0) < 1e-80);
    }

    #[test]
    fn one_sample_examples() {
        let (d, _) = ks_one_sample(&[0.0], normal_cdf).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        let n = 1000;
        let q: Vec<f64> = (1..=n)
            .map(|i| normal_quantile((i as f64 - 0.5) / n as f64))
            .collect();
        let (d, p) = ks_one_sample(&q, normal_cdf).unwrap();
        assert!(d <= 0.5 / n as f64 + 1e-12, "{d}");
        assert!(p > 0.999);
        assert!(ks_one_sample(&[], normal_cdf).is_err());
    }

    #[test]
    fn one_sample_level() {
        let passes = (0..100)
            .filter(|&run| {
                let mut rng = SeedStream::new(404, run).rng();
                let u: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
                ks_one_sample(&u, |v| v.clamp(0.0, 1.0)).unwrap().1 > 0.01
            })
            .count();
        assert!(passes >= 98, "{passes}");
    }

    #[test]
    fn one_sample_power() {
        let mut rng = SeedStream::new(1, 0).rng();
        let shifted: Vec<f64> = (0..1000)
            .map(|_| rng.sample::<f64, _>(StandardNormal) + 0.3)
            .collect();
        assert!(ks_one_sample(&shifted, normal_cdf).unwrap().1 < 1e-6);
    }

    #[test]
    fn two_sample_examples() {
        let a = [0.3, -1.0, 2.5, 0.0];
        assert_eq!(ks_two_sample(&a, &a).unwrap(), (0.0, 1.0));
        assert_eq!(ks_two_sample(&[0.0], &[1.0]).unwrap().0, 1.0);
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[1.0, 1.0]).unwrap().0, 0.5);
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn kendall_examples() {
        let a = [0.1, 3.0, -2.0, 7.5, 0.4];
        assert_eq!(rank_correlation(&a, &a).unwrap(), 1.0);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(rank_correlation(&a, &neg).unwrap(), -1.0);
        assert!(rank_correlation(&a, &a[..3]).is_err());
        assert!(rank_correlation(&[1.0], &[1.0]).is_err());
        assert!(rank_correlation(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        // one discordant pair of three with a tie in b: τ_b = (1 − 1)/√(3·2)
        let t = rank_correlation(&[1.0, 2.0, 3.0], &[1.0, 3.0, 1.0]).unwrap();
        assert!(t.abs() < 1e-15);
    }

    #[test]
    fn kendall_null_band() {
        let inside = (0..100)
            .filter(|&run| {
                let mut rng = SeedStream::new(77, run).rng();
                let (a, b): (Vec<f64>, Vec<f64>) = (0..1000)
                    .map(|_| {
                        (
                            rng.sample::<f64, _>(StandardNormal),
                            rng.sample::<f64, _>(StandardNormal),
                        )
                    })
                    .unzip();
                rank_correlation(&a, &b).unwrap().abs() < 0.06
            })
            .count();
        assert!(inside >= 95, "{inside}");
    }

    #[test]
    fn summary_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
        assert!(covariance(&[1.0], &[1.0]).is_nan());
        assert_eq!(covariance(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), 2.0);
    }

    proptest! {
        #[test]
        fn ks_statistics_are_in_the_unit_interval(
            a in prop::collection::vec(-5.0f64..5.0, 1..60),
            b in prop::collection::vec(-5.0f64..5.0, 1..60),
        ) {
            let (d1, p1) = ks_one_sample(&a, normal_cdf).unwrap();
            prop_assert!((0.0..=1.0).contains(&d1) && (0.0..=1.0).contains(&p1));
            let (d2, p2) = ks_two_sample(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d2) && (0.0..=1.0).contains(&p2));
            let (d3, _) = ks_two_sample(&b, &a).unwrap();
            prop_assert_eq!(d2, d3);
        }

        #[test]
        fn kendall_is_bounded_and_rank_invariant(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..40),
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(t) = rank_correlation(&a, &b) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&t));
                let a3: Vec<f64> = a.iter().map(|v| v * v * v + 2.0).collect();
                prop_assert_eq!(rank_correlation(&a3, &b).unwrap(), t);
            }
        }
    }
}
