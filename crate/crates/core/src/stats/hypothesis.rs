use serde::{Deserialize, Serialize};

use super::special::{normal_two_sided, student_t_two_sided};
use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    WelchT,
    MannWhitneyU,
    PointBiserial,
}

/// Outcome of a two-sided test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degrees_of_freedom: Option<f64>,
    pub p_value: f64,
    pub method: TestMethod,
    /// Mann-Whitney only: whether the p-value came from exact enumeration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<bool>,
}

/// Largest `n_a * n_b` for which Mann-Whitney p-values are enumerated exactly.
pub const EXACT_U_LIMIT: usize = 400;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|x| *x == xs[0])
}

fn sample_variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Welch's unequal-variance t-test, statistic oriented as mean(a) - mean(b).
/// Two constant groups with the same value give t = 0, p = 1; constant
/// groups with different values are [`StatsError::ZeroVariancePair`].
pub fn welch_t(group_a: &[f64], group_b: &[f64]) -> Result<TestResult, StatsError> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(StatsError::InsufficientData);
    }
    let (na, nb) = (group_a.len() as f64, group_b.len() as f64);
    let (ma, mb) = (mean(group_a), mean(group_b));
    let (va, vb) = (sample_variance(group_a, ma), sample_variance(group_b, mb));
    let (sa, sb) = (va / na, vb / nb);
    if is_constant(group_a) && is_constant(group_b) {
        if group_a[0] == group_b[0] {
            return Ok(TestResult {
                statistic: 0.0,
                degrees_of_freedom: Some(na + nb - 2.0),
                p_value: 1.0,
                method: TestMethod::WelchT,
                exact: None,
            });
        }
        return Err(StatsError::ZeroVariancePair);
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TestResult {
        statistic: t,
        degrees_of_freedom: Some(df),
        p_value: student_t_two_sided(t, df),
        method: TestMethod::WelchT,
        exact: None,
    })
}

/// 1-based midranks of the pooled sample, doubled so they stay integral.
fn doubled_midranks(pooled: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        // ranks start+1..=end share their mean; doubled: start + end + 1
        let doubled = (start + end + 1) as u64;
        for &idx in &order[start..end] {
            ranks[idx] = doubled;
        }
        start = end;
    }
    ranks
}

struct RankSums {
    /// Doubled rank sum of group a.
    doubled_sum_a: u64,
    /// All pooled doubled ranks.
    ranks: Vec<u64>,
    tie_term: f64,
}

fn rank_sums(group_a: &[f64], group_b: &[f64]) -> RankSums {
    let pooled: Vec<f64> = group_a.iter().chain(group_b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let doubled_sum_a = ranks[..group_a.len()].iter().sum();
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    RankSums {
        doubled_sum_a,
        ranks,
        tie_term,
    }
}

fn u_statistic(doubled_sum_a: u64, na: usize) -> f64 {
    doubled_sum_a as f64 / 2.0 - (na * (na + 1)) as f64 / 2.0
}

fn check_groups(group_a: &[f64], group_b: &[f64]) -> Result<(), StatsError> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(StatsError::InsufficientData);
    }
    if group_a.iter().chain(group_b).any(|x| x.is_nan()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Normal approximation with continuity correction and tie-corrected variance.
pub fn mann_whitney_u_normal(group_a: &[f64], group_b: &[f64]) -> Result<TestResult, StatsError> {
    check_groups(group_a, group_b)?;
    let (na, nb) = (group_a.len(), group_b.len());
    let sums = rank_sums(group_a, group_b);
    let u = u_statistic(sums.doubled_sum_a, na);
    let n = (na + nb) as f64;
    let mu = (na * nb) as f64 / 2.0;
    let variance = (na * nb) as f64 / 12.0 * ((n + 1.0) - sums.tie_term / (n * (n - 1.0)));
    let p_value = if variance <= 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / variance.sqrt();
        normal_two_sided(z)
    };
    Ok(TestResult {
        statistic: u,
        degrees_of_freedom: None,
        p_value,
        method: TestMethod::MannWhitneyU,
        exact: Some(false),
    })
}

/// Exact two-sided p-value: the permutation distribution of group a's rank
/// sum, conditional on the observed tie pattern, counted by dynamic
/// programming over subsets of each size.
pub fn mann_whitney_u_exact(group_a: &[f64], group_b: &[f64]) -> Result<TestResult, StatsError> {
    check_groups(group_a, group_b)?;
    if group_a.len() > group_b.len() {
        // enumerate subsets of the smaller group; the two-sided p is symmetric
        let mut swapped = mann_whitney_u_exact(group_b, group_a)?;
        swapped.statistic = (group_a.len() * group_b.len()) as f64 - swapped.statistic;
        return Ok(swapped);
    }
    let na = group_a.len();
    let sums = rank_sums(group_a, group_b);
    let total_sum: u64 = sums.ranks.iter().sum();
    // counts[k][s]: number of k-subsets of the ranks seen so far with doubled sum s
    let mut counts = vec![vec![0u128; total_sum as usize + 1]; na + 1];
    counts[0][0] = 1;
    for &r in &sums.ranks {
        let r = r as usize;
        for k in (1..=na).rev() {
            let (lower, upper) = counts.split_at_mut(k);
            let prev = &lower[k - 1];
            let row = &mut upper[0];
            for s in (r..row.len()).rev() {
                if prev[s - r] != 0 {
                    row[s] += prev[s - r];
                }
            }
        }
    }
    // mean doubled sum is na * (n + 1); compare deviations in doubled units
    let n = sums.ranks.len() as i128;
    let centre = na as i128 * (n + 1);
    let observed = (sums.doubled_sum_a as i128 - centre).abs();
    let mut extreme = 0u128;
    let mut all = 0u128;
    for (s, &c) in counts[na].iter().enumerate() {
        if c == 0 {
            continue;
        }
        all += c;
        if (s as i128 - centre).abs() >= observed {
            extreme += c;
        }
    }
    Ok(TestResult {
        statistic: u_statistic(sums.doubled_sum_a, na),
        degrees_of_freedom: None,
        p_value: (extreme as f64 / all as f64).min(1.0),
        method: TestMethod::MannWhitneyU,
        exact: Some(true),
    })
}

/// U for group a (pairs where a beats b, ties counting one half), with the
/// exact p-value when `n_a * n_b <= 400` and the normal approximation above.
pub fn mann_whitney_u(group_a: &[f64], group_b: &[f64]) -> Result<TestResult, StatsError> {
    if group_a.len() * group_b.len() <= EXACT_U_LIMIT {
        mann_whitney_u_exact(group_a, group_b)
    } else {
        mann_whitney_u_normal(group_a, group_b)
    }
}

/// Pearson correlation of two equal-length samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch);
    }
    if x.len() < 2 {
        return Err(StatsError::InsufficientData);
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if is_constant(x) || is_constant(y) {
        return Err(StatsError::DegenerateInput);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Point-biserial correlation between a 0/1 indicator and values, via the
/// group-mean form `(M1 - M0) / s_n * sqrt(n1 n0 / n^2)`. The p-value uses
/// `t = r sqrt((n-2)/(1-r^2))` on n - 2 degrees of freedom; with n = 2 there
/// is no residual freedom and p is reported as 1.
pub fn point_biserial(binary: &[bool], values: &[f64]) -> Result<TestResult, StatsError> {
    if binary.len() != values.len() {
        return Err(StatsError::LengthMismatch);
    }
    if binary.len() < 2 {
        return Err(StatsError::InsufficientData);
    }
    let n = values.len() as f64;
    let ones: Vec<f64> = values
        .iter()
        .zip(binary)
        .filter(|(_, b)| **b)
        .map(|(v, _)| *v)
        .collect();
    let zeros: Vec<f64> = values
        .iter()
        .zip(binary)
        .filter(|(_, b)| !**b)
        .map(|(v, _)| *v)
        .collect();
    if ones.is_empty() || zeros.is_empty() || is_constant(values) {
        return Err(StatsError::DegenerateInput);
    }
    let m = mean(values);
    let s_n = (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    let (n1, n0) = (ones.len() as f64, zeros.len() as f64);
    let r = ((mean(&ones) - mean(&zeros)) / s_n * (n1 * n0 / (n * n)).sqrt()).clamp(-1.0, 1.0);
    let df = n - 2.0;
    let p_value = if df <= 0.0 {
        1.0
    } else if r.abs() >= 1.0 {
        0.0
    } else {
        student_t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(TestResult {
        statistic: r,
        degrees_of_freedom: Some(df),
        p_value,
        method: TestMethod::PointBiserial,
        exact: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn welch_examples() {
        let same = welch_t(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((same.statistic, same.p_value), (0.0, 1.0));

        let r = welch_t(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.statistic + 2.1909).abs() < 1e-4);
        assert!((r.degrees_of_freedom.unwrap() - 6.0).abs() < 1e-12);
        assert!((r.p_value - 0.0709).abs() < 1e-3);
        assert!((r.p_value - 0.070_987_654_320_987_55).abs() < 1e-12);

        // unequal sizes and variances, scipy ttest_ind(equal_var=False)
        let r = welch_t(&[0.1, 0.5, 0.9, 1.3, 2.2], &[1.0, 1.1, 3.5, 4.0, 4.2, 6.0, 0.3]).unwrap();
        assert!((r.statistic + 2.146_195_587_055_724_6).abs() < 1e-12);
        assert!((r.degrees_of_freedom.unwrap() - 8.206_476_552_194_072).abs() < 1e-9);
        assert!((r.p_value - 0.063_304_305_192_472_65).abs() < 1e-10);

        assert_eq!(
            welch_t(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]),
            Err(StatsError::ZeroVariancePair)
        );
        assert_eq!(welch_t(&[1.0], &[1.0, 2.0]), Err(StatsError::InsufficientData));
        assert_eq!(welch_t(&[0.5, 0.5], &[0.5, 0.5, 0.5]).unwrap().p_value, 1.0);
    }

    #[test]
    fn mwu_examples() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0 / 3.0).abs() < 1e-15);

        let a = [3.0, 1.0, 2.0, 5.0];
        let b = [5.0, 2.0, 3.0, 1.0];
        assert_eq!(mann_whitney_u(&a, &b).unwrap().statistic, 8.0);

        let tied = mann_whitney_u(&[2.0, 2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!((tied.statistic, tied.p_value), (3.0, 1.0));
        let tied = mann_whitney_u_normal(&[2.0, 2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!((tied.statistic, tied.p_value), (3.0, 1.0));

        assert_eq!(mann_whitney_u(&[], &[1.0]), Err(StatsError::InsufficientData));
    }

    #[test]
    fn mwu_normal_matches_scipy() {
        // scipy.stats.mannwhitneyu(method="asymptotic", use_continuity=True)
        let x = [1.0, 2.0, 2.0, 3.0, 5.0, 8.0];
        let y = [2.0, 3.0, 3.0, 4.0, 9.0, 10.0, 11.0];
        let r = mann_whitney_u_normal(&x, &y).unwrap();
        assert_eq!(r.statistic, 11.0);
        assert!((r.p_value - 0.169_967_907_602_275_98).abs() < 1e-12);

        let xs: Vec<f64> = (1..=30).map(f64::from).collect();
        let ys: Vec<f64> = (5..25).map(|v| f64::from(v) + 0.5).collect();
        let r = mann_whitney_u(&xs, &ys).unwrap();
        assert_eq!(r.exact, Some(false));
        assert_eq!(r.statistic, 310.0);
        assert!((r.p_value - 0.850_776_286_139_637_6).abs() < 1e-12);
    }

    /// Brute-force exact p-value by enumerating every assignment of the
    /// pooled values to group a.
    fn brute_exact(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let na = a.len();
        let u_of = |mask: u32| {
            let mut u = 0.0;
            for i in 0..n {
                if mask & (1 << i) == 0 {
                    continue;
                }
                for j in 0..n {
                    if mask & (1 << j) != 0 {
                        continue;
                    }
                    u += if pooled[i] > pooled[j] {
                        1.0
                    } else if pooled[i] == pooled[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            u
        };
        let mu = (na * (n - na)) as f64 / 2.0;
        let observed = (u_of((1 << na) - 1) - mu).abs();
        let (mut hit, mut all) = (0u32, 0u32);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != na {
                continue;
            }
            all += 1;
            if (u_of(mask) - mu).abs() >= observed - 1e-9 {
                hit += 1;
            }
        }
        hit as f64 / all as f64
    }

    #[test]
    fn exact_matches_brute_force_with_ties() {
        let cases: [(&[f64], &[f64]); 4] = [
            (&[1.0, 2.0, 2.0], &[2.0, 3.0, 3.0, 4.0]),
            (&[0.25, 0.25, 0.0], &[0.0, 0.0, 0.21, 0.25, 0.09]),
            (&[5.0], &[1.0, 2.0, 3.0]),
            (&[1.0, 1.0, 1.0, 2.0, 2.0], &[1.0, 2.0, 2.0, 3.0, 3.0, 3.0]),
        ];
        for (a, b) in cases {
            let exact = mann_whitney_u_exact(a, b).unwrap();
            assert!((exact.p_value - brute_exact(a, b)).abs() < 1e-12, "{a:?} {b:?}");
        }
    }

    #[test]
    fn point_biserial_examples() {
        let r = point_biserial(&[false, true], &[1.0, 2.0]).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-15);
        let r = point_biserial(&[false, false, true, true], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r.statistic - 0.8944).abs() < 1e-4);
        assert!((r.p_value - 0.105_572_809_000_084_03).abs() < 1e-12);
        assert_eq!(
            point_biserial(&[false, true, true], &[2.0, 2.0, 2.0]),
            Err(StatsError::DegenerateInput)
        );
        assert_eq!(
            point_biserial(&[true, true], &[1.0, 2.0]),
            Err(StatsError::DegenerateInput)
        );
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 4.0), 2..14)
    }

    proptest! {
        #[test]
        fn point_biserial_is_pearson(
            rows in prop::collection::vec((any::<bool>(), -100.0f64..100.0), 2..60),
        ) {
            let binary: Vec<bool> = rows.iter().map(|r| r.0).collect();
            let values: Vec<f64> = rows.iter().map(|r| r.1).collect();
            if let Ok(r) = point_biserial(&binary, &values) {
                let x: Vec<f64> = binary.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                let direct = pearson(&x, &values).unwrap();
                prop_assert!((r.statistic - direct).abs() <= 1e-12);
            }
        }

        #[test]
        fn swapping_groups(a in sample(), b in sample()) {
            if let (Ok(ab), Ok(ba)) = (welch_t(&a, &b), welch_t(&b, &a)) {
                prop_assert_eq!(ab.statistic, -ba.statistic);
                prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
            }
            let (ab, ba) = (mann_whitney_u(&a, &b).unwrap(), mann_whitney_u(&b, &a).unwrap());
            prop_assert_eq!(ab.statistic, (a.len() * b.len()) as f64 - ba.statistic);
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));

            let values: Vec<f64> = a.iter().chain(&b).copied().collect();
            let labels: Vec<bool> = (0..values.len()).map(|i| i < a.len()).collect();
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            if let (Ok(x), Ok(y)) = (point_biserial(&labels, &values), point_biserial(&flipped, &values)) {
                prop_assert!((x.statistic + y.statistic).abs() < 1e-12);
                prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
            }
        }

        #[test]
        fn identical_groups_give_u_half(a in sample()) {
            let mut b = a.clone();
            b.reverse();
            let r = mann_whitney_u(&a, &b).unwrap();
            prop_assert_eq!(r.statistic, (a.len() * b.len()) as f64 / 2.0);
        }
    }
}
