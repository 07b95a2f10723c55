//! Two-sided Wilcoxon rank-sum (Mann-Whitney) test.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RankSumMethod {
    /// Exact when both samples have at most 10 values, normal otherwise.
    #[default]
    Auto,
    /// Exact permutation distribution of the (mid-)rank sum.
    Exact,
    /// Normal approximation with tie and continuity corrections.
    Normal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankSumTest {
    /// Sum of the (mid-)ranks of the first sample.
    pub rank_sum: f64,
    /// Mann-Whitney `U` of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<RankSumTest> {
    wilcoxon_rank_sum_with(a, b, RankSumMethod::Auto)
}

/// Mid-ranks (1-based) of `values`, and the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let mid = (start + 1 + end) as f64 / 2.0;
        for &o in &order[start..end] {
            ranks[o] = mid;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

pub fn wilcoxon_rank_sum_with(a: &[f64], b: &[f64], method: RankSumMethod) -> Result<RankSumTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "rank-sum test needs two non-empty samples".into(),
        ));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument(
            "rank-sum test input contains NaN".into(),
        ));
    }
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum: f64 = ranks[..n1].iter().sum();
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;

    if ties.len() == 1 {
        return Ok(RankSumTest {
            rank_sum,
            u,
            p_value: 1.0,
            exact: false,
        });
    }
    let exact = match method {
        RankSumMethod::Exact => true,
        RankSumMethod::Normal => false,
        RankSumMethod::Auto => n1 <= 10 && n2 <= 10,
    };
    let p_value = if exact {
        exact_p(&ranks, n1)?
    } else {
        let mean = n1 as f64 * (n + 1) as f64 / 2.0;
        let tie_term: f64 =
            ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1)) as f64;
        let var = n1 as f64 * n2 as f64 / 12.0 * ((n + 1) as f64 - tie_term);
        let dev = ((rank_sum - mean).abs() - 0.5).max(0.0);
        let z = dev / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(RankSumTest {
        rank_sum,
        u,
        p_value,
        exact,
    })
}

/// Two-sided exact p-value: the share of size-`n1` subsets of the pooled
/// ranks whose sum lies at least as far from the mean as the observed one.
/// Ranks are doubled so mid-ranks become integers.
fn exact_p(ranks: &[f64], n1: usize) -> Result<f64> {
    let n = ranks.len();
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let cells = (n1 + 1) * (max_sum + 1);
    if cells > 50_000_000 {
        return Err(Error::Capacity(format!(
            "exact rank-sum distribution for n = {n} is too large"
        )));
    }
    // ways[j][s]: number of j-subsets of the ranks seen so far with doubled sum s
    let mut ways = vec![vec![0f64; max_sum + 1]; n1 + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=n1).rev() {
            let (lo, hi) = ways.split_at_mut(j);
            for s in (r..=max_sum).rev() {
                hi[0][s] += lo[j - 1][s - r];
            }
        }
    }
    let observed: usize = doubled[..n1].iter().sum();
    // twice the mean doubled sum, kept in integers
    let mean2 = n1 * (n + 1) * 2;
    let dist = |s: usize| (2 * s).abs_diff(mean2);
    let obs = dist(observed);
    let (mut tail, mut total) = (0.0, 0.0);
    for (s, &w) in ways[n1].iter().enumerate() {
        total += w;
        if dist(s) >= obs {
            tail += w;
        }
    }
    Ok((tail / total).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_three_vs_three() {
        let t = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!(t.exact);
        assert!((t.p_value - 0.1).abs() < 1e-12);
        assert_eq!(t.rank_sum, 6.0);
        assert_eq!(t.u, 0.0);
    }

    #[test]
    fn identical_samples_are_not_significant() {
        let a = [0.3, 0.3, 0.3];
        assert_eq!(wilcoxon_rank_sum(&a, &a).unwrap().p_value, 1.0);
        let b = [0.1, 0.5, 0.9, 0.2];
        assert_eq!(wilcoxon_rank_sum(&b, &b).unwrap().p_value, 1.0);
    }

    #[test]
    fn empty_or_nan_input() {
        assert!(wilcoxon_rank_sum(&[], &[1.0]).is_err());
        assert!(wilcoxon_rank_sum(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn midranks_average_ties() {
        let (r, t) = midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, vec![1, 1, 2]);
    }

    #[test]
    fn normal_and_exact_agree_roughly_for_moderate_samples() {
        let a: Vec<f64> = (0..10).map(|i| i as f64 * 1.3).collect();
        let b: Vec<f64> = (0..10).map(|i| i as f64 * 1.1 + 3.0).collect();
        let e = wilcoxon_rank_sum_with(&a, &b, RankSumMethod::Exact).unwrap();
        let z = wilcoxon_rank_sum_with(&a, &b, RankSumMethod::Normal).unwrap();
        assert!(
            (e.p_value - z.p_value).abs() < 0.02,
            "{} vs {}",
            e.p_value,
            z.p_value
        );
    }
}
