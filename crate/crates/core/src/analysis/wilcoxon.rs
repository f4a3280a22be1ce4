//! Wilcoxon signed-rank test on paired differences.

use statrs::distribution::{ContinuousCDF, Normal};

/// Largest sample size (after dropping zeros) handled by exact enumeration.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of the ranks of the positive differences (W+).
    pub statistic: f64,
    pub p_value: f64,
    /// Number of nonzero differences.
    pub n: usize,
    pub exact: bool,
    /// Set when every difference is zero; `p_value` is then 1.
    pub degenerate: bool,
}

/// Average ranks (1-based) of `values`, ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided signed-rank test. Zero differences are dropped; tied
/// magnitudes get average ranks. Exact null distribution for `n <= 20`,
/// otherwise a normal approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(paired_diffs: &[f64]) -> WilcoxonResult {
    let nonzero: Vec<f64> = paired_diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            exact: true,
            degenerate: true,
        };
    }
    let mags: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&mags);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    let (p, exact) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w_plus), true)
    } else {
        (normal_p(&mags, &ranks, w_plus), false)
    };
    WilcoxonResult {
        statistic: w_plus,
        p_value: p.min(1.0),
        n,
        exact,
        degenerate: false,
    }
}

/// Enumerates the null distribution of W+ over all sign assignments. Ranks
/// are doubled so half-integer averages stay integral.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w = (2.0 * w_plus).round() as usize;
    let all = (1u64 << ranks.len()) as f64;
    let lower: u64 = counts[..=w].iter().sum();
    let upper: u64 = counts[w..].iter().sum();
    2.0 * (lower.min(upper) as f64) / all
}

fn normal_p(mags: &[f64], ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = mags.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    2.0 * (1.0 - normal.cdf(z))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force over all 2^n sign flips of the observed magnitudes.
    fn brute_force_p(diffs: &[f64]) -> f64 {
        let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
        let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
        let obs: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
        let n = nz.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= obs + 1e-9 {
                le += 1;
            }
            if w >= obs - 1e-9 {
                ge += 1;
            }
        }
        (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn all_zero_is_degenerate() {
        let r = wilcoxon_signed_rank(&[0.0, 0.0, 0.0]);
        assert_eq!(r.p_value, 1.0);
        assert!(r.degenerate);
    }

    #[test]
    fn five_positive() {
        let r = wilcoxon_signed_rank(&[0.5, 1.0, 1.5, 2.0, 2.5]);
        assert_eq!(r.statistic, 15.0);
        assert_eq!(r.p_value, 0.0625);
        assert!(r.exact);
    }

    #[test]
    fn symmetric_pairs() {
        let r = wilcoxon_signed_rank(&[1.0, -1.0, 2.0, -2.0]);
        assert_eq!(r.statistic, 5.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn zeros_dropped() {
        let a = wilcoxon_signed_rank(&[0.0, 0.3, -0.1, 0.0, 0.7, 0.2]);
        let b = wilcoxon_signed_rank(&[0.3, -0.1, 0.7, 0.2]);
        assert_eq!(a, b);
    }

    #[test]
    fn matches_brute_force() {
        let cases: [&[f64]; 5] = [
            &[0.3, -0.1, 0.7, 0.2, -0.4, 0.9, 1.1],
            &[1.0, 1.0, -1.0, 2.0, 2.0, -3.0, 0.5],
            &[-0.2, -0.5, 0.1, -0.9, -0.3, -0.3, 0.6, -1.2, 0.05, -0.7],
            &[2.0, -2.0, 2.0, -2.0, 2.0],
            &[0.01],
        ];
        for c in cases {
            assert!((wilcoxon_signed_rank(c).p_value - brute_force_p(c)).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn exact_and_normal_agree_at_twenty() {
        let mut state = 12345u64;
        for _ in 0..50 {
            let diffs: Vec<f64> = (0..20)
                .map(|_| {
                    state = crate::mix_seed(state, 1);
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.35
                })
                .collect();
            let mags: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
            let ranks = average_ranks(&mags);
            let r = wilcoxon_signed_rank(&diffs);
            let approx = normal_p(&mags, &ranks, r.statistic).min(1.0);
            assert!((r.p_value - approx).abs() < 0.02, "{} vs {approx}", r.p_value);
        }
    }

    #[test]
    fn normal_path_used_above_twenty() {
        let diffs: Vec<f64> = (1..=30).map(|i| i as f64).collect();
        let r = wilcoxon_signed_rank(&diffs);
        assert!(!r.exact);
        assert!(r.p_value < 1e-5);
    }
}
