use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Largest sample size that gets the exact null distribution.
const EXACT_MAX_N: usize = 25;

/// Sample Pearson correlation with a two-sided p-value from the t
/// distribution with `n - 2` degrees of freedom.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::Statistics(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Statistics(format!("correlation needs at least 3 points, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Statistics("correlation of a constant input".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Statistics(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok((r, p))
}

pub fn bonferroni(p: f64, n_comparisons: usize) -> f64 {
    (p * n_comparisons as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub exact: bool,
    pub p_raw: f64,
    pub p_bonferroni: f64,
}

/// Two-sided Wilcoxon signed-rank test on paired samples `a - b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], n_comparisons: usize) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Statistics(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if n_comparisons == 0 {
        return Err(Error::Statistics("n_comparisons must be at least 1".into()));
    }
    if let Some(v) = a.iter().chain(b).find(|v| !v.is_finite()) {
        return Err(Error::Statistics(format!("non-finite sample value {v}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            w_plus: 0.0,
            n: 0,
            exact: true,
            p_raw: 1.0,
            p_bonferroni: 1.0,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = ranks_with_ties(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let (p_raw, exact) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w_plus), true)
    } else {
        (normal_p(n, &ties, w_plus), false)
    };
    Ok(WilcoxonResult {
        w_plus,
        n,
        exact,
        p_raw,
        p_bonferroni: bonferroni(p_raw, n_comparisons),
    })
}

/// Average ranks plus the size of every tie group.
fn ranks_with_ties(x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// Exact two-sided p from the sign-flip distribution of the rank sum.
/// Ranks are doubled so tied (half-integer) ranks stay integral.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(ranks.len() as i32);
    let w = (w_plus * 2.0).round() as usize;
    let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
    let upper: f64 = counts[w..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

/// Normal approximation with tie-corrected variance and continuity correction.
fn normal_p(n: usize, ties: &[usize], w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * std.sf(z)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two-sided p by visiting all 2^n sign assignments.
    fn enumerate_p(ranks: &[f64], w_plus: f64) -> f64 {
        let n = ranks.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= w_plus + 1e-9 {
                le += 1;
            }
            if w >= w_plus - 1e-9 {
                ge += 1;
            }
        }
        let all = (1u64 << n) as f64;
        (2.0 * (le as f64 / all).min(ge as f64 / all)).min(1.0)
    }

    #[test]
    fn pearson_identity_and_negation() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson_r(&x, &x).unwrap(), (1.0, 0.0));
        assert_eq!(pearson_r(&x, &neg).unwrap().0, -1.0);
        assert!(pearson_r(&x, &[1.0; 10]).is_err());
        assert!(pearson_r(&x, &x[..9]).is_err());
        assert!(pearson_r(&x[..2], &x[..2]).is_err());
    }

    #[test]
    fn equal_samples_give_one() {
        let a = [0.3, 0.5, 0.9];
        let r = wilcoxon_signed_rank(&a, &a, 3).unwrap();
        assert_eq!((r.p_raw, r.p_bonferroni), (1.0, 1.0));
    }

    #[test]
    fn bonferroni_clamps() {
        assert_eq!(bonferroni(0.3, 5), 1.0);
        assert!((bonferroni(0.01, 5) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn exact_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in 1..=12 {
            for _ in 0..5 {
                let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                // Rounded differences create ties.
                let b: Vec<f64> = a.iter().map(|v| v + (rng.random_range(-4i32..5) as f64) * 0.05).collect();
                let r = wilcoxon_signed_rank(&a, &b, 1).unwrap();
                let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
                if d.is_empty() {
                    continue;
                }
                let (ranks, _) = ranks_with_ties(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
                assert!((r.p_raw - enumerate_p(&ranks, r.w_plus)).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let a: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v - 0.05 - 0.01 * i as f64).collect();
        let r = wilcoxon_signed_rank(&a, &b, 1).unwrap();
        assert!(!r.exact);
        assert_eq!(r.w_plus, 820.0);
        assert!(r.p_raw < 1e-6);
    }
}
