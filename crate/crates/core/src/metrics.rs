//! Reconstruction metrics and the paired signed-rank test.

use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const SANITIZE_CLIP: f64 = 1e6;
pub const SANITIZE_FILL: f64 = 999.0;
pub const MAPE_WINDOW: usize = 300;
const EXACT_MAX_N: usize = 25;

/// Non-finite values become 999; the rest are clipped to ±1e6.
pub fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v.clamp(-SANITIZE_CLIP, SANITIZE_CLIP)
    } else {
        SANITIZE_FILL
    }
}

/// Root-mean-square error over every element, after sanitising the
/// reconstruction.
pub fn rmse(x_hat: &Tensor, x_true: &Tensor) -> Result<f64> {
    if x_hat.shape() != x_true.shape() {
        return Err(shape_err("rmse", x_hat.shape(), x_true.shape()));
    }
    let n = x_hat.numel().max(1) as f64;
    let sum: f64 = x_hat
        .data()
        .iter()
        .zip(x_true.data())
        .map(|(&a, &b)| (sanitize(a) - b).powi(2))
        .sum();
    Ok((sum / n).sqrt())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-parameter percentage error of the median over the first
/// `min(300, L)` steps of physical parameter rows `[D_p, L]`.
pub fn mape(param_rows: &Tensor, p_true: &[f64]) -> Result<Vec<f64>> {
    let s = param_rows.shape();
    if s.len() != 2 || s[0] != p_true.len() || s[1] == 0 {
        return Err(shape_err("mape", s, &[p_true.len(), 0]));
    }
    let l = s[1];
    let w = l.min(MAPE_WINDOW);
    p_true
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if p == 0.0 {
                return Err(Error::ZeroParameter { index: i });
            }
            let mut window: Vec<f64> = param_rows.data()[i * l..i * l + w].iter().map(|&v| sanitize(v)).collect();
            Ok(100.0 * (median(&mut window) - p).abs() / p.abs())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub exact: bool,
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

/// Two-tailed Wilcoxon signed-rank test on paired samples.
///
/// Exact null distribution for up to 25 non-zero differences (ties handled
/// on doubled ranks), normal approximation with continuity and tie
/// correction above that.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() && !pairs.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    if diffs.len() < 5 {
        return Err(Error::TooFewPairs { needed: 5, got: diffs.len() });
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    if n <= EXACT_MAX_N {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0f64; max + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                counts[s] += counts[s - r];
            }
        }
        let cutoff = (2.0 * statistic).round() as usize;
        let tail: f64 = counts[..=cutoff].iter().sum();
        let p = (2.0 * tail / 2f64.powi(n as i32)).min(1.0);
        return Ok(WilcoxonResult {
            statistic,
            p_value: p,
            n,
            exact: true,
        });
    }

    let mean = total / 2.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let nf = n as f64;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(WilcoxonResult {
        statistic,
        p_value: libm::erfc(z / std::f64::consts::SQRT_2).min(1.0),
        n,
        exact: false,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn rmse_cases() {
        let x = Tensor::from_fn(&[3, 2], |i| i as f64);
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        assert_eq!(rmse(&x.map(|v| v + 1.0), &x).unwrap(), 1.0);
        let mut bad = x.clone();
        bad.data_mut()[4] = f64::NAN;
        let r = rmse(&bad, &x).unwrap();
        assert!((r - ((999.0f64 - 4.0).powi(2) / 6.0).sqrt()).abs() < 1e-12);
        let mut huge = x.clone();
        huge.data_mut()[0] = 1e9;
        assert!((rmse(&huge, &x).unwrap() - (1e12f64 / 6.0).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn mape_cases() {
        let rows = Tensor::from_fn(&[2, 10], |i| if i < 10 { 2.0 } else { 5.5 });
        let m = mape(&rows, &[2.0, 5.0]).unwrap();
        assert_eq!(m[0], 0.0);
        assert!((m[1] - 10.0).abs() < 1e-12);
        assert!(matches!(mape(&rows, &[0.0, 1.0]), Err(Error::ZeroParameter { index: 0 })));
        let long = Tensor::from_fn(&[1, 400], |i| if i < 300 { 1.0 } else { 100.0 });
        assert_eq!(mape(&long, &[1.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn five_positive_differences() {
        let pairs: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64 + 1.0, 0.5)).collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        let same: Vec<(f64, f64)> = (0..8).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(wilcoxon_signed_rank(&same), Err(Error::AllZeroDifferences)));
        let few = [(1.0, 0.0), (2.0, 0.0), (0.0, 3.0)];
        assert!(matches!(wilcoxon_signed_rank(&few), Err(Error::TooFewPairs { .. })));
    }

    /// Two-tailed p by enumerating every sign pattern.
    fn brute_force(diffs: &[f64]) -> f64 {
        let n = diffs.len();
        let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        let ranks = average_ranks(&abs);
        let total: f64 = ranks.iter().sum();
        let w_plus = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).fold(0.0, |acc, (_, r)| acc + r);
        let obs = w_plus.min(total - w_plus);
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w.min(total - w) <= obs + 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn exact_matches_enumeration() {
        let mut r = rng::seeded(5);
        for n in 5..=10 {
            for _ in 0..20 {
                // Integers in a small range so ties occur.
                let pairs: Vec<(f64, f64)> = (0..n)
                    .map(|_| (r.gen_range(-4..=4) as f64, 0.5 * r.gen_range(-1..=1) as f64))
                    .filter(|(a, b)| a != b)
                    .collect();
                if pairs.len() < 5 {
                    continue;
                }
                let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
                let got = wilcoxon_signed_rank(&pairs).unwrap().p_value;
                let want = brute_force(&diffs).min(1.0);
                assert!((got - want).abs() < 1e-12, "n={n}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn null_distribution_rarely_rejects() {
        let mut accept = 0;
        for rep in 0..100 {
            let mut r = rng::substream(77, rep);
            let pairs: Vec<(f64, f64)> = (0..30).map(|_| (rng::normal(&mut r), rng::normal(&mut r))).collect();
            let res = wilcoxon_signed_rank(&pairs).unwrap();
            assert!(!res.exact);
            if res.p_value > 0.05 {
                accept += 1;
            }
        }
        assert!(accept >= 90, "{accept}");
    }

    proptest! {
        #[test]
        fn swapping_pairs_keeps_p(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 5..40)) {
            prop_assume!(v.iter().filter(|(a, b)| a != b).count() >= 5);
            let swapped: Vec<(f64, f64)> = v.iter().map(|&(a, b)| (b, a)).collect();
            let p = wilcoxon_signed_rank(&v).unwrap().p_value;
            let q = wilcoxon_signed_rank(&swapped).unwrap().p_value;
            prop_assert!((p - q).abs() < 1e-12);
        }

        #[test]
        fn rmse_scales_and_permutes(err in prop::collection::vec(-5.0f64..5.0, 1..30), k in 0.1f64..10.0, rot in 0usize..30) {
            let truth = Tensor::zeros(&[err.len()]);
            let a = rmse(&Tensor::from_vec(err.clone()), &truth).unwrap();
            let scaled = rmse(&Tensor::from_vec(err.iter().map(|e| e * k).collect()), &truth).unwrap();
            prop_assert!((scaled - k * a).abs() < 1e-9 * (1.0 + k * a));
            let mut p = err.clone();
            p.rotate_left(rot % err.len());
            prop_assert!((rmse(&Tensor::from_vec(p), &truth).unwrap() - a).abs() < 1e-12);
        }
    }
}
