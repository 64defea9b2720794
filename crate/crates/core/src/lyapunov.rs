//! Maximal Lyapunov exponent by delay embedding and nearest-neighbour
//! divergence (Rosenstein).
//!
//! The scalar series is the first state component. Within each of
//! `n_windows` non-overlapping windows every embedded point is paired with
//! its nearest neighbour outside the temporal exclusion window, the mean
//! log distance of the pairs is tracked for `tlen` steps, and the slope of
//! that curve against time over steps `1..=tlen` is the window estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Embedding dimension.
    pub m: usize,
    /// Delay in samples.
    pub tau: usize,
    /// Temporal exclusion (Theiler) window in samples.
    pub m_sep: usize,
    /// Divergence tracking length in samples.
    pub tlen: usize,
    pub n_windows: usize,
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.tau == 0 || self.tlen < 2 || self.n_windows == 0 {
            return Err(Error::Invalid(format!("embedding config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Largest exponent, per unit time.
    pub lambda_max: f64,
    /// Inclusive step range of the linear fit.
    pub fit_range: (usize, usize),
    /// Mean coefficient of determination of the window fits.
    pub r2: f64,
    pub per_window: Vec<f64>,
}

/// Delay vectors `[x_i, x_{i+tau}, ..., x_{i+(m-1)tau}]` as rows.
pub fn delay_embed(series: &[f64], m: usize, tau: usize) -> Result<Tensor> {
    let span = (m.max(1) - 1) * tau;
    if series.len() <= span {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            needed: span,
        });
    }
    let rows = series.len() - span;
    let mut data = Vec::with_capacity(rows * m);
    for i in 0..rows {
        for k in 0..m {
            data.push(series[i + k * tau]);
        }
    }
    Tensor::new(vec![rows, m], data)
}

fn dist(points: &Tensor, i: usize, j: usize) -> f64 {
    let m = points.shape()[1];
    let d = points.data();
    let (a, b) = (&d[i * m..(i + 1) * m], &d[j * m..(j + 1) * m]);
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nearest neighbour of each of the first `candidates` rows among the same
/// rows, excluding `|i - j| <= m_sep` and exact duplicates.
pub fn nearest_neighbors(points: &Tensor, candidates: usize, m_sep: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..candidates {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..candidates {
            if i.abs_diff(j) <= m_sep {
                continue;
            }
            let d = dist(points, i, j);
            if d > 0.0 && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, _)) = best {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Mean log separation of each pair at steps `0..=tlen`. Pairs whose
/// separation hits exactly zero at a step are skipped at that step.
pub fn mean_log_divergence(points: &Tensor, pairs: &[(usize, usize)], tlen: usize) -> Vec<f64> {
    let rows = points.shape()[0];
    (0..=tlen)
        .map(|k| {
            let (mut acc, mut n) = (0.0, 0usize);
            for &(i, j) in pairs {
                if i + k >= rows || j + k >= rows {
                    continue;
                }
                let d = dist(points, i + k, j + k);
                if d > 0.0 {
                    acc += d.ln();
                    n += 1;
                }
            }
            if n == 0 {
                f64::NAN
            } else {
                acc / n as f64
            }
        })
        .collect()
}

/// Ordinary least-squares slope and r² of `curve[k]` against `k * dt`
/// over `k in first..=last`.
pub fn fit_slope(curve: &[f64], dt: f64, first: usize, last: usize) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = (first..=last.min(curve.len().saturating_sub(1)))
        .filter(|&k| curve[k].is_finite())
        .map(|k| (k as f64 * dt, curve[k]))
        .collect();
    if pts.len() < 5 {
        return Err(Error::NoNeighbors);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok((slope, r2))
}

/// Estimate for one scalar series.
pub fn rosenstein_series(series: &[f64], dt: f64, cfg: &EmbeddingConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let points = delay_embed(series, cfg.m, cfg.tau)?;
    let rows = points.shape()[0];
    if rows <= cfg.tlen {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            needed: (cfg.m - 1) * cfg.tau + cfg.tlen,
        });
    }
    let candidates = rows - cfg.tlen;
    let pairs = nearest_neighbors(&points, candidates, cfg.m_sep);
    if pairs.is_empty() {
        return Err(Error::NoNeighbors);
    }
    let curve = mean_log_divergence(&points, &pairs, cfg.tlen);
    fit_slope(&curve, dt, 1, cfg.tlen)
}

/// Window-averaged estimate from a `[L, D_s]` trajectory.
pub fn rosenstein_mle(trajectory: &Tensor, dt: f64, cfg: &EmbeddingConfig) -> Result<LyapunovEstimate> {
    cfg.validate()?;
    if trajectory.ndim() != 2 {
        return Err(crate::error::shape_err("rosenstein_mle", trajectory.shape(), &[0, 0]));
    }
    let (len, d) = (trajectory.shape()[0], trajectory.shape()[1]);
    let series: Vec<f64> = (0..len).map(|i| trajectory.data()[i * d]).collect();
    let wlen = len / cfg.n_windows;
    let mut per_window = Vec::with_capacity(cfg.n_windows);
    let mut r2s = Vec::with_capacity(cfg.n_windows);
    for w in 0..cfg.n_windows {
        let (slope, r2) = rosenstein_series(&series[w * wlen..(w + 1) * wlen], dt, cfg)?;
        per_window.push(slope);
        r2s.push(r2);
    }
    let n = per_window.len() as f64;
    Ok(LyapunovEstimate {
        lambda_max: per_window.iter().sum::<f64>() / n,
        fit_range: (1, cfg.tlen),
        r2: r2s.iter().sum::<f64>() / n,
        per_window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lorenz_cfg() -> EmbeddingConfig {
        EmbeddingConfig { m: 3, tau: 2, m_sep: 25, tlen: 75, n_windows: 3 }
    }

    #[test]
    fn embedding_definitions() {
        let e = delay_embed(&[1.0, 2.0, 3.0, 4.0], 2, 1).unwrap();
        assert_eq!(e.shape(), &[3, 2]);
        assert_eq!(e.data(), &[1.0, 2.0, 2.0, 3.0, 3.0, 4.0]);

        let s = [0.5, -1.0, 2.0];
        let e = delay_embed(&s, 1, 3).unwrap();
        assert_eq!(e.data(), &s);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..97).map(|_| rng.gen()).collect();
        assert_eq!(delay_embed(&s, 4, 3).unwrap().shape()[0], 97 - 9);
        assert!(matches!(delay_embed(&s[..9], 4, 3), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn synthetic_exponential_pairs_recover_rate() {
        let rate = 0.9;
        let dt = 0.05;
        let tlen = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // 1-D points: each pair is a fixed reference track and a track
        // separating from it at exactly `rate`.
        let mut data = Vec::new();
        let mut pairs = Vec::new();
        for _ in 0..30 {
            let base = rng.gen_range(-5.0..5.0);
            let d0 = rng.gen_range(1e-4..1e-2);
            let start = data.len();
            data.extend((0..=tlen).map(|_| base));
            data.extend((0..=tlen).map(|k| base + d0 * (rate * k as f64 * dt).exp()));
            pairs.push((start, start + tlen + 1));
        }
        let points = Tensor::new(vec![data.len(), 1], data).unwrap();
        let curve = mean_log_divergence(&points, &pairs, tlen);
        let (slope, r2) = fit_slope(&curve, dt, 1, tlen).unwrap();
        assert!((slope - rate).abs() < 0.05, "slope {slope}");
        assert!(r2 > 0.999);
    }

    #[test]
    fn sine_has_zero_exponent() {
        let dt = 0.05;
        let traj = Tensor::from_fn(&[1000, 1], |i| (i as f64 * dt).sin());
        let est = rosenstein_mle(&traj, dt, &lorenz_cfg()).unwrap();
        assert!(est.lambda_max.abs() < 0.02, "{est:?}");
    }

    #[test]
    fn neighbours_respect_exclusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<f64> = (0..300).map(|_| rng.gen()).collect();
        let pts = delay_embed(&s, 3, 2).unwrap();
        let pairs = nearest_neighbors(&pts, 200, 25);
        assert!(!pairs.is_empty());
        assert!(pairs.iter().all(|&(i, j)| i.abs_diff(j) > 25));
    }

    #[test]
    fn window_average_is_mean_of_windows() {
        let dt = 0.05;
        let traj = Tensor::from_fn(&[900, 1], |i| {
            let t = i as f64 * dt;
            t.sin() + 0.3 * (2.7 * t).cos()
        });
        let cfg = lorenz_cfg();
        let est = rosenstein_mle(&traj, dt, &cfg).unwrap();
        let series: Vec<f64> = traj.data().to_vec();
        for (w, v) in est.per_window.iter().enumerate() {
            let (s, _) = rosenstein_series(&series[w * 300..(w + 1) * 300], dt, &cfg).unwrap();
            assert_eq!(*v, s);
        }
        let mean = est.per_window.iter().sum::<f64>() / 3.0;
        assert_eq!(est.lambda_max, mean);
        assert_eq!(est.fit_range, (1, 75));
    }

    #[test]
    fn estimate_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s: Vec<f64> = (0..600).map(|i| (i as f64 * 0.13).sin() + 0.2 * rng.gen::<f64>()).collect();
        let cfg = EmbeddingConfig { n_windows: 2, ..lorenz_cfg() };
        let a = rosenstein_mle(&Tensor::new(vec![600, 1], s.clone()).unwrap(), 0.05, &cfg).unwrap();
        let scaled: Vec<f64> = s.iter().map(|v| v * 37.5).collect();
        let b = rosenstein_mle(&Tensor::new(vec![600, 1], scaled).unwrap(), 0.05, &cfg).unwrap();
        assert!((a.lambda_max - b.lambda_max).abs() < 1e-9);
    }

    #[test]
    fn no_pairs_is_an_error() {
        let traj = Tensor::from_fn(&[120, 1], |i| i as f64);
        let cfg = EmbeddingConfig { m: 2, tau: 1, m_sep: 200, tlen: 10, n_windows: 1 };
        assert!(matches!(rosenstein_mle(&traj, 0.05, &cfg), Err(Error::NoNeighbors)));
    }
}
