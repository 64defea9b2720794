//! Stochastic ensemble Kalman filter used as the oracle baseline.
//!
//! Members are propagated with clipped classical RK4 between observation
//! times and updated with perturbed observations at every observed step.
//! Parameters are held at their true values unless the augmented mode is
//! enabled, in which case they ride along as persistent state columns.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::Scenario;
use crate::error::{shape_err, Error, Result};
use crate::rng;
use crate::systems::{ParamVector, SystemKind, SystemSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EnkfConfig {
    pub n_members: usize,
    pub sigma_init: f64,
    /// Parameter spread as a fraction of the ID range (augmented mode only).
    pub param_noise_frac: f64,
    pub inflation: f64,
    pub reg_eps: f64,
    pub prop_dt: f64,
    pub deriv_clip: f64,
    pub state_clip: Option<f64>,
    /// Estimate parameters as extra state columns instead of using truth.
    pub augment_params: bool,
}

impl Default for EnkfConfig {
    fn default() -> Self {
        Self {
            n_members: 50,
            sigma_init: 2.0,
            param_noise_frac: 0.30,
            inflation: 1.02,
            reg_eps: 1e-4,
            prop_dt: 0.05,
            deriv_clip: 1e6,
            state_clip: None,
            augment_params: false,
        }
    }
}

impl EnkfConfig {
    /// Defaults, with state clipping at 50 for Rabinovich–Fabrikant.
    pub fn for_system(spec: &SystemSpec) -> Self {
        Self {
            state_clip: (spec.kind == SystemKind::Rabinovich).then_some(50.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_members < 2 || self.inflation < 1.0 || self.prop_dt <= 0.0 || self.reg_eps < 0.0 {
            return Err(Error::Config(format!("invalid EnKF config {self:?}")));
        }
        Ok(())
    }
}

/// Classical RK4 with every stage derivative clipped to `±clip`.
pub fn rk4_step_fn(x: &[f64], dt: f64, clip: f64, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let eval = |s: &[f64]| -> Vec<f64> { f(s).into_iter().map(|v| v.clamp(-clip, clip)).collect() };
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };
    let k1 = eval(x);
    let k2 = eval(&axpy(0.5 * dt, &k1));
    let k3 = eval(&axpy(0.5 * dt, &k2));
    let k4 = eval(&axpy(dt, &k3));
    (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// One RK4 step of a benchmark system; non-finite results are an error.
pub fn rk4_step(spec: &SystemSpec, x: &[f64], p: &[f64], dt: f64, clip: f64) -> Result<Vec<f64>> {
    if dt <= 0.0 {
        return Err(Error::Invalid(format!("rk4 step needs dt > 0, got {dt}")));
    }
    let out = rk4_step_fn(x, dt, clip, |s| spec.field(s, p));
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NonFinite("rk4 step"))
    }
}

/// Ensemble of `n` members with `dim` columns each.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub members: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>) -> Self {
        Self { members }
    }

    pub fn size(&self) -> usize {
        self.members.nrows()
    }

    pub fn dim(&self) -> usize {
        self.members.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.members.row_mean().transpose()
    }

    /// Members minus the mean, `[n, dim]`.
    pub fn anomalies(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut a = self.members.clone();
        for mut row in a.row_iter_mut() {
            row -= mean.transpose();
        }
        a
    }

    /// Scale anomalies by `factor` about the mean.
    pub fn inflate(&mut self, factor: f64) {
        let mean = self.mean();
        let a = self.anomalies() * factor;
        self.members = a;
        for mut row in self.members.row_iter_mut() {
            row += mean.transpose();
        }
    }

    pub fn clip(&mut self, bound: f64) {
        self.members.apply(|v| *v = v.clamp(-bound, bound));
    }
}

/// Perturbed-observation analysis. The first `y.len()` columns are
/// observed directly; `r_diag` holds the observation-error variances.
pub fn analysis(
    ens: &mut Ensemble,
    y: &[f64],
    r_diag: &[f64],
    cfg: &EnkfConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let (n, dim, m) = (ens.size(), ens.dim(), y.len());
    if m > dim || r_diag.len() != m {
        return Err(shape_err("enkf analysis", &[n, dim], &[m, r_diag.len()]));
    }
    ens.inflate(cfg.inflation);
    let a = ens.anomalies();
    let mut p = a.transpose() * &a / (n as f64 - 1.0);
    for i in 0..dim {
        p[(i, i)] += cfg.reg_eps;
    }
    let pht = p.columns(0, m).into_owned();
    let mut s = pht.rows(0, m).into_owned();
    for i in 0..m {
        s[(i, i)] += r_diag[i];
    }
    let s_inv = s.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    let k = pht * s_inv;
    // Perturbations are centred so the mean update is exactly the Kalman
    // update and only the spread carries sampling noise.
    let mut pert = DMatrix::from_fn(n, m, |_, j| r_diag[j].sqrt() * rng::normal(rng));
    let pert_mean = pert.row_mean();
    for mut row in pert.row_iter_mut() {
        row -= &pert_mean;
    }
    for i in 0..n {
        let innov = DVector::from_iterator(m, (0..m).map(|j| y[j] + pert[(i, j)] - ens.members[(i, j)]));
        let update = &k * innov;
        for j in 0..dim {
            ens.members[(i, j)] += update[j];
        }
    }
    Ok(())
}

/// Observations in physical units.
#[derive(Clone, Debug)]
pub struct PhysicalObservations {
    pub mask: Vec<bool>,
    /// `[L, D_s]`, meaningful only at masked steps.
    pub y: Tensor,
    pub noise_std: Vec<f64>,
}

impl PhysicalObservations {
    /// Denormalise a scenario's observations; the noise level maps to
    /// `sigma * half_range` per channel.
    pub fn from_scenario(sc: &Scenario) -> Result<Self> {
        let d = sc.obs.state_dim();
        let l = sc.obs.len();
        let y = Tensor::from_fn(&[l, d], |i| {
            let (t, ch) = (i / d, i % d);
            sc.stats.denormalize_value(ch, sc.obs.y.data()[ch * l + t])
        });
        Ok(Self {
            mask: sc.obs.mask.clone(),
            y,
            noise_std: (0..d).map(|ch| sc.obs.noise_sigma * sc.stats.half_range(ch)).collect(),
        })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let d = self.y.shape()[1];
        &self.y.data()[t * d..(t + 1) * d]
    }
}

/// Forecast and analysis ensemble means at one observed step.
#[derive(Clone, Debug)]
pub struct AnalysisRecord {
    pub step: usize,
    pub forecast: Vec<f64>,
    pub analysis: Vec<f64>,
    /// Square root of the trace of the forecast state covariance.
    pub forecast_spread: f64,
}

#[derive(Clone, Debug)]
pub struct FilterOutput {
    /// Ensemble-mean states `[L, D_s]`.
    pub mean: Tensor,
    /// Final parameter estimate (augmented mode).
    pub params: Option<Vec<f64>>,
    pub analyses: Vec<AnalysisRecord>,
    pub reinitialized: usize,
    /// Largest absolute member value seen after any propagation or update.
    pub max_abs: f64,
}

/// Run the filter over the whole window. The oracle knows the starting state
/// `x0` only up to `sigma_init` Gaussian uncertainty.
pub fn run_filter(
    spec: &SystemSpec,
    obs: &PhysicalObservations,
    x0: &[f64],
    true_params: &ParamVector,
    cfg: &EnkfConfig,
    rng: &mut impl Rng,
) -> Result<FilterOutput> {
    cfg.validate()?;
    let d = spec.state_dim;
    let l = obs.mask.len();
    if obs.y.shape() != [l, d] || obs.noise_std.len() != d {
        return Err(shape_err("run_filter observations", obs.y.shape(), &[l, d]));
    }
    if !obs.mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    if x0.len() != d {
        return Err(shape_err("run_filter initial state", &[x0.len()], &[d]));
    }
    let dp = spec.param_dim();
    let dim = if cfg.augment_params { d + dp } else { d };
    let n = cfg.n_members;

    // The background guess is itself a draw from the prior, which keeps the
    // ensemble spread consistent with the error of its mean.
    let centre: Vec<f64> = x0.iter().map(|v| v + cfg.sigma_init * rng::normal(rng)).collect();
    let id_box = &spec.id_box;
    let mut members = DMatrix::zeros(n, dim);
    for i in 0..n {
        for j in 0..d {
            members[(i, j)] = centre[j] + cfg.sigma_init * rng::normal(rng);
        }
        for j in 0..dim - d {
            let spread = cfg.param_noise_frac * (id_box[j].hi() - id_box[j].lo());
            members[(i, d + j)] = true_params.values[j] + spread * rng::normal(rng);
        }
    }
    let mut ens = Ensemble::new(members);
    let r_diag: Vec<f64> = obs.noise_std.iter().map(|s| (s * s).max(1e-12)).collect();
    let mut mean_traj = Vec::with_capacity(l * d);
    let mut analyses = Vec::new();
    let mut reinitialized = 0;
    let mut max_abs: f64 = 0.0;
    let blowup = 10.0 * spec.amplitude_bound;

    for t in 0..l {
        if t > 0 {
            let rows: Vec<Vec<f64>> = (0..n).map(|i| ens.members.row(i).iter().cloned().collect()).collect();
            let stepped: Vec<Option<Vec<f64>>> = rows
                .par_iter()
                .map(|row| {
                    let p: &[f64] = if cfg.augment_params { &row[d..] } else { &true_params.values };
                    let mut x = rk4_step(spec, &row[..d], p, cfg.prop_dt, cfg.deriv_clip).ok()?;
                    if let Some(c) = cfg.state_clip {
                        x.iter_mut().for_each(|v| *v = v.clamp(-c, c));
                    }
                    if x.iter().any(|v| v.abs() > blowup) {
                        return None;
                    }
                    x.extend_from_slice(&row[d..]);
                    Some(x)
                })
                .collect();
            let healthy: Vec<&Vec<f64>> = stepped.iter().flatten().collect();
            if healthy.is_empty() {
                return Err(Error::AllMembersBlownUp { step: t });
            }
            let mut hmean = vec![0.0; dim];
            for h in &healthy {
                for j in 0..dim {
                    hmean[j] += h[j] / healthy.len() as f64;
                }
            }
            for (i, s) in stepped.into_iter().enumerate() {
                let row = match s {
                    Some(r) => r,
                    None => {
                        reinitialized += 1;
                        (0..dim)
                            .map(|j| hmean[j] + if j < d { cfg.sigma_init * rng::normal(rng) } else { 0.0 })
                            .collect()
                    }
                };
                for (j, v) in row.into_iter().enumerate() {
                    ens.members[(i, j)] = v;
                }
            }
        }
        if obs.mask[t] {
            let forecast: Vec<f64> = ens.mean().iter().take(d).cloned().collect();
            let a = ens.anomalies();
            let forecast_spread =
                (a.columns(0, d).iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64).sqrt();
            analysis(&mut ens, obs.row(t), &r_diag, cfg, rng)?;
            if let Some(c) = cfg.state_clip {
                ens.clip(c);
            }
            analyses.push(AnalysisRecord {
                step: t,
                forecast,
                analysis: ens.mean().iter().take(d).cloned().collect(),
                forecast_spread,
            });
        }
        for i in 0..n {
            for j in 0..d {
                max_abs = max_abs.max(ens.members[(i, j)].abs());
            }
        }
        let mean = ens.mean();
        mean_traj.extend(mean.iter().take(d));
    }
    let params = cfg.augment_params.then(|| ens.mean().iter().skip(d).cloned().collect());
    Ok(FilterOutput {
        mean: Tensor::new(vec![l, d], mean_traj)?,
        params,
        analyses,
        reinitialized,
        max_abs,
    })
}
