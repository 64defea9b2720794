//! Physics-guided reverse diffusion.
//!
//! Each reverse step draws `x_{t-1}` from the DDPM posterior, then (once the
//! physics weight is positive) nudges it down the gradient of
//! `w_data * L_data + λ_phy(t) * L_phy`. The gradient flows through x̂₀
//! recovery, denormalisation, parameter pooling and one Dormand–Prince step
//! recorded on a fresh tape. Any failure inside the guidance block leaves
//! the plain DDPM step in place.

use rand::Rng;
use serde::Serialize;

use crate::dataset::{NormStats, ObservationSet};
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::{shape_err, Error, Result};
use crate::integrator::dp45_step_var;
use crate::rng::normals;
use crate::systems::{ParamVector, SystemKind, SystemSpec};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuidanceConfig {
    pub lambda_base: f64,
    pub w_data: f64,
    pub g_thresh: f64,
    pub eps_norm: f64,
    pub phy_abort: f64,
    pub x0_clamp: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda_base: 1.0,
            w_data: 150.0,
            g_thresh: 0.15,
            eps_norm: 1e-8,
            phy_abort: 1e4,
            x0_clamp: 3.0,
        }
    }
}

impl GuidanceConfig {
    pub fn for_system(spec: &SystemSpec) -> Self {
        Self {
            lambda_base: spec.lambda_base,
            ..Self::default()
        }
    }

    pub fn with_lambda(mut self, lambda_base: f64) -> Self {
        self.lambda_base = lambda_base;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.lambda_base,
            self.w_data,
            self.g_thresh,
            self.eps_norm,
            self.phy_abort,
            self.x0_clamp,
        ];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0) || self.g_thresh <= 0.0 {
            return Err(Error::Config(format!("invalid guidance config {self:?}")));
        }
        Ok(())
    }
}

/// `λ_phy(t) = λ_base (1 - t/T)`.
pub fn lambda_schedule(t: usize, steps: usize, lambda_base: f64) -> f64 {
    lambda_base * (1.0 - t as f64 / steps as f64)
}

/// Clamped x̂₀ from a noisy sample at level `t` (`t = 0` means clean).
pub fn recover_x0<'t>(x_t: Var<'t>, t: usize, eps_hat: &Tensor, schedule: &NoiseSchedule, clamp: f64) -> Result<Var<'t>> {
    let ab = schedule.alpha_bar_at(t);
    let scaled_eps = x_t.tape().constant(eps_hat.scale((1.0 - ab).sqrt()));
    Ok(x_t.sub(scaled_eps)?.mul_scalar(1.0 / ab.sqrt()).clamp(-clamp, clamp))
}

/// Time-mean of the trailing parameter rows of a `[C, L]` variable.
pub fn pool_params<'t>(x: Var<'t>, state_dim: usize) -> Result<Var<'t>> {
    let s = x.shape();
    if s.len() != 2 || s[0] <= state_dim {
        return Err(shape_err("pool_params", &s, &[state_dim + 1, 0]));
    }
    x.slice(0, state_dim, s[0])?.mean_axis(1)
}

/// `log(1 + mse)`.
pub fn log1p_mse<'t>(mse: Var<'t>) -> Var<'t> {
    mse.add_scalar(1.0).log()
}

/// One-step Dormand–Prince residual of physical states `[D_s, L]` under
/// pooled parameters `[D_p]`.
pub fn physics_loss<'t>(states: Var<'t>, p_hat: Var<'t>, kind: SystemKind, dt: f64) -> Result<Var<'t>> {
    let s = states.shape();
    if s.len() != 2 || s[1] < 2 {
        return Err(shape_err("physics_loss", &s, &[0, 2]));
    }
    let (d, l) = (s[0], s[1]);
    let mut current = Vec::with_capacity(d);
    let mut next = Vec::with_capacity(d);
    for i in 0..d {
        let row = states.slice(0, i, i + 1)?.reshape(&[l])?;
        current.push(row.slice(0, 0, l - 1)?);
        next.push(row.slice(0, 1, l)?);
    }
    let params = (0..p_hat.shape()[0])
        .map(|j| p_hat.slice(0, j, j + 1))
        .collect::<Result<Vec<_>>>()?;
    let advanced = dp45_step_var(kind, &current, &params, dt)?;
    let mut total: Option<Var<'t>> = None;
    for (n, a) in next.iter().zip(&advanced) {
        let r = n.sub(*a)?;
        let sq = r.mul(r)?.sum();
        total = Some(match total {
            Some(acc) => acc.add(sq)?,
            None => sq,
        });
    }
    let mse = total.expect("at least one state component").mul_scalar(1.0 / (d * (l - 1)) as f64);
    Ok(log1p_mse(mse))
}

/// Masked squared error of the state rows of a normalised `[C, L]`
/// variable, averaged over observed time steps.
pub fn data_loss<'t>(x0: Var<'t>, obs: &ObservationSet) -> Result<Var<'t>> {
    let count = obs.count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let d = obs.state_dim();
    let s = x0.shape();
    if s.len() != 2 || s[0] < d || s[1] != obs.len() {
        return Err(shape_err("data_loss", &s, obs.y.shape()));
    }
    let tape = x0.tape();
    let r = x0.slice(0, 0, d)?.sub(tape.constant(obs.y.clone()))?;
    let masked = r.mul(tape.constant(obs.mask_tensor()))?;
    Ok(masked.mul(r)?.sum().mul_scalar(1.0 / count as f64))
}

/// Clipped descent step: zero when the physics loss is past the abort
/// threshold, otherwise `g` rescaled to norm `min(|g|, g_thresh)`.
pub fn safe_project(g: &Tensor, l_phy: f64, cfg: &GuidanceConfig) -> Tensor {
    if l_phy.is_nan() || l_phy > cfg.phy_abort {
        return Tensor::zeros(g.shape());
    }
    let norm = g.norm();
    g.scale(norm.min(cfg.g_thresh) / (norm + cfg.eps_norm))
}

/// Anything that predicts ε for a single `[C, L]` sequence.
pub trait EpsModel {
    fn channels(&self) -> usize;
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor>;
}

impl EpsModel for Denoiser {
    fn channels(&self) -> usize {
        self.cfg.channels
    }

    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        self.predict_one(x_t, t)
    }
}

/// Predicts the exact noise that separates `x_t` from a known clean signal.
pub struct OracleEps<'a> {
    pub x0: Tensor,
    pub schedule: &'a NoiseSchedule,
}

impl EpsModel for OracleEps<'_> {
    fn channels(&self) -> usize {
        self.x0.shape()[0]
    }

    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        let ab = self.schedule.alpha_bar_at(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x_t.zip_map(&self.x0, "oracle eps", |x, x0| (x - a * x0) / b)
    }
}

/// What the guidance terms need besides the sample itself.
pub struct GuidanceContext<'a> {
    pub schedule: &'a NoiseSchedule,
    pub kind: SystemKind,
    pub stats: &'a NormStats,
    pub obs: &'a ObservationSet,
    pub dt: f64,
    pub cfg: &'a GuidanceConfig,
}

/// Loss values and raw gradient at one guided step.
#[derive(Clone, Debug)]
pub struct GuidanceTerms {
    pub l_data: f64,
    pub l_phy: f64,
    pub total: f64,
    pub grad: Tensor,
}

impl GuidanceContext<'_> {
    fn state_dim(&self) -> usize {
        self.obs.state_dim()
    }

    /// `L_total` at `x` (noise level `t`) and its gradient with respect to `x`.
    /// `physics_fault` replaces the physics loss by NaN.
    pub fn terms(&self, x: &Tensor, t: usize, eps_hat: &Tensor, lambda_phy: f64, physics_fault: bool) -> Result<GuidanceTerms> {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let x0 = recover_x0(xv, t, eps_hat, self.schedule, self.cfg.x0_clamp)?;
        let l_data = data_loss(x0, self.obs)?;
        let phys = self.stats.denormalize_var(x0)?;
        let d = self.state_dim();
        let states = phys.slice(0, 0, d)?;
        let p_hat = pool_params(phys, d)?;
        let mut l_phy = physics_loss(states, p_hat, self.kind, self.dt)?;
        if physics_fault {
            l_phy = l_phy.mul_scalar(f64::NAN);
        }
        let total = l_data.mul_scalar(self.cfg.w_data).add(l_phy.mul_scalar(lambda_phy))?;
        let (ld, lp, tv) = (l_data.value().item()?, l_phy.value().item()?, total.value().item()?);
        if !tv.is_finite() {
            return Err(Error::NonFinite("guidance loss"));
        }
        let grad = tape.backward(total)?.wrt(xv);
        Ok(GuidanceTerms {
            l_data: ld,
            l_phy: lp,
            total: tv,
            grad,
        })
    }

    /// `L_total` alone, without a gradient.
    pub fn total_loss(&self, x: &Tensor, t: usize, eps_hat: &Tensor, lambda_phy: f64) -> Result<f64> {
        self.terms(x, t, eps_hat, lambda_phy, false).map(|g| g.total)
    }
}

/// One row of the per-step guidance trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub t: usize,
    pub lambda_phy: f64,
    pub l_data: Option<f64>,
    pub l_phy: Option<f64>,
    pub grad_norm: Option<f64>,
    pub correction_norm: Option<f64>,
    pub fallback: bool,
}

#[derive(Clone, Debug)]
pub struct SampleOutcome {
    /// Normalised `[C, L]` reconstruction.
    pub x0_hat: Tensor,
    /// Pooled parameters in physical units.
    pub p_hat: ParamVector,
    pub fallback_count: usize,
    pub guided_steps: usize,
    pub trace: Vec<TraceEntry>,
}

/// Test hooks for the sampler.
#[derive(Default)]
pub struct Hooks<'a> {
    /// Return true to force a NaN physics loss at timestep `t`.
    pub physics_fault: Option<&'a dyn Fn(usize) -> bool>,
}

/// Physics-guided ancestral sampling of one sequence.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    model: &impl EpsModel,
    schedule: &NoiseSchedule,
    spec: &SystemSpec,
    stats: &NormStats,
    obs: &ObservationSet,
    dt: f64,
    cfg: &GuidanceConfig,
    rng: &mut impl Rng,
) -> Result<SampleOutcome> {
    sample_with_hooks(model, schedule, spec, stats, obs, dt, cfg, rng, &Hooks::default())
}

#[allow(clippy::too_many_arguments)]
pub fn sample_with_hooks(
    model: &impl EpsModel,
    schedule: &NoiseSchedule,
    spec: &SystemSpec,
    stats: &NormStats,
    obs: &ObservationSet,
    dt: f64,
    cfg: &GuidanceConfig,
    rng: &mut impl Rng,
    hooks: &Hooks<'_>,
) -> Result<SampleOutcome> {
    cfg.validate()?;
    let c = spec.channels();
    let l = obs.len();
    if model.channels() != c || stats.channels() != c || obs.state_dim() != spec.state_dim {
        return Err(Error::Config(format!(
            "model ({}), stats ({}) and observations ({}) disagree with {} ({c} channels)",
            model.channels(),
            stats.channels(),
            obs.state_dim(),
            spec.kind
        )));
    }
    if cfg.lambda_base > 0.0 && obs.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let ctx = GuidanceContext {
        schedule,
        kind: spec.kind,
        stats,
        obs,
        dt,
        cfg,
    };
    let steps = schedule.steps();
    let mut x = Tensor::new(vec![c, l], normals(rng, c * l))?;
    let mut trace = Vec::with_capacity(steps);
    let (mut guided, mut fallbacks) = (0, 0);
    for t in (1..=steps).rev() {
        let eps_hat = model.predict_eps(&x, t)?;
        let mut x_prev = schedule.reverse_step(&x, t, &eps_hat, rng)?;
        let lambda_phy = lambda_schedule(t, steps, cfg.lambda_base);
        let mut entry = TraceEntry {
            t,
            lambda_phy,
            l_data: None,
            l_phy: None,
            grad_norm: None,
            correction_norm: None,
            fallback: false,
        };
        if lambda_phy > 0.0 {
            guided += 1;
            let fault = hooks.physics_fault.is_some_and(|f| f(t));
            match ctx.terms(&x_prev, t - 1, &eps_hat, lambda_phy, fault) {
                Ok(g) if g.grad.is_finite() => {
                    let step = safe_project(&g.grad, g.l_phy, cfg);
                    entry.l_data = Some(g.l_data);
                    entry.l_phy = Some(g.l_phy);
                    entry.grad_norm = Some(g.grad.norm());
                    entry.correction_norm = Some(step.norm());
                    x_prev = x_prev.sub(&step)?;
                }
                _ => {
                    fallbacks += 1;
                    entry.fallback = true;
                }
            }
        }
        trace.push(entry);
        x = x_prev;
    }
    let p_hat = pooled_params(spec, stats, &x)?;
    Ok(SampleOutcome {
        x0_hat: x,
        p_hat,
        fallback_count: fallbacks,
        guided_steps: guided,
        trace,
    })
}

/// Physical parameter estimate from a normalised `[C, L]` sample.
pub fn pooled_params(spec: &SystemSpec, stats: &NormStats, x: &Tensor) -> Result<ParamVector> {
    let phys = stats.denormalize(x)?;
    let l = x.shape()[1];
    let values = (spec.state_dim..spec.channels())
        .map(|ch| phys.data()[ch * l..(ch + 1) * l].iter().sum::<f64>() / l as f64)
        .collect();
    ParamVector::new(spec, values)
}
