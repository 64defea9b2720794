//! DDPM core: linear noise schedule, forward corruption, ε-prediction
//! training and the ancestral reverse step, with a small temporal U-Net.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::dataset::{NormStats, TrajectorySet};
use crate::error::{shape_err, Error, Result};
use crate::rng::{self, normals};
use crate::store::Container;
use crate::systems::SystemKind;
use crate::tensor::{Tape, Tensor, Var};

/// Linear β schedule with `alpha_bar[t-1] = prod_{s<=t} (1 - beta_s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "invalid schedule: T={steps}, beta {beta_start}..{beta_end}"
            )));
        }
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn linear(steps: usize) -> Self {
        Self::new(steps, 1e-4, 0.02).expect("valid default schedule")
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `ᾱ_t` for `t` in `0..=T`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Invalid(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// `x_t = sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) eps`.
    pub fn q_sample(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        self.check_t(t)?;
        let ab = self.alpha_bar_at(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.zip_map(eps, "q_sample", |x, e| a * x + b * e)
    }

    /// Posterior mean `1/sqrt(α_t) (x_t - β_t / sqrt(1 - ᾱ_t) eps_hat)`.
    pub fn reverse_mean(&self, x_t: &Tensor, t: usize, eps_hat: &Tensor) -> Result<Tensor> {
        self.check_t(t)?;
        let (alpha, beta, ab) = (self.alpha[t - 1], self.beta[t - 1], self.alpha_bar_at(t));
        let coef = beta / (1.0 - ab).sqrt();
        let inv = 1.0 / alpha.sqrt();
        x_t.zip_map(eps_hat, "reverse_step", |x, e| inv * (x - coef * e))
    }

    /// Ancestral step `t -> t-1`; no noise is added at `t = 1`.
    pub fn reverse_step(&self, x_t: &Tensor, t: usize, eps_hat: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let mut mean = self.reverse_mean(x_t, t, eps_hat)?;
        if t > 1 {
            let sigma = self.beta[t - 1].sqrt();
            for (m, z) in mean.data_mut().iter_mut().zip(normals(rng, x_t.numel())) {
                *m += sigma * z;
            }
        }
        Ok(mean)
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    /// Input and output channels (`D_s + D_p`).
    pub channels: usize,
    pub base_channels: usize,
    pub multipliers: [usize; 3],
    pub time_embed_dim: usize,
    pub use_attention: bool,
    pub groups: usize,
    pub kernel: usize,
}

impl DenoiserConfig {
    pub fn desk(channels: usize) -> Self {
        Self {
            channels,
            base_channels: 16,
            multipliers: [1, 2, 4],
            time_embed_dim: 32,
            use_attention: false,
            groups: 8,
            kernel: 3,
        }
    }

    pub fn paper(channels: usize) -> Self {
        Self {
            base_channels: 64,
            time_embed_dim: 128,
            use_attention: true,
            ..Self::desk(channels)
        }
    }

    pub fn preset(name: &str, channels: usize) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "desk" => Ok(Self::desk(channels)),
            "paper" => Ok(Self::paper(channels)),
            other => Err(Error::Config(format!("unknown preset `{other}` (desk|paper)"))),
        }
    }

    fn widths(&self) -> [usize; 3] {
        self.multipliers.map(|m| m * self.base_channels)
    }

    fn groups_for(&self, c: usize) -> usize {
        (1..=self.groups.min(c)).rev().find(|g| c.is_multiple_of(*g)).unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.base_channels == 0 || self.time_embed_dim < 2 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("invalid denoiser config {self:?}")));
        }
        if self.kernel.is_multiple_of(2) || self.multipliers.contains(&0) {
            return Err(Error::Config("kernel must be odd and multipliers positive".into()));
        }
        Ok(())
    }
}

/// Sinusoidal embedding `[B, dim]` with geometric frequencies spanning
/// periods 1 to 10^4.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    Tensor::from_fn(&[ts.len(), dim], |i| {
        let (b, j) = (i / dim, i % dim);
        let k = j % half;
        let freq = (-(10_000f64).ln() * k as f64 / half as f64).exp();
        let arg = ts[b] as f64 * freq;
        if j < half {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

/// Temporal U-Net predicting the noise of a `[B, C, L]` input.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    pub params: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

struct Init<'r, R: Rng> {
    params: Vec<(String, Tensor)>,
    rng: &'r mut R,
    zero: bool,
}

impl<R: Rng> Init<'_, R> {
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = if self.zero {
            Tensor::zeros(shape)
        } else {
            Tensor::from_fn(shape, |_| self.rng.gen_range(-bound..bound))
        };
        self.params.push((name, t));
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        self.uniform(format!("{name}.w"), &[cout, cin, k], cin * k);
        self.uniform(format!("{name}.b"), &[cout], cin * k);
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) {
        self.uniform(format!("{name}.w"), &[din, dout], din);
        self.uniform(format!("{name}.b"), &[dout], din);
    }

    fn norm(&mut self, name: &str, c: usize) {
        let g = if self.zero { 0.0 } else { 1.0 };
        self.params.push((format!("{name}.g"), Tensor::full(&[c], g)));
        self.params.push((format!("{name}.b"), Tensor::zeros(&[c])));
    }

    fn resblock(&mut self, name: &str, cin: usize, cout: usize, k: usize, temb: usize) {
        self.norm(&format!("{name}.n1"), cin);
        self.conv(&format!("{name}.c1"), cin, cout, k);
        self.linear(&format!("{name}.t"), temb, cout);
        self.norm(&format!("{name}.n2"), cout);
        self.conv(&format!("{name}.c2"), cout, cout, k);
        if cin != cout {
            self.conv(&format!("{name}.skip"), cin, cout, 1);
        }
    }
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::build(cfg, rng, false)
    }

    /// Every weight (and norm gain) set to zero, so the output is zero.
    pub fn zeros(cfg: DenoiserConfig) -> Result<Self> {
        Self::build(cfg, &mut rng::seeded(0), true)
    }

    fn build(cfg: DenoiserConfig, rng: &mut impl Rng, zero: bool) -> Result<Self> {
        cfg.validate()?;
        let [w0, w1, w2] = cfg.widths();
        let (e, k, c) = (cfg.time_embed_dim, cfg.kernel, cfg.channels);
        let mut b = Init {
            params: Vec::new(),
            rng,
            zero,
        };
        b.linear("temb.0", e, e);
        b.linear("temb.1", e, e);
        b.conv("in", c, w0, k);
        let widths = [w0, w1, w2];
        let mut cin = w0;
        for (s, &w) in widths.iter().enumerate() {
            b.resblock(&format!("down{s}.0"), cin, w, k, e);
            b.resblock(&format!("down{s}.1"), w, w, k, e);
            cin = w;
        }
        b.resblock("mid.0", w2, w2, k, e);
        if cfg.use_attention {
            b.norm("mid.attn.n", w2);
            for m in ["q", "k", "v", "o"] {
                b.linear(&format!("mid.attn.{m}"), w2, w2);
            }
        }
        b.resblock("mid.1", w2, w2, k, e);
        for s in (0..2).rev() {
            b.resblock(&format!("up{s}.0"), widths[s + 1], widths[s], k, e);
            b.resblock(&format!("up{s}.1"), widths[s], widths[s], k, e);
        }
        b.norm("out.n", w0);
        // The output projection starts at zero so the untrained model
        // predicts ε̂ = 0.
        b.zero = true;
        b.conv("out", w0, c, 1);
        Ok(Self::from_params(cfg, b.params))
    }

    fn from_params(cfg: DenoiserConfig, params: Vec<(String, Tensor)>) -> Self {
        let index = params.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Self { cfg, params, index }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Register the weights on `tape`; `trainable` decides whether they
    /// receive gradients.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|(_, t)| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// ε̂ for `x: [B, C, L]` at per-item timesteps `ts`.
    pub fn forward<'t>(&self, vars: &[Var<'t>], x: Var<'t>, ts: &[usize]) -> Result<Var<'t>> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.cfg.channels || s[0] != ts.len() {
            return Err(shape_err("denoiser input", &s, &[ts.len(), self.cfg.channels, 0]));
        }
        if s[2] == 0 || !s[2].is_multiple_of(4) {
            return Err(Error::Invalid(format!("sequence length {} must be a positive multiple of 4", s[2])));
        }
        let net = Net { model: self, vars };
        let tape = x.tape();
        let emb = tape.constant(timestep_embedding(ts, self.cfg.time_embed_dim));
        let temb = net.linear("temb.1", net.linear("temb.0", emb)?.silu())?.silu();

        let mut h = net.conv("in", x)?;
        let mut skips = Vec::with_capacity(3);
        for s in 0..3 {
            h = net.resblock(&format!("down{s}.0"), h, temb)?;
            h = net.resblock(&format!("down{s}.1"), h, temb)?;
            skips.push(h);
            if s < 2 {
                h = h.avg_pool2()?;
            }
        }
        h = net.resblock("mid.0", h, temb)?;
        if self.cfg.use_attention {
            h = net.attention("mid.attn", h)?;
        }
        h = net.resblock("mid.1", h, temb)?;
        h = h.add(skips[2])?;
        for s in (0..2).rev() {
            h = h.upsample2();
            h = net.resblock(&format!("up{s}.0"), h, temb)?;
            h = h.add(skips[s])?;
            h = net.resblock(&format!("up{s}.1"), h, temb)?;
        }
        h = net.norm("out.n", h)?.silu();
        net.conv("out", h)
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, x: &Tensor, ts: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let out = self.forward(&vars, tape.constant(x.clone()), ts)?;
        Ok(out.value().as_ref().clone())
    }

    /// ε̂ for a single `[C, L]` sequence.
    pub fn predict_one(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        let s = x.shape().to_vec();
        let batched = x.clone().reshape(&[1, s[0], s[1]])?;
        self.predict(&batched, &[t])?.reshape(&s)
    }
}

struct Net<'a, 't> {
    model: &'a Denoiser,
    vars: &'a [Var<'t>],
}

impl<'t> Net<'_, 't> {
    fn p(&self, name: &str) -> Result<Var<'t>> {
        self.model
            .index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Invalid(format!("missing weight `{name}`")))
    }

    fn conv(&self, name: &str, x: Var<'t>) -> Result<Var<'t>> {
        x.conv1d(self.p(&format!("{name}.w"))?, self.p(&format!("{name}.b"))?)
    }

    fn linear(&self, name: &str, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(self.p(&format!("{name}.w"))?)?.add(self.p(&format!("{name}.b"))?)
    }

    fn norm(&self, name: &str, x: Var<'t>) -> Result<Var<'t>> {
        let groups = self.model.cfg.groups_for(x.shape()[1]);
        x.group_norm(self.p(&format!("{name}.g"))?, self.p(&format!("{name}.b"))?, groups, 1e-5)
    }

    fn resblock(&self, name: &str, x: Var<'t>, temb: Var<'t>) -> Result<Var<'t>> {
        let len = x.shape()[2];
        let mut h = self.conv(&format!("{name}.c1"), self.norm(&format!("{name}.n1"), x)?.silu())?;
        let t = self.linear(&format!("{name}.t"), temb)?;
        h = h.add(t.repeat_trailing(len))?;
        h = self.conv(&format!("{name}.c2"), self.norm(&format!("{name}.n2"), h)?.silu())?;
        let skip = if self.model.index.contains_key(&format!("{name}.skip.w")) {
            self.conv(&format!("{name}.skip"), x)?
        } else {
            x
        };
        h.add(skip)
    }

    /// Single-head self-attention over the time axis, with a residual.
    fn attention(&self, name: &str, x: Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        let (b, c, l) = (s[0], s[1], s[2]);
        let normed = self.norm(&format!("{name}.n"), x)?;
        let scale = 1.0 / (c as f64).sqrt();
        let mut outs = Vec::with_capacity(b);
        for i in 0..b {
            let seq = normed.slice(0, i, i + 1)?.reshape(&[c, l])?.transpose2()?;
            let q = self.linear(&format!("{name}.q"), seq)?;
            let k = self.linear(&format!("{name}.k"), seq)?;
            let v = self.linear(&format!("{name}.v"), seq)?;
            let scores = q.matmul(k.transpose2()?)?.mul_scalar(scale);
            let sv = scores.value();
            let row_max = Tensor::from_fn(&[l, l], |j| {
                let r = j / l;
                sv.data()[r * l..(r + 1) * l].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            });
            let e = scores.sub(x.tape().constant(row_max))?.exp();
            let weights = e.div(e.sum_axis(1)?.repeat_trailing(l))?;
            let o = self.linear(&format!("{name}.o"), weights.matmul(v)?)?;
            outs.push(o.transpose2()?.reshape(&[1, c, l])?);
        }
        x.add(Var::concat(&outs, 0)?)
    }
}

/// Optimiser and loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 16,
            lr: 2e-4,
            lr_min: 1e-6,
            weight_decay: 1e-5,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale run: fewer steps, so a larger peak learning rate.
    pub fn desk() -> Self {
        Self {
            steps: 1500,
            lr: 1e-3,
            ..Self::default()
        }
    }

    /// Full-scale run: 80 epochs over 1000 trajectories at batch 16.
    pub fn paper() -> Self {
        Self {
            steps: 5000,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset `{other}` (desk|paper)"))),
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let frac = step as f64 / self.steps.max(1) as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Decoupled weight-decay Adam state.
#[derive(Clone, Debug)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(model: &Denoiser) -> Self {
        let zeros: Vec<Vec<f64>> = model.params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut Denoiser, grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = cfg.betas;
        let (c1, c2) = (1.0 - b1.powi(self.t), 1.0 - b2.powi(self.t));
        for (i, (_, p)) in model.params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.adam_eps);
                *w -= lr * (update + cfg.weight_decay * *w);
            }
        }
    }
}

/// Per-step diagnostics handed to the progress callback.
#[derive(Clone, Copy, Debug)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// ε-prediction loss and parameter gradients on one batch.
pub fn loss_and_grads(
    model: &Denoiser,
    x0: &Tensor,
    ts: &[usize],
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<(f64, Vec<Tensor>)> {
    let xt = q_sample_batch(schedule, x0, ts, eps)?;
    let tape = Tape::new();
    let vars = model.bind(&tape, true);
    let pred = model.forward(&vars, tape.constant(xt), ts)?;
    let loss = pred.mse(tape.constant(eps.clone()))?;
    let value = loss.value().item()?;
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let g = tape.backward(loss)?;
    Ok((value, vars.iter().map(|&v| g.wrt(v)).collect()))
}

/// Corrupt each batch item at its own timestep.
pub fn q_sample_batch(schedule: &NoiseSchedule, x0: &Tensor, ts: &[usize], eps: &Tensor) -> Result<Tensor> {
    if x0.shape() != eps.shape() || x0.shape().first() != Some(&ts.len()) {
        return Err(shape_err("q_sample_batch", x0.shape(), eps.shape()));
    }
    let per = x0.numel() / ts.len().max(1);
    let mut out = Tensor::zeros(x0.shape());
    for (b, &t) in ts.iter().enumerate() {
        schedule.check_t(t)?;
        let ab = schedule.alpha_bar_at(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let range = b * per..(b + 1) * per;
        for ((o, &x), &e) in out.data_mut()[range.clone()]
            .iter_mut()
            .zip(&x0.data()[range.clone()])
            .zip(&eps.data()[range])
        {
            *o = a * x + s * e;
        }
    }
    Ok(out)
}

/// Train `model` in place on a normalised corpus; returns the loss curve.
pub fn train(
    model: &mut Denoiser,
    corpus: &TrajectorySet,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&StepReport),
) -> Result<Vec<f64>> {
    if corpus.channels() != model.cfg.channels {
        return Err(shape_err("train corpus", corpus.z.shape(), &[0, model.cfg.channels, 0]));
    }
    if corpus.is_empty() || cfg.batch == 0 {
        return Err(Error::Config("empty corpus or zero batch".into()));
    }
    let mut rng = rng::seeded(cfg.seed);
    let mut opt = AdamW::new(model);
    let (n, c, l) = (corpus.len(), corpus.channels(), corpus.seq_len());
    let batch = cfg.batch.min(n);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sample_indices(&mut rng, n, batch).into_vec();
        let mut x0 = Vec::with_capacity(batch * c * l);
        for &i in &idx {
            x0.extend_from_slice(&corpus.z.data()[i * c * l..(i + 1) * c * l]);
        }
        let x0 = Tensor::new(vec![batch, c, l], x0)?;
        let ts: Vec<usize> = (0..batch).map(|_| rng.gen_range(1..=schedule.steps())).collect();
        let eps = Tensor::new(vec![batch, c, l], normals(&mut rng, batch * c * l))?;
        let (loss, mut grads) = loss_and_grads(model, &x0, &ts, &eps, schedule)?;
        if !loss.is_finite() {
            return Err(Error::NanLoss { step });
        }
        let norm = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        if norm > cfg.grad_clip {
            let s = cfg.grad_clip / norm;
            for g in &mut grads {
                *g = g.scale(s);
            }
        }
        let lr = cfg.lr_at(step);
        opt.step(model, &grads, lr, cfg);
        curve.push(loss);
        progress(&StepReport {
            step,
            loss,
            grad_norm: norm,
            lr,
        });
    }
    Ok(curve)
}

/// Diffusion steps `T` for a preset.
pub fn diffusion_steps(preset: &str) -> Result<usize> {
    match preset.to_ascii_lowercase().as_str() {
        "desk" => Ok(200),
        "paper" => Ok(1000),
        other => Err(Error::Config(format!("unknown preset `{other}` (desk|paper)"))),
    }
}

/// Build a fresh denoiser for `preset`, train it on `corpus` and package the
/// result with the corpus statistics. Weights are initialised from `cfg.seed`.
pub fn fit_checkpoint(
    corpus: &TrajectorySet,
    preset: &str,
    cfg: &TrainConfig,
    progress: impl FnMut(&StepReport),
) -> Result<Checkpoint> {
    let mut model = Denoiser::new(DenoiserConfig::preset(preset, corpus.channels())?, &mut rng::substream(cfg.seed, 1))?;
    let schedule = NoiseSchedule::linear(diffusion_steps(preset)?);
    let loss_curve = train(&mut model, corpus, &schedule, cfg, progress)?;
    Ok(Checkpoint {
        system: corpus.meta.system,
        dt: corpus.dt,
        model,
        schedule,
        stats: corpus.stats.clone(),
        seq_len: corpus.seq_len(),
        loss_curve,
    })
}

/// Unguided ancestral sampling of one `[C, L]` sequence.
pub fn ddpm_sample(model: &Denoiser, schedule: &NoiseSchedule, len: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let c = model.cfg.channels;
    let mut x = Tensor::new(vec![c, len], normals(rng, c * len))?;
    for t in (1..=schedule.steps()).rev() {
        let eps = model.predict_one(&x, t)?;
        x = schedule.reverse_step(&x, t, &eps, rng)?;
    }
    Ok(x)
}

/// Trained denoiser with everything needed to sample from it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub system: SystemKind,
    pub dt: f64,
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub stats: NormStats,
    pub seq_len: usize,
    pub loss_curve: Vec<f64>,
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("denoiser");
        let cfg = &self.model.cfg;
        c.set_meta("system", self.system);
        c.set_meta("dt", self.dt);
        c.set_meta("seq_len", self.seq_len);
        c.set_meta("diffusion_steps", self.schedule.steps());
        c.set_meta("beta_start", self.schedule.beta[0]);
        c.set_meta("beta_end", self.schedule.beta[self.schedule.steps() - 1]);
        c.set_meta("channels", cfg.channels);
        c.set_meta("base_channels", cfg.base_channels);
        c.set_meta(
            "multipliers",
            cfg.multipliers.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
        );
        c.set_meta("time_embed_dim", cfg.time_embed_dim);
        c.set_meta("use_attention", cfg.use_attention);
        c.set_meta("groups", cfg.groups);
        c.set_meta("kernel", cfg.kernel);
        self.stats.write_into(&mut c);
        c.push("loss_curve", Tensor::from_vec(self.loss_curve.clone()));
        for (name, t) in &self.model.params {
            c.push(&format!("w.{name}"), t.clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("denoiser")?;
        let mults: Vec<usize> = c
            .meta("multipliers")?
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Format("bad multipliers".into())))
            .collect::<Result<_>>()?;
        let multipliers: [usize; 3] = mults
            .try_into()
            .map_err(|_| Error::Format("expected three channel multipliers".into()))?;
        let cfg = DenoiserConfig {
            channels: c.meta_parse("channels")?,
            base_channels: c.meta_parse("base_channels")?,
            multipliers,
            time_embed_dim: c.meta_parse("time_embed_dim")?,
            use_attention: c.meta_parse("use_attention")?,
            groups: c.meta_parse("groups")?,
            kernel: c.meta_parse("kernel")?,
        };
        let reference = Denoiser::zeros(cfg.clone())?;
        let mut params = Vec::with_capacity(reference.params.len());
        for (name, t) in &reference.params {
            let stored = c.tensor(&format!("w.{name}"))?;
            if stored.shape() != t.shape() {
                return Err(Error::Format(format!("weight `{name}` has shape {:?}", stored.shape())));
            }
            params.push((name.clone(), stored.clone()));
        }
        let schedule = NoiseSchedule::new(
            c.meta_parse("diffusion_steps")?,
            c.meta_parse("beta_start")?,
            c.meta_parse("beta_end")?,
        )?;
        Ok(Self {
            system: c.meta_parse("system")?,
            dt: c.meta_parse("dt")?,
            model: Denoiser::from_params(cfg, params),
            schedule,
            stats: NormStats::read_from(c)?,
            seq_len: c.meta_parse("seq_len")?,
            loss_curve: c.tensor("loss_curve")?.data().to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, DEFAULT_DT};
    use crate::systems::Condition;

    fn tiny_cfg(channels: usize) -> DenoiserConfig {
        DenoiserConfig {
            channels,
            base_channels: 4,
            multipliers: [1, 2, 2],
            time_embed_dim: 4,
            use_attention: false,
            groups: 2,
            kernel: 3,
        }
    }

    #[test]
    fn schedule_invariants() {
        let s = NoiseSchedule::linear(1000);
        assert_eq!(s.beta[0], 1e-4);
        assert!((s.beta[999] - 0.02).abs() < 1e-15);
        let mut prod = 1.0;
        for t in 0..1000 {
            prod *= 1.0 - s.beta[t];
            assert!((s.alpha_bar[t] - prod).abs() < 1e-15);
            assert!(s.alpha_bar[t] > 0.0 && s.alpha_bar[t] < 1.0);
            if t > 0 {
                assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            }
        }
        assert!(s.alpha_bar[0] > 0.9998);
        assert!(s.alpha_bar[999] < 1e-4);
    }

    #[test]
    fn q_sample_limits_and_variance() {
        let s = NoiseSchedule::linear(200);
        let e = Tensor::from_fn(&[5], |i| i as f64 - 2.0);
        let x = s.q_sample(&Tensor::zeros(&[5]), 50, &e).unwrap();
        let k = (1.0 - s.alpha_bar_at(50)).sqrt();
        for i in 0..5 {
            assert!((x.data()[i] - k * e.data()[i]).abs() < 1e-15);
        }
        let near_one = NoiseSchedule::new(1, 1e-12, 1e-12).unwrap();
        let x0 = Tensor::from_vec(vec![0.3, -0.7]);
        let xt = near_one.q_sample(&x0, 1, &Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(xt.sub(&x0).unwrap().max_abs() < 2e-6);

        let mut r = rng::seeded(2);
        let n = 10_000;
        let eps = Tensor::from_vec(normals(&mut r, n));
        let xt = s.q_sample(&Tensor::zeros(&[n]), 120, &eps).unwrap();
        let var = xt.data().iter().map(|v| v * v).sum::<f64>() / n as f64;
        let expect = 1.0 - s.alpha_bar_at(120);
        assert!((var / expect - 1.0).abs() < 0.05, "{var} vs {expect}");
    }

    #[test]
    fn one_step_schedule_inverts_exactly() {
        let s = NoiseSchedule::new(1, 0.3, 0.3).unwrap();
        let x0 = Tensor::from_fn(&[7], |i| (i as f64).cos());
        let eps = Tensor::from_fn(&[7], |i| (i as f64 * 1.3).sin());
        let xt = s.q_sample(&x0, 1, &eps).unwrap();
        let back = s.reverse_step(&xt, 1, &eps, &mut rng::seeded(0)).unwrap();
        assert!(back.sub(&x0).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn reverse_step_mean_and_final_step() {
        let s = NoiseSchedule::linear(50);
        let x = Tensor::from_fn(&[3, 8], |i| (i as f64 * 0.4).sin());
        let e = Tensor::from_fn(&[3, 8], |i| (i as f64 * 0.9).cos());
        let t = 20;
        let mean = s.reverse_mean(&x, t, &e).unwrap();
        let (a, b, ab) = (s.alpha[t - 1], s.beta[t - 1], s.alpha_bar[t - 1]);
        for i in 0..24 {
            let want = (x.data()[i] - b / (1.0 - ab).sqrt() * e.data()[i]) / a.sqrt();
            assert!((mean.data()[i] - want).abs() < 1e-14);
        }
        let last = s.reverse_step(&x, 1, &e, &mut rng::seeded(4)).unwrap();
        assert_eq!(last, s.reverse_mean(&x, 1, &e).unwrap());
        let noisy = s.reverse_step(&x, t, &e, &mut rng::seeded(4)).unwrap();
        assert_eq!(noisy.shape(), x.shape());
        assert_ne!(noisy, mean);
    }

    #[test]
    fn forward_shape_and_determinism() {
        let m = Denoiser::new(DenoiserConfig::desk(6), &mut rng::seeded(1)).unwrap();
        let x = Tensor::from_fn(&[2, 6, 32], |i| (i as f64 * 0.1).sin());
        let a = m.predict(&x, &[3, 150]).unwrap();
        let b = m.predict(&x, &[3, 150]).unwrap();
        assert_eq!(a.shape(), &[2, 6, 32]);
        assert_eq!(a, b);
        assert!(m.predict(&Tensor::zeros(&[1, 6, 30]), &[1]).is_err());
    }

    #[test]
    fn attention_variant_runs() {
        let cfg = DenoiserConfig {
            use_attention: true,
            ..tiny_cfg(3)
        };
        let mut m = Denoiser::new(cfg, &mut rng::seeded(5)).unwrap();
        for (name, p) in &mut m.params {
            if name.starts_with("out.") {
                *p = p.map(|_| 0.1);
            }
        }
        let x = Tensor::from_fn(&[2, 3, 16], |i| (i as f64 * 0.3).cos());
        let y = m.predict(&x, &[1, 7]).unwrap();
        assert_eq!(y.shape(), &[2, 3, 16]);
        assert!(y.is_finite());
    }

    #[test]
    fn zero_network_gives_chi_square_loss() {
        let m = Denoiser::zeros(DenoiserConfig::desk(4)).unwrap();
        let s = NoiseSchedule::linear(100);
        let mut r = rng::seeded(8);
        let x0 = Tensor::new(vec![4, 4, 64], normals(&mut r, 1024)).unwrap();
        let eps = Tensor::new(vec![4, 4, 64], normals(&mut r, 1024)).unwrap();
        let (loss, _) = loss_and_grads(&m, &x0, &[1, 20, 50, 100], &eps, &s).unwrap();
        assert!((loss - 1.0).abs() < 0.1, "{loss}");
    }

    #[test]
    fn weight_gradient_matches_finite_difference() {
        let mut m = Denoiser::new(tiny_cfg(2), &mut rng::seeded(3)).unwrap();
        for (name, p) in &mut m.params {
            if name.starts_with("out.") {
                *p = p.map(|_| 0.2);
            }
        }
        let s = NoiseSchedule::linear(20);
        let mut r = rng::seeded(9);
        let x0 = Tensor::new(vec![2, 2, 8], normals(&mut r, 32)).unwrap();
        let eps = Tensor::new(vec![2, 2, 8], normals(&mut r, 32)).unwrap();
        let ts = [3, 17];
        let (_, grads) = loss_and_grads(&m, &x0, &ts, &eps, &s).unwrap();
        let loss_of = |m: &Denoiser| loss_and_grads(m, &x0, &ts, &eps, &s).unwrap().0;
        let mut checked = 0;
        #[allow(clippy::needless_range_loop)]
        for pi in 0..m.params.len() {
            for j in [0, m.params[pi].1.numel() / 2] {
                let g = grads[pi].data()[j];
                if g.abs() < 1e-6 {
                    continue;
                }
                let h = 1e-5;
                let mut plus = m.clone();
                plus.params[pi].1.data_mut()[j] += h;
                let mut minus = m.clone();
                minus.params[pi].1.data_mut()[j] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let rel = (fd - g).abs() / g.abs().max(1e-8);
                assert!(rel < 1e-4, "{} [{j}]: fd {fd} vs {g}", m.params[pi].0);
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn training_is_deterministic_and_checkpoint_roundtrips() {
        let corpus = generate_corpus(&SystemKind::Lorenz.spec(), 4, 16, 20, DEFAULT_DT, Condition::Id, 1).unwrap();
        let cfg = TrainConfig {
            steps: 5,
            batch: 2,
            seed: 11,
            ..Default::default()
        };
        let s = NoiseSchedule::linear(20);
        let run = || {
            let mut m = Denoiser::new(tiny_cfg(6), &mut rng::seeded(0)).unwrap();
            let curve = train(&mut m, &corpus, &s, &cfg, |_| {}).unwrap();
            (m, curve)
        };
        let (m1, c1) = run();
        let (m2, c2) = run();
        assert_eq!(c1, c2);
        assert_eq!(m1, m2);

        let ck = Checkpoint {
            system: SystemKind::Lorenz,
            dt: corpus.dt,
            model: m1,
            schedule: s,
            stats: corpus.stats.clone(),
            seq_len: 16,
            loss_curve: c1,
        };
        let back = Checkpoint::from_container(&Container::from_bytes(&ck.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), cfg.lr);
        assert!((cfg.lr_at(cfg.steps) - cfg.lr_min).abs() < 1e-18);
    }
}
