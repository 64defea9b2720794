//! The five benchmark chaotic systems.
//!
//! Each vector field is written once, generically over [`FieldValue`], so
//! the same definition drives plain `f64` integration and tape-recorded
//! guidance (where every state component is a column `Var` over time).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::EmbeddingConfig;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Lorenz,
    Rossler,
    Hyper5d,
    Lorenz96,
    Rabinovich,
}

impl SystemKind {
    pub const ALL: [SystemKind; 5] = [
        SystemKind::Lorenz,
        SystemKind::Rossler,
        SystemKind::Hyper5d,
        SystemKind::Lorenz96,
        SystemKind::Rabinovich,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Lorenz => "lorenz",
            SystemKind::Rossler => "rossler",
            SystemKind::Hyper5d => "hyper5d",
            SystemKind::Lorenz96 => "lorenz96",
            SystemKind::Rabinovich => "rabinovich",
        }
    }

    pub fn spec(self) -> SystemSpec {
        SystemSpec::new(self)
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownSystem(s.to_string()))
    }
}

/// Which parameter box to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Id,
    Ood,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Id => "id",
            Condition::Ood => "ood",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "id" => Ok(Condition::Id),
            "ood" => Ok(Condition::Ood),
            other => Err(Error::Invalid(format!("condition `{other}` (expected id|ood)"))),
        }
    }
}

/// Admissible values of one parameter: a union of disjoint closed bands.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRange {
    pub bands: Vec<(f64, f64)>,
}

impl ParamRange {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self { bands: vec![(lo, hi)] }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.bands.iter().any(|&(lo, hi)| lo <= v && v <= hi)
    }

    pub fn lo(&self) -> f64 {
        self.bands.iter().map(|b| b.0).fold(f64::INFINITY, f64::min)
    }

    pub fn hi(&self) -> f64 {
        self.bands.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Uniform draw over the union of bands.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let total: f64 = self.bands.iter().map(|(lo, hi)| hi - lo).sum();
        let mut u = rng.gen::<f64>() * total;
        for &(lo, hi) in &self.bands {
            let w = hi - lo;
            if u <= w {
                return lo + u;
            }
            u -= w;
        }
        let (lo, hi) = *self.bands.last().expect("non-empty range");
        lo + (hi - lo) * 0.5
    }

    /// Interiors intersect. Published ID and OOD ranges share endpoints,
    /// which does not count as overlap.
    fn overlaps(&self, other: &ParamRange) -> bool {
        self.bands.iter().any(|&(a0, a1)| {
            other.bands.iter().any(|&(b0, b1)| a0 < b1 && b0 < a1)
        })
    }
}

/// Physical parameters of one system instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub names: &'static [&'static str],
}

impl ParamVector {
    pub fn new(spec: &SystemSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_dim() {
            return Err(Error::Invalid(format!(
                "{} expects {} parameters, got {}",
                spec.kind,
                spec.param_dim(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            names: spec.param_names,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Static description of a benchmark system.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub state_dim: usize,
    pub param_names: &'static [&'static str],
    pub id_box: Vec<ParamRange>,
    pub ood_box: Vec<ParamRange>,
    /// True when the OOD box is a stand-in rather than a published range.
    pub ood_is_standin: bool,
    pub amplitude_bound: f64,
    pub lambda_base: f64,
    pub lyapunov: EmbeddingConfig,
    pub groundtruth_substeps: usize,
}

fn intervals(v: &[(f64, f64)]) -> Vec<ParamRange> {
    v.iter().map(|&(lo, hi)| ParamRange::interval(lo, hi)).collect()
}

/// ID interval widened by 20% of its width on each side, minus the
/// interval itself.
fn flanking_bands(lo: f64, hi: f64) -> ParamRange {
    let w = 0.2 * (hi - lo);
    ParamRange {
        bands: vec![(lo - w, lo), (hi, hi + w)],
    }
}

pub const LORENZ96_DIM: usize = 20;

impl SystemSpec {
    pub fn new(kind: SystemKind) -> Self {
        let emb = |m, tau, m_sep, tlen| EmbeddingConfig {
            m,
            tau,
            m_sep,
            tlen,
            n_windows: 3,
        };
        match kind {
            SystemKind::Lorenz => Self {
                kind,
                state_dim: 3,
                param_names: &["sigma", "rho", "beta"],
                id_box: intervals(&[(8.0, 12.0), (20.0, 35.0), (2.0, 4.0)]),
                ood_box: intervals(&[(5.0, 8.0), (15.0, 20.0), (1.5, 2.0)]),
                ood_is_standin: false,
                amplitude_bound: 500.0,
                lambda_base: 2.0,
                lyapunov: emb(3, 2, 25, 75),
                groundtruth_substeps: 10,
            },
            SystemKind::Rossler => Self {
                kind,
                state_dim: 3,
                param_names: &["a", "b", "c"],
                id_box: intervals(&[(0.15, 0.25), (0.15, 0.25), (5.0, 7.0)]),
                ood_box: intervals(&[(0.10, 0.15), (0.10, 0.15), (3.5, 5.0)]),
                ood_is_standin: false,
                amplitude_bound: 200.0,
                lambda_base: 2.0,
                lyapunov: emb(3, 1, 300, 300),
                groundtruth_substeps: 10,
            },
            SystemKind::Hyper5d => Self {
                kind,
                state_dim: 5,
                param_names: &["p1", "p2", "p3"],
                id_box: intervals(&[(8.0, 12.0), (20.0, 35.0), (2.0, 4.0)]),
                ood_box: vec![
                    flanking_bands(8.0, 12.0),
                    flanking_bands(20.0, 35.0),
                    flanking_bands(2.0, 4.0),
                ],
                ood_is_standin: true,
                amplitude_bound: 500.0,
                lambda_base: 1.5,
                lyapunov: emb(5, 2, 25, 75),
                groundtruth_substeps: 10,
            },
            SystemKind::Lorenz96 => Self {
                kind,
                state_dim: LORENZ96_DIM,
                param_names: &["F"],
                id_box: intervals(&[(7.0, 9.0)]),
                ood_box: intervals(&[(9.0, 11.0)]),
                ood_is_standin: false,
                amplitude_bound: 200.0,
                lambda_base: 0.1,
                lyapunov: emb(3, 2, 25, 75),
                groundtruth_substeps: 20,
            },
            SystemKind::Rabinovich => Self {
                kind,
                state_dim: 3,
                param_names: &["alpha", "gamma"],
                id_box: intervals(&[(0.10, 0.18), (0.07, 0.13)]),
                ood_box: intervals(&[(0.20, 0.30), (0.05, 0.09)]),
                ood_is_standin: false,
                amplitude_bound: 10.0,
                lambda_base: 0.5,
                lyapunov: emb(3, 5, 100, 100),
                groundtruth_substeps: 50,
            },
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(name.parse::<SystemKind>()?.spec())
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn param_dim(&self) -> usize {
        self.param_names.len()
    }

    /// Joint state + parameter channel count.
    pub fn channels(&self) -> usize {
        self.state_dim + self.param_dim()
    }

    pub fn param_box(&self, condition: Condition) -> &[ParamRange] {
        match condition {
            Condition::Id => &self.id_box,
            Condition::Ood => &self.ood_box,
        }
    }

    /// Whether the ID and OOD boxes are disjoint in at least one
    /// coordinate.
    pub fn boxes_disjoint(&self) -> bool {
        self.id_box
            .iter()
            .zip(&self.ood_box)
            .any(|(a, b)| !a.overlaps(b))
    }

    /// Textbook parameters where they exist, otherwise the ID box centre.
    pub fn canonical_params(&self) -> ParamVector {
        let values = match self.kind {
            SystemKind::Lorenz => vec![10.0, 28.0, 8.0 / 3.0],
            SystemKind::Rossler => vec![0.2, 0.2, 5.7],
            SystemKind::Lorenz96 => vec![8.0],
            _ => self.id_box.iter().map(|r| 0.5 * (r.lo() + r.hi())).collect(),
        };
        ParamVector {
            values,
            names: self.param_names,
        }
    }

    pub fn sample_params(&self, condition: Condition, rng: &mut impl Rng) -> ParamVector {
        ParamVector {
            values: self.param_box(condition).iter().map(|r| r.sample(rng)).collect(),
            names: self.param_names,
        }
    }

    /// Initial state drawn from the per-system seed box.
    pub fn initial_state(&self, params: &ParamVector, rng: &mut impl Rng) -> Vec<f64> {
        match self.kind {
            SystemKind::Lorenz | SystemKind::Hyper5d => {
                (0..self.state_dim).map(|_| rng.gen_range(-10.0..=10.0)).collect()
            }
            SystemKind::Rossler => (0..3).map(|_| rng.gen_range(-5.0..=5.0)).collect(),
            SystemKind::Lorenz96 => {
                let f = params.values[0];
                (0..self.state_dim).map(|_| f + rng.gen_range(-0.5..=0.5)).collect()
            }
            SystemKind::Rabinovich => vec![
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(0.1..=1.0),
            ],
        }
    }

    /// Vector field for one state (plain floats).
    pub fn field(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        vector_field(self.kind, x, p).expect("scalar arithmetic is infallible")
    }

    /// Vector field over `[..., D_s]`.
    pub fn eval_field(&self, state: &Tensor, params: &ParamVector) -> Result<Tensor> {
        let d = self.state_dim;
        if state.shape().last() != Some(&d) || params.len() != self.param_dim() {
            return Err(crate::error::shape_err(
                "eval_field",
                state.shape(),
                &[d, self.param_dim()],
            ));
        }
        let mut out = Vec::with_capacity(state.numel());
        for row in state.data().chunks(d) {
            out.extend(self.field(row, &params.values));
        }
        Tensor::new(state.shape().to_vec(), out)
    }

    /// Analytic Jacobian `df/dx` over `[..., D_s]`, giving `[..., D_s, D_s]`.
    pub fn eval_jacobian(&self, state: &Tensor, params: &ParamVector) -> Result<Tensor> {
        let d = self.state_dim;
        if state.shape().last() != Some(&d) {
            return Err(crate::error::shape_err("eval_jacobian", state.shape(), &[d]));
        }
        let mut out = Vec::with_capacity(state.numel() * d);
        for row in state.data().chunks(d) {
            out.extend(jacobian(self.kind, row, &params.values));
        }
        let mut shape = state.shape().to_vec();
        shape.push(d);
        Tensor::new(shape, out)
    }
}

/// Arithmetic needed to evaluate a polynomial vector field.
pub trait FieldValue: Clone {
    fn add(&self, o: &Self) -> Result<Self>;
    fn sub(&self, o: &Self) -> Result<Self>;
    fn mul(&self, o: &Self) -> Result<Self>;
    fn scale(&self, c: f64) -> Self;
    fn shift(&self, c: f64) -> Self;
}

impl FieldValue for f64 {
    #[inline]
    fn add(&self, o: &Self) -> Result<Self> {
        Ok(self + o)
    }
    #[inline]
    fn sub(&self, o: &Self) -> Result<Self> {
        Ok(self - o)
    }
    #[inline]
    fn mul(&self, o: &Self) -> Result<Self> {
        Ok(self * o)
    }
    #[inline]
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    #[inline]
    fn shift(&self, c: f64) -> Self {
        self + c
    }
}

impl<'t> FieldValue for Var<'t> {
    fn add(&self, o: &Self) -> Result<Self> {
        Var::add(self, *o)
    }
    fn sub(&self, o: &Self) -> Result<Self> {
        Var::sub(self, *o)
    }
    fn mul(&self, o: &Self) -> Result<Self> {
        Var::mul(self, *o)
    }
    fn scale(&self, c: f64) -> Self {
        self.mul_scalar(c)
    }
    fn shift(&self, c: f64) -> Self {
        self.add_scalar(c)
    }
}

/// `f(x, p)` for any [`FieldValue`]. `x` has one entry per state
/// component, `p` one per parameter.
pub fn vector_field<T: FieldValue>(kind: SystemKind, x: &[T], p: &[T]) -> Result<Vec<T>> {
    Ok(match kind {
        SystemKind::Lorenz => {
            let (sigma, rho, beta) = (&p[0], &p[1], &p[2]);
            vec![
                sigma.mul(&x[1].sub(&x[0])?)?,
                x[0].mul(&rho.sub(&x[2])?)?.sub(&x[1])?,
                x[0].mul(&x[1])?.sub(&beta.mul(&x[2])?)?,
            ]
        }
        SystemKind::Rossler => {
            let (a, b, c) = (&p[0], &p[1], &p[2]);
            vec![
                x[1].add(&x[2])?.scale(-1.0),
                x[0].add(&a.mul(&x[1])?)?,
                x[2].mul(&x[0].sub(c)?)?.add(b)?,
            ]
        }
        SystemKind::Hyper5d => {
            let (p1, p2, p3) = (&p[0], &p[1], &p[2]);
            let x1x3 = x[0].mul(&x[2])?;
            vec![
                p1.mul(&x[1].sub(&x[0])?)?.add(&x[3])?,
                p2.mul(&x[0])?.sub(&x[1])?.sub(&x1x3)?.add(&x[4])?,
                x[0].mul(&x[1])?.sub(&p3.mul(&x[2])?)?,
                x[3].scale(0.1).sub(&x1x3)?,
                x[4].scale(0.1).sub(&x[1].mul(&x[2])?)?,
            ]
        }
        SystemKind::Lorenz96 => {
            let n = x.len();
            let forcing = &p[0];
            (0..n)
                .map(|j| {
                    let next = &x[(j + 1) % n];
                    let prev = &x[(j + n - 1) % n];
                    let prev2 = &x[(j + n - 2) % n];
                    next.sub(prev2)?.mul(prev)?.sub(&x[j])?.add(forcing)
                })
                .collect::<Result<Vec<T>>>()?
        }
        SystemKind::Rabinovich => {
            let (alpha, gamma) = (&p[0], &p[1]);
            let xx = x[0].mul(&x[0])?;
            vec![
                x[1].mul(&x[2].shift(-1.0).add(&xx)?)?.add(&gamma.mul(&x[0])?)?,
                x[0].mul(&x[2].scale(3.0).shift(1.0).sub(&xx)?)?.add(&gamma.mul(&x[1])?)?,
                x[2].mul(&alpha.add(&x[0].mul(&x[1])?)?)?.scale(-2.0),
            ]
        }
    })
}

/// Analytic `df/dx`, row-major `D x D`.
pub fn jacobian(kind: SystemKind, x: &[f64], p: &[f64]) -> Vec<f64> {
    match kind {
        SystemKind::Lorenz => {
            let (s, r, b) = (p[0], p[1], p[2]);
            vec![
                -s, s, 0.0, //
                r - x[2], -1.0, -x[0], //
                x[1], x[0], -b,
            ]
        }
        SystemKind::Rossler => {
            let (a, c) = (p[0], p[2]);
            vec![
                0.0, -1.0, -1.0, //
                1.0, a, 0.0, //
                x[2], 0.0, x[0] - c,
            ]
        }
        SystemKind::Hyper5d => {
            let (p1, p2, p3) = (p[0], p[1], p[2]);
            vec![
                -p1, p1, 0.0, 1.0, 0.0, //
                p2 - x[2], -1.0, -x[0], 0.0, 1.0, //
                x[1], x[0], -p3, 0.0, 0.0, //
                -x[2], 0.0, -x[0], 0.1, 0.0, //
                0.0, -x[2], -x[1], 0.0, 0.1,
            ]
        }
        SystemKind::Lorenz96 => {
            let n = x.len();
            let mut j = vec![0.0; n * n];
            for i in 0..n {
                let next = (i + 1) % n;
                let prev = (i + n - 1) % n;
                let prev2 = (i + n - 2) % n;
                j[i * n + next] += x[prev];
                j[i * n + prev2] -= x[prev];
                j[i * n + prev] += x[next] - x[prev2];
                j[i * n + i] -= 1.0;
            }
            j
        }
        SystemKind::Rabinovich => {
            let (alpha, gamma) = (p[0], p[1]);
            let (xx, y, z) = (x[0], x[1], x[2]);
            vec![
                2.0 * xx * y + gamma, z - 1.0 + xx * xx, y, //
                3.0 * z + 1.0 - 3.0 * xx * xx, gamma, 3.0 * xx, //
                -2.0 * z * y, -2.0 * z * xx, -2.0 * (alpha + xx * y),
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lorenz_at_ones() {
        let spec = SystemKind::Lorenz.spec();
        let f = spec.field(&[1.0, 1.0, 1.0], &[10.0, 28.0, 8.0 / 3.0]);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 26.0);
        assert!((f[2] + 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lorenz96_at_rest_is_forcing() {
        let spec = SystemKind::Lorenz96.spec();
        let f = spec.field(&[0.0; 20], &[8.0]);
        assert!(f.iter().all(|&v| v == 8.0));
    }

    #[test]
    fn rabinovich_hand_evaluation() {
        // (1*(1-1+1)+0.1, 1*(3+1-1)+0.1, -2*(0.14+1))
        let f = SystemKind::Rabinovich.spec().field(&[1.0, 1.0, 1.0], &[0.14, 0.10]);
        let expect = [1.1, 3.1, -2.28];
        for (a, b) in f.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{f:?}");
        }
    }

    fn fd_jacobian(spec: &SystemSpec, x: &[f64], p: &[f64]) -> Vec<f64> {
        let d = x.len();
        let h = 1e-6;
        let mut j = vec![0.0; d * d];
        for c in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[c] += h;
            xm[c] -= h;
            let (fp, fm) = (spec.field(&xp, p), spec.field(&xm, p));
            for r in 0..d {
                j[r * d + c] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        j
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for kind in SystemKind::ALL {
            let spec = kind.spec();
            for _ in 0..20 {
                let p = spec.sample_params(Condition::Id, &mut rng);
                let x: Vec<f64> = (0..spec.state_dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let analytic = jacobian(kind, &x, &p.values);
                let numeric = fd_jacobian(&spec, &x, &p.values);
                for (a, n) in analytic.iter().zip(&numeric) {
                    let err = (a - n).abs() / n.abs().max(1.0);
                    assert!(err < 1e-6, "{kind}: {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn lorenz_jacobian_first_row_and_l96_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = SystemKind::Lorenz.spec();
        let p = spec.canonical_params();
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-20.0..20.0)).collect();
        assert_eq!(&jacobian(SystemKind::Lorenz, &x, &p.values)[..3], &[-10.0, 10.0, 0.0]);

        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let j = jacobian(SystemKind::Lorenz96, &x, &[8.0]);
        for i in 0..20 {
            assert_eq!(j[i * 20 + i], -1.0);
        }
    }

    #[test]
    fn lorenz_divergence_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = SystemKind::Lorenz.spec();
        for _ in 0..50 {
            let p = spec.sample_params(Condition::Id, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let j = jacobian(SystemKind::Lorenz, &x, &p.values);
            let div = j[0] + j[4] + j[8];
            let expect = -(p.values[0] + 1.0 + p.values[2]);
            assert!((div - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn lorenz96_is_rotation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = SystemKind::Lorenz96.spec();
        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let f = spec.field(&x, &[8.0]);
        for k in 1..20 {
            let mut xr = x.clone();
            xr.rotate_right(k);
            let mut fr = f.clone();
            fr.rotate_right(k);
            assert_eq!(spec.field(&xr, &[8.0]), fr);
        }
    }

    #[test]
    fn sampled_params_respect_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lorenz = SystemKind::Lorenz.spec();
        let rabi = SystemKind::Rabinovich.spec();
        for _ in 0..1000 {
            let p = lorenz.sample_params(Condition::Id, &mut rng);
            assert!((8.0..=12.0).contains(&p.values[0]));
            let q = rabi.sample_params(Condition::Ood, &mut rng);
            assert!((0.20..=0.30).contains(&q.values[0]));
            assert!((0.05..=0.09).contains(&q.values[1]));
        }
        for kind in SystemKind::ALL {
            let spec = kind.spec();
            for _ in 0..200 {
                let p = spec.sample_params(Condition::Ood, &mut rng);
                assert!(p.values.iter().zip(&spec.ood_box).all(|(v, r)| r.contains(*v)));
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let spec = SystemKind::Rossler.spec();
        let a = spec.sample_params(Condition::Id, &mut ChaCha8Rng::seed_from_u64(42));
        let b = spec.sample_params(Condition::Id, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn boxes_are_disjoint_and_positive() {
        for kind in SystemKind::ALL {
            let spec = kind.spec();
            assert!(spec.boxes_disjoint(), "{kind}");
            assert!(spec.amplitude_bound > 0.0 && spec.lambda_base >= 0.0);
        }
        // The Hyper5D stand-in never overlaps its ID box in any coordinate.
        let h = SystemKind::Hyper5d.spec();
        assert!(h.id_box.iter().zip(&h.ood_box).all(|(a, b)| !a.overlaps(b)));
    }

    #[test]
    fn tape_field_matches_scalar_field() {
        use crate::tensor::Tape;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for kind in SystemKind::ALL {
            let spec = kind.spec();
            let p = spec.sample_params(Condition::Id, &mut rng);
            let n = 4;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..spec.state_dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let tape = Tape::new();
            let cols: Vec<Var<'_>> = (0..spec.state_dim)
                .map(|c| tape.constant(Tensor::from_vec(rows.iter().map(|r| r[c]).collect())))
                .collect();
            let ps: Vec<Var<'_>> = p.values.iter().map(|&v| tape.scalar(v)).collect();
            let f = vector_field(kind, &cols, &ps).unwrap();
            for (i, row) in rows.iter().enumerate() {
                let expect = spec.field(row, &p.values);
                for c in 0..spec.state_dim {
                    assert_eq!(f[c].value().data()[i], expect[c]);
                }
            }
        }
    }

    #[test]
    fn names_parse() {
        for kind in SystemKind::ALL {
            assert_eq!(kind.name().parse::<SystemKind>().unwrap(), kind);
        }
        assert!("duffing".parse::<SystemKind>().is_err());
    }
}
