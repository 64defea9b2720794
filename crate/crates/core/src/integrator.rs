//! Fixed-step six-stage Dormand–Prince fifth-order integration.
//!
//! One stage combinator, [`dp5_combine`], serves plain floats and tape
//! variables alike, so the guidance path differentiates the exact same
//! arithmetic that generates ground truth.

use crate::error::{Error, Result};
use crate::systems::{vector_field, FieldValue, ParamVector, SystemKind, SystemSpec};
use crate::tensor::{Tensor, Var};

/// Explicit Runge–Kutta coefficients. `a[i][j]` is used for `j < i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ButcherTableau {
    pub c: [f64; 6],
    pub a: [[f64; 6]; 6],
    pub b: [f64; 6],
}

/// Dormand–Prince 5(4) stages 1–6 with the fifth-order weights.
pub const DP5: ButcherTableau = ButcherTableau {
    c: [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0],
    a: [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
    ],
    b: [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
};

impl ButcherTableau {
    /// `max_i |sum_j a_ij - c_i|`.
    pub fn row_sum_residual(&self) -> f64 {
        (0..6)
            .map(|i| {
                let s: f64 = self.a[i][..i].iter().sum();
                (s - self.c[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn weight_sum_residual(&self) -> f64 {
        (self.b.iter().sum::<f64>() - 1.0).abs()
    }
}

/// One DP5 step of an autonomous field `f` from `x` with step `dt`.
pub fn dp5_combine<T: FieldValue>(
    x: &[T],
    dt: f64,
    mut f: impl FnMut(&[T]) -> Result<Vec<T>>,
) -> Result<Vec<T>> {
    let t = &DP5;
    let mut stages: Vec<Vec<T>> = Vec::with_capacity(6);
    stages.push(f(x)?);
    for i in 1..6 {
        let probe = x
            .iter()
            .enumerate()
            .map(|(d, xd)| {
                let incr = weighted_sum(&stages, &t.a[i][..i], d)?;
                xd.add(&incr.scale(dt))
            })
            .collect::<Result<Vec<T>>>()?;
        stages.push(f(&probe)?);
    }
    x.iter()
        .enumerate()
        .map(|(d, xd)| {
            let incr = weighted_sum(&stages, &t.b, d)?;
            xd.add(&incr.scale(dt))
        })
        .collect()
}

/// `sum_j w_j * stages[j][d]`, skipping zero weights.
fn weighted_sum<T: FieldValue>(stages: &[Vec<T>], w: &[f64], d: usize) -> Result<T> {
    let mut acc: Option<T> = None;
    for (k, &wk) in stages.iter().zip(w) {
        if wk == 0.0 {
            continue;
        }
        let term = k[d].scale(wk);
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    Ok(acc.unwrap_or_else(|| stages[0][d].scale(0.0)))
}

/// Single-state step in plain floats.
pub fn dp45_step_state(kind: SystemKind, x: &[f64], p: &[f64], dt: f64) -> Vec<f64> {
    dp5_combine(x, dt, |s| vector_field(kind, s, p)).expect("scalar arithmetic is infallible")
}

/// One step for every row of `[..., D_s]`.
pub fn dp45_step(spec: &SystemSpec, state: &Tensor, params: &ParamVector, dt: f64) -> Result<Tensor> {
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::Invalid(format!("step size {dt}")));
    }
    let d = spec.state_dim;
    if state.shape().last() != Some(&d) {
        return Err(crate::error::shape_err("dp45_step", state.shape(), &[d]));
    }
    let mut out = Vec::with_capacity(state.numel());
    for row in state.data().chunks(d) {
        out.extend(dp45_step_state(spec.kind, row, &params.values, dt));
    }
    let t = Tensor::new(state.shape().to_vec(), out)?;
    if !t.is_finite() {
        return Err(Error::NonFinite("dp45 stage"));
    }
    Ok(t)
}

/// Tape-recorded step. `cols[d]` holds component `d` of every state in the
/// batch; `params` are single-element vars broadcast over the batch.
pub fn dp45_step_var<'t>(
    kind: SystemKind,
    cols: &[Var<'t>],
    params: &[Var<'t>],
    dt: f64,
) -> Result<Vec<Var<'t>>> {
    let out = dp5_combine(cols, dt, |s| vector_field(kind, s, params))?;
    if out.iter().any(|v| !v.value().is_finite()) {
        return Err(Error::NonFinite("dp45 stage"));
    }
    Ok(out)
}

/// Trajectory sampled every `dt`, each interval covered by `substeps`
/// DP5 steps. Returns `[n_steps + 1, D_s]` including `x0`.
pub fn dp45_rollout(
    spec: &SystemSpec,
    x0: &[f64],
    params: &ParamVector,
    dt: f64,
    n_steps: usize,
    substeps: usize,
) -> Result<Tensor> {
    if substeps == 0 {
        return Err(Error::Invalid("substeps must be >= 1".into()));
    }
    if x0.len() != spec.state_dim {
        return Err(crate::error::shape_err("dp45_rollout", &[x0.len()], &[spec.state_dim]));
    }
    let h = dt / substeps as f64;
    let mut data = Vec::with_capacity((n_steps + 1) * spec.state_dim);
    data.extend_from_slice(x0);
    let mut x = x0.to_vec();
    for step in 1..=n_steps {
        for _ in 0..substeps {
            x = dp45_step_state(spec.kind, &x, &params.values, h);
        }
        let mag = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !mag.is_finite() || mag > spec.amplitude_bound {
            return Err(Error::BoundExceeded {
                step,
                magnitude: mag,
                bound: spec.amplitude_bound,
            });
        }
        data.extend_from_slice(&x);
    }
    Tensor::new(vec![n_steps + 1, spec.state_dim], data)
}

/// Integrate `f` from `x0` over `horizon` with `n` equal DP5 steps.
pub fn integrate_fn(x0: &[f64], horizon: f64, n: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let h = horizon / n as f64;
    let mut x = x0.to_vec();
    for _ in 0..n {
        x = dp5_combine(&x, h, |s| Ok(f(s))).expect("scalar arithmetic is infallible");
    }
    x
}

/// Empirical global order of accuracy for field `f` over `horizon`.
///
/// Errors at steps `h`, `h/2`, `h/4` with `h = horizon / 10` are taken
/// against an `h/64` reference; the result is the mean of the two
/// successive `log2` error ratios.
pub fn convergence_order_fn(x0: &[f64], horizon: f64, f: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let base = 10;
    let reference = integrate_fn(x0, horizon, base * 64, &f);
    let err = |n: usize| {
        let x = integrate_fn(x0, horizon, n, &f);
        x.iter()
            .zip(&reference)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let (e1, e2, e4) = (err(base), err(base * 2), err(base * 4));
    0.5 * ((e1 / e2).log2() + (e2 / e4).log2())
}

pub fn convergence_order(spec: &SystemSpec, x0: &[f64], params: &ParamVector, horizon: f64) -> f64 {
    let kind = spec.kind;
    let p = params.values.clone();
    convergence_order_fn(x0, horizon, move |s| {
        vector_field(kind, s, &p).expect("scalar arithmetic is infallible")
    })
}
