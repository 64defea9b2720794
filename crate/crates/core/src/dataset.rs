//! Trajectory corpora, channel-wise normalisation and sparse observations.
//!
//! A corpus packs the state and the (time-constant) parameters of each
//! trajectory into one `[D_s + D_p, L]` sequence, normalised per channel to
//! `[-1, 1]` with statistics taken from the training split.

use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::integrator::dp45_rollout;
use crate::rng::{self, substream};
use crate::store::Container;
use crate::systems::{Condition, ParamVector, SystemKind, SystemSpec};
use crate::tensor::{Tensor, Var};

pub const NORM_EPS: f64 = 1e-8;
pub const DEFAULT_DT: f64 = 0.05;
pub const DEFAULT_TRANSIENT: usize = 700;
pub const OBS_DENSITY: f64 = 0.10;
pub const OBS_SIGMA: f64 = 0.05;
const MAX_CONSECUTIVE_REJECTIONS: usize = 100;

/// Solver note stored with every corpus: the reference protocol used an
/// adaptive solver with step/tolerance limits; here every interval is split
/// into a fixed number of DP5 substeps.
pub const SOLVER_NOTE: &str = "fixed-step DP5 with per-system substeps instead of adaptive tolerances";

/// Named corpus sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorpusPreset {
    pub n_traj: usize,
    pub len: usize,
    pub transient: usize,
}

impl CorpusPreset {
    pub const DESK: Self = Self {
        n_traj: 64,
        len: 128,
        transient: DEFAULT_TRANSIENT,
    };
    pub const PAPER: Self = Self {
        n_traj: 1000,
        len: 1000,
        transient: DEFAULT_TRANSIENT,
    };

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "desk" => Ok(Self::DESK),
            "paper" => Ok(Self::PAPER),
            other => Err(Error::Config(format!("unknown preset `{other}` (desk|paper)"))),
        }
    }
}

/// Root directory for generated artifacts: `$PIDM_DATA_DIR` or `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("PIDM_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub z_min: Vec<f64>,
    pub z_max: Vec<f64>,
    pub eps: f64,
}

impl NormStats {
    /// Per-channel extrema of a raw `[N, C, L]` tensor.
    pub fn from_raw(raw: &Tensor) -> Result<Self> {
        let [n, c, l] = dims3(raw)?;
        let mut z_min = vec![f64::INFINITY; c];
        let mut z_max = vec![f64::NEG_INFINITY; c];
        let d = raw.data();
        for b in 0..n {
            for ch in 0..c {
                for &v in &d[(b * c + ch) * l..(b * c + ch + 1) * l] {
                    z_min[ch] = z_min[ch].min(v);
                    z_max[ch] = z_max[ch].max(v);
                }
            }
        }
        Ok(Self {
            z_min,
            z_max,
            eps: NORM_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.z_min.len()
    }

    fn span(&self, ch: usize) -> f64 {
        self.z_max[ch] - self.z_min[ch] + self.eps
    }

    pub fn normalize_value(&self, ch: usize, v: f64) -> f64 {
        2.0 * (v - self.z_min[ch]) / self.span(ch) - 1.0
    }

    pub fn denormalize_value(&self, ch: usize, v: f64) -> f64 {
        (v + 1.0) * 0.5 * self.span(ch) + self.z_min[ch]
    }

    /// Physical size of one normalised unit on channel `ch`.
    pub fn half_range(&self, ch: usize) -> f64 {
        0.5 * self.span(ch)
    }

    fn check(&self, t: &Tensor) -> Result<(usize, usize)> {
        let s = t.shape();
        if s.len() < 2 || s[s.len() - 2] != self.channels() {
            return Err(shape_err("normalize", s, &[self.channels(), 0]));
        }
        Ok((s[s.len() - 2], s[s.len() - 1]))
    }

    fn apply(&self, t: &Tensor, f: impl Fn(usize, f64) -> f64) -> Result<Tensor> {
        let (c, l) = self.check(t)?;
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f((i / l) % c, v))
            .collect();
        Tensor::new(t.shape().to_vec(), data)
    }

    /// Works on any `[..., C, L]` tensor.
    pub fn normalize(&self, raw: &Tensor) -> Result<Tensor> {
        self.apply(raw, |ch, v| self.normalize_value(ch, v))
    }

    pub fn denormalize(&self, norm: &Tensor) -> Result<Tensor> {
        self.apply(norm, |ch, v| self.denormalize_value(ch, v))
    }

    /// Differentiable denormalisation of the leading `channels` rows of a
    /// `[channels, L]` variable.
    pub fn denormalize_var<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        if s.len() != 2 || s[0] > self.channels() {
            return Err(shape_err("denormalize_var", &s, &[self.channels(), 0]));
        }
        let (c, l) = (s[0], s[1]);
        let scale = Tensor::from_fn(&[c, l], |i| 0.5 * self.span(i / l));
        let offset = Tensor::from_fn(&[c, l], |i| 0.5 * self.span(i / l) + self.z_min[i / l]);
        let tape = x.tape();
        x.mul(tape.constant(scale))?.add(tape.constant(offset))
    }

    pub fn to_tensors(&self) -> (Tensor, Tensor) {
        (Tensor::from_vec(self.z_min.clone()), Tensor::from_vec(self.z_max.clone()))
    }

    pub fn write_into(&self, c: &mut Container) {
        let (lo, hi) = self.to_tensors();
        c.push("z_min", lo);
        c.push("z_max", hi);
        c.set_meta("norm_eps", self.eps);
    }

    pub fn read_from(c: &Container) -> Result<Self> {
        let stats = Self {
            z_min: c.tensor("z_min")?.data().to_vec(),
            z_max: c.tensor("z_max")?.data().to_vec(),
            eps: c.meta_parse("norm_eps")?,
        };
        if stats.z_min.len() != stats.z_max.len() {
            return Err(Error::Format("z_min/z_max length mismatch".into()));
        }
        Ok(stats)
    }
}

fn dims3(t: &Tensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [a, b, c] => Ok([a, b, c]),
        ref s => Err(shape_err("expected [N, C, L]", s, &[0, 0, 0])),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusMeta {
    pub system: SystemKind,
    pub condition: Condition,
    pub substeps: usize,
    pub seed: u64,
    pub transient: usize,
    pub rejections: usize,
}

/// Normalised joint state/parameter sequences, `z: [N, D_s + D_p, L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    pub z: Tensor,
    pub dt: f64,
    pub meta: CorpusMeta,
    pub stats: NormStats,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.z.shape()[1]
    }

    pub fn seq_len(&self) -> usize {
        self.z.shape()[2]
    }

    pub fn spec(&self) -> SystemSpec {
        self.meta.system.spec()
    }

    /// Trajectory `i` as `[C, L]`.
    pub fn item(&self, i: usize) -> Tensor {
        let (c, l) = (self.channels(), self.seq_len());
        Tensor::new(vec![c, l], self.z.data()[i * c * l..(i + 1) * c * l].to_vec()).expect("same size")
    }

    /// Physical parameters of trajectory `i`, read from the first time step.
    pub fn params(&self, i: usize) -> ParamVector {
        let spec = self.spec();
        let (c, l) = (self.channels(), self.seq_len());
        let values = (spec.state_dim..c)
            .map(|ch| self.stats.denormalize_value(ch, self.z.data()[(i * c + ch) * l]))
            .collect();
        ParamVector::new(&spec, values).expect("channel count matches spec")
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("trajectories");
        c.set_meta("system", self.meta.system);
        c.set_meta("condition", self.meta.condition);
        c.set_meta("substeps", self.meta.substeps);
        c.set_meta("seed", self.meta.seed);
        c.set_meta("transient", self.meta.transient);
        c.set_meta("rejections", self.meta.rejections);
        c.set_meta("dt", self.dt);
        c.set_meta("solver", SOLVER_NOTE);
        self.stats.write_into(&mut c);
        c.push("z", self.z.clone());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("trajectories")?;
        let z = c.tensor("z")?.clone();
        let stats = NormStats::read_from(c)?;
        if z.ndim() != 3 || z.shape()[1] != stats.channels() {
            return Err(Error::Format(format!("corpus shape {:?} vs {} stat channels", z.shape(), stats.channels())));
        }
        Ok(Self {
            z,
            dt: c.meta_parse("dt")?,
            meta: CorpusMeta {
                system: c.meta_parse("system")?,
                condition: c.meta_parse("condition")?,
                substeps: c.meta_parse("substeps")?,
                seed: c.meta_parse("seed")?,
                transient: c.meta_parse("transient")?,
                rejections: c.meta_parse("rejections")?,
            },
            stats,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Raw (physical) corpus before normalisation.
#[derive(Clone, Debug)]
pub struct RawCorpus {
    pub z: Tensor,
    pub params: Vec<ParamVector>,
    pub rejections: usize,
}

/// One on-attractor trajectory packed as `[D_s + D_p, L]` in physical units.
pub fn simulate_one(
    spec: &SystemSpec,
    len: usize,
    transient: usize,
    dt: f64,
    condition: Condition,
    rng: &mut impl Rng,
) -> Result<(Tensor, ParamVector, usize)> {
    let mut rejected = 0;
    loop {
        let params = spec.sample_params(condition, rng);
        let x0 = spec.initial_state(&params, rng);
        match dp45_rollout(spec, &x0, &params, dt, transient + len - 1, spec.groundtruth_substeps) {
            Ok(traj) => {
                let d = spec.state_dim;
                let c = spec.channels();
                let rows = traj.data();
                let packed = Tensor::from_fn(&[c, len], |i| {
                    let (ch, t) = (i / len, i % len);
                    if ch < d {
                        rows[(transient + t) * d + ch]
                    } else {
                        params.values[ch - d]
                    }
                });
                return Ok((packed, params, rejected));
            }
            Err(Error::BoundExceeded { .. }) => {
                rejected += 1;
                if rejected > MAX_CONSECUTIVE_REJECTIONS {
                    return Err(Error::TooManyRejections(rejected));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Physical trajectories; trajectory `i` uses substream `i` of `seed`.
pub fn generate_raw(
    spec: &SystemSpec,
    n_traj: usize,
    len: usize,
    transient: usize,
    dt: f64,
    condition: Condition,
    seed: u64,
) -> Result<RawCorpus> {
    if len == 0 || transient == 0 {
        return Err(Error::Invalid("len and transient must be positive".into()));
    }
    let runs: Vec<_> = (0..n_traj)
        .into_par_iter()
        .map(|i| simulate_one(spec, len, transient, dt, condition, &mut substream(seed, i as u64)))
        .collect::<Result<_>>()?;
    let parts: Vec<&Tensor> = runs.iter().map(|(t, _, _)| t).collect();
    let z = if parts.is_empty() {
        Tensor::zeros(&[0, spec.channels(), len])
    } else {
        Tensor::concat(&parts, 0)?.reshape(&[n_traj, spec.channels(), len])?
    };
    Ok(RawCorpus {
        z,
        rejections: runs.iter().map(|r| r.2).sum(),
        params: runs.into_iter().map(|r| r.1).collect(),
    })
}

/// Training corpus normalised with its own statistics.
pub fn generate_corpus(
    spec: &SystemSpec,
    n_traj: usize,
    len: usize,
    transient: usize,
    dt: f64,
    condition: Condition,
    seed: u64,
) -> Result<TrajectorySet> {
    let raw = generate_raw(spec, n_traj, len, transient, dt, condition, seed)?;
    let stats = NormStats::from_raw(&raw.z)?;
    Ok(TrajectorySet {
        z: stats.normalize(&raw.z)?,
        dt,
        meta: CorpusMeta {
            system: spec.kind,
            condition,
            substeps: spec.groundtruth_substeps,
            seed,
            transient,
            rejections: raw.rejections,
        },
        stats,
    })
}

/// Sparse noisy observations of the state channels, in normalised units.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub mask: Vec<bool>,
    /// `[D_s, L]`; zero where unobserved.
    pub y: Tensor,
    pub noise_sigma: f64,
}

impl ObservationSet {
    pub fn indices(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.y.shape()[0]
    }

    /// `[D_s, L]` 0/1 mask.
    pub fn mask_tensor(&self) -> Tensor {
        let l = self.len();
        Tensor::from_fn(&[self.state_dim(), l], |i| if self.mask[i % l] { 1.0 } else { 0.0 })
    }
}

/// Observe the first `state_dim` rows of a normalised `[C, L]` trajectory at
/// `round(density * L)` uniformly drawn steps.
pub fn make_observations(
    traj: &Tensor,
    state_dim: usize,
    density: f64,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<ObservationSet> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Invalid(format!("observation density {density} not in (0, 1]")));
    }
    let s = traj.shape();
    if s.len() != 2 || s[0] < state_dim {
        return Err(shape_err("make_observations", s, &[state_dim, 0]));
    }
    let l = s[1];
    let k = ((density * l as f64).round() as usize).clamp(1, l);
    let mut mask = vec![false; l];
    let mut picked = sample_indices(rng, l, k).into_vec();
    picked.sort_unstable();
    for &i in &picked {
        mask[i] = true;
    }
    let mut y = Tensor::zeros(&[state_dim, l]);
    for d in 0..state_dim {
        for &t in &picked {
            let v = traj.data()[d * l + t] + sigma * rng::normal(rng);
            y.data_mut()[d * l + t] = v;
        }
    }
    Ok(ObservationSet {
        mask,
        y,
        noise_sigma: sigma,
    })
}

/// A reconstruction task: truth, observations and the statistics that map
/// both back to physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub system: SystemKind,
    pub dt: f64,
    /// Normalised `[C, L]` ground truth, parameter rows included.
    pub truth: Tensor,
    pub obs: ObservationSet,
    pub stats: NormStats,
}

impl Scenario {
    pub fn spec(&self) -> SystemSpec {
        self.system.spec()
    }

    pub fn true_params(&self) -> ParamVector {
        let spec = self.spec();
        let l = self.truth.shape()[1];
        let values = (spec.state_dim..spec.channels())
            .map(|ch| self.stats.denormalize_value(ch, self.truth.data()[ch * l]))
            .collect();
        ParamVector::new(&spec, values).expect("channel count matches spec")
    }

    /// Physical ground-truth states `[L, D_s]`.
    pub fn truth_states(&self) -> Result<Tensor> {
        let d = self.spec().state_dim;
        let phys = self.stats.denormalize(&self.truth)?;
        phys.slice_axis(0, 0, d)?.transpose2()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("scenario");
        c.set_meta("system", self.system);
        c.set_meta("dt", self.dt);
        c.set_meta("noise_sigma", self.obs.noise_sigma);
        self.stats.write_into(&mut c);
        c.push("truth", self.truth.clone());
        c.push("y", self.obs.y.clone());
        c.push(
            "mask",
            Tensor::from_vec(self.obs.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()),
        );
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("scenario")?;
        Ok(Self {
            system: c.meta_parse("system")?,
            dt: c.meta_parse("dt")?,
            truth: c.tensor("truth")?.clone(),
            obs: ObservationSet {
                mask: c.tensor("mask")?.data().iter().map(|&v| v != 0.0).collect(),
                y: c.tensor("y")?.clone(),
                noise_sigma: c.meta_parse("noise_sigma")?,
            },
            stats: NormStats::read_from(c)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Build a scenario from a physical `[C, L]` trajectory, normalised with
/// `stats` (which need not cover it).
pub fn scenario_from_raw(
    spec: &SystemSpec,
    raw: &Tensor,
    stats: &NormStats,
    dt: f64,
    density: f64,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Scenario> {
    let truth = stats.normalize(raw)?;
    let obs = make_observations(&truth, spec.state_dim, density, sigma, rng)?;
    Ok(Scenario {
        system: spec.kind,
        dt,
        truth,
        obs,
        stats: stats.clone(),
    })
}

/// A reconstructed trajectory in physical units, as written by samplers and
/// filters.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub system: SystemKind,
    pub dt: f64,
    pub method: String,
    /// `[L, D_s]`.
    pub states: Tensor,
    /// Pooled parameter estimate, when the method produces one.
    pub params: Option<Vec<f64>>,
}

impl Reconstruction {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("reconstruction");
        c.set_meta("system", self.system);
        c.set_meta("dt", self.dt);
        c.set_meta("method", &self.method);
        c.push("states", self.states.clone());
        if let Some(p) = &self.params {
            c.push("params", Tensor::from_vec(p.clone()));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("reconstruction")?;
        Ok(Self {
            system: c.meta_parse("system")?,
            dt: c.meta_parse("dt")?,
            method: c.meta("method")?.to_string(),
            states: c.tensor("states")?.clone(),
            params: c.tensor("params").ok().map(|t| t.data().to_vec()),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Physical `[L, D_s]` states from any trajectory-bearing file: a
/// reconstruction, a scenario's ground truth, or the first corpus entry.
pub fn load_states(path: impl AsRef<Path>) -> Result<(SystemKind, f64, Tensor)> {
    let c = Container::load(path)?;
    match c.kind.as_str() {
        "reconstruction" => {
            let r = Reconstruction::from_container(&c)?;
            Ok((r.system, r.dt, r.states))
        }
        "scenario" => {
            let s = Scenario::from_container(&c)?;
            Ok((s.system, s.dt, s.truth_states()?))
        }
        "trajectories" => {
            let set = TrajectorySet::from_container(&c)?;
            let d = set.spec().state_dim;
            let phys = set.stats.denormalize(&set.item(0))?;
            Ok((set.meta.system, set.dt, phys.slice_axis(0, 0, d)?.transpose2()?))
        }
        other => Err(Error::Format(format!("`{other}` files carry no trajectory"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(kind: SystemKind, n: usize, seed: u64) -> TrajectorySet {
        generate_corpus(&kind.spec(), n, 32, 50, DEFAULT_DT, Condition::Id, seed).unwrap()
    }

    #[test]
    fn desk_lorenz_corpus_is_normalised() {
        let p = CorpusPreset::DESK;
        let set = generate_corpus(&SystemKind::Lorenz.spec(), p.n_traj, p.len, p.transient, DEFAULT_DT, Condition::Id, 42)
            .unwrap();
        assert_eq!(set.z.shape(), &[64, 6, 128]);
        let tol = 1e-7;
        assert!(set.z.data().iter().all(|v| (-1.0 - tol..=1.0 + tol).contains(v)));
        for ch in 0..6 {
            assert!(set.stats.z_max[ch] >= set.stats.z_min[ch]);
        }
        let spec = set.spec();
        for i in 0..set.len() {
            assert!(spec.id_box.iter().zip(&set.params(i).values).all(|(r, &v)| r.contains(v) || (v - r.lo()).abs() < 1e-9 || (v - r.hi()).abs() < 1e-9));
        }
    }

    #[test]
    fn reconstruction_round_trips_through_load_states() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.pidm");
        let r = Reconstruction {
            system: SystemKind::Rossler,
            dt: 0.05,
            method: "enkf".into(),
            states: Tensor::from_fn(&[8, 3], |i| i as f64 * 0.25),
            params: None,
        };
        r.save(&path).unwrap();
        assert_eq!(Reconstruction::load(&path).unwrap(), r);
        let (kind, dt, states) = load_states(&path).unwrap();
        assert_eq!((kind, dt), (SystemKind::Rossler, 0.05));
        assert_eq!(states, r.states);
    }

    #[test]
    fn parameter_channels_are_constant() {
        for kind in SystemKind::ALL {
            let set = small(kind, 3, 1);
            let (c, l) = (set.channels(), set.seq_len());
            let d = set.spec().state_dim;
            for b in 0..set.len() {
                for ch in d..c {
                    let row = &set.z.data()[(b * c + ch) * l..(b * c + ch + 1) * l];
                    assert!(row.iter().all(|&v| v == row[0]));
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = small(SystemKind::Lorenz, 4, 42);
        let b = small(SystemKind::Lorenz, 4, 42);
        assert_eq!(a, b);
        assert_ne!(a.z, small(SystemKind::Lorenz, 4, 43).z);
    }

    #[test]
    fn all_id_boxes_terminate_at_desk_scale() {
        for kind in SystemKind::ALL {
            let set = generate_corpus(&kind.spec(), 8, 128, DEFAULT_TRANSIENT, DEFAULT_DT, Condition::Id, 5).unwrap();
            assert!(set.z.is_finite(), "{kind}");
        }
    }

    #[test]
    fn normalisation_endpoints() {
        let stats = NormStats {
            z_min: vec![-10.0],
            z_max: vec![10.0],
            eps: NORM_EPS,
        };
        assert!(stats.normalize_value(0, 0.0).abs() < 1e-9);
        assert!((stats.normalize_value(0, -10.0) + 1.0).abs() < 1e-12);
        assert!((stats.normalize_value(0, 10.0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn denormalize_var_matches_plain() {
        let stats = NormStats {
            z_min: vec![-3.0, 0.5, 7.0],
            z_max: vec![4.0, 0.9, 7.0],
            eps: NORM_EPS,
        };
        let x = Tensor::from_fn(&[2, 5], |i| (i as f64 * 0.37).sin());
        let tape = crate::tensor::Tape::new();
        let leaf = tape.leaf(x.clone());
        let v = stats.denormalize_var(leaf).unwrap();
        let plain = stats.denormalize(&Tensor::concat(&[&x, &Tensor::zeros(&[1, 5])], 0).unwrap()).unwrap();
        for i in 0..10 {
            assert!((v.value().data()[i] - plain.data()[i]).abs() < 1e-12);
        }
        let g = tape.backward(v.sum()).unwrap();
        let gx = g.wrt(leaf);
        assert!((gx.data()[0] - stats.half_range(0)).abs() < 1e-12);
        assert!((gx.data()[7] - stats.half_range(1)).abs() < 1e-12);
    }

    #[test]
    fn observation_counts_and_exactness() {
        let mut r = rng::seeded(3);
        let traj = Tensor::from_fn(&[4, 1000], |i| (i as f64).sin());
        let obs = make_observations(&traj, 3, 0.10, 0.05, &mut r).unwrap();
        assert_eq!(obs.count(), 100);
        let clean = make_observations(&traj, 3, 0.10, 0.0, &mut r).unwrap();
        for t in clean.indices() {
            for d in 0..3 {
                assert_eq!(clean.y.data()[d * 1000 + t], traj.data()[d * 1000 + t]);
            }
        }
        let full = make_observations(&traj, 3, 1.0, 0.0, &mut r).unwrap();
        assert!(full.mask.iter().all(|&m| m));
        assert!(make_observations(&traj, 3, 0.0, 0.0, &mut r).is_err());
    }

    #[test]
    fn observation_noise_has_requested_std() {
        let mut r = rng::seeded(11);
        let traj = Tensor::zeros(&[3, 500]);
        let mut acc = Vec::new();
        for _ in 0..40 {
            let obs = make_observations(&traj, 3, 0.5, 0.05, &mut r).unwrap();
            for t in obs.indices() {
                for d in 0..3 {
                    acc.push(obs.y.data()[d * 500 + t]);
                }
            }
        }
        let n = acc.len() as f64;
        let mean = acc.iter().sum::<f64>() / n;
        let sd = (acc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.05).abs() < 0.005, "sd {sd}");
    }

    #[test]
    fn corpus_store_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pidm");
        let set = small(SystemKind::Rossler, 3, 9);
        set.save(&path).unwrap();
        let back = TrajectorySet::load(&path).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.stats, set.stats);
    }

    #[test]
    fn scenario_roundtrip() {
        let set = small(SystemKind::Lorenz, 2, 4);
        let spec = set.spec();
        let raw = set.stats.denormalize(&set.item(1)).unwrap();
        let sc = scenario_from_raw(&spec, &raw, &set.stats, set.dt, 0.1, 0.05, &mut rng::seeded(1)).unwrap();
        let back = Scenario::from_container(&Container::from_bytes(&sc.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, sc);
        let p = back.true_params();
        for (a, b) in p.values.iter().zip(&set.params(1).values) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(back.truth_states().unwrap().shape(), &[32, 3]);
    }

    proptest! {
        #[test]
        fn roundtrip_is_tight(
            lo in prop::collection::vec(-50.0f64..50.0, 3),
            width in prop::collection::vec(0.0f64..100.0, 3),
            vals in prop::collection::vec(-2.0f64..2.0, 3 * 7),
        ) {
            let stats = NormStats {
                z_min: lo.clone(),
                z_max: lo.iter().zip(&width).map(|(a, w)| a + w).collect(),
                eps: NORM_EPS,
            };
            let raw = Tensor::new(vec![3, 7], vals.iter().enumerate().map(|(i, v)| stats.z_min[i / 7] + v * width[i / 7]).collect()).unwrap();
            let back = stats.denormalize(&stats.normalize(&raw).unwrap()).unwrap();
            for (a, b) in back.data().iter().zip(raw.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
