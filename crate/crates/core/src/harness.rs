//! Paired multi-trial experiments and the physics-weight ablation sweep.
//!
//! Experiments are described by a plain `key = value` text file. Blank lines
//! and anything after `#` are ignored. Recognised keys:
//!
//! ```text
//! system     = lorenz           # lorenz | rossler | hyper5d | lorenz96 | rabinovich
//! condition  = id               # id | ood
//! preset     = desk             # desk | paper (trajectory length, default trial count)
//! n_trials   = 5
//! methods    = pidm,pure_ai,enkf
//! seed       = 0
//! lambda     = 0.5              # physics weight for pidm; defaults per system
//! lambdas    = 0,0.5,1,2,5      # sweep used by `ablate`
//! model      = lorenz.pidmw     # denoiser checkpoint, needed by pidm and pure_ai
//! out_dir    = results
//! name       = lorenz_id        # file stem for outputs
//! lyapunov   = false            # also estimate lambda_max per reconstruction
//! ```
//!
//! Relative `model` and `out_dir` paths resolve against the config file's
//! directory when loaded with [`ExperimentConfig::load`].
//!
//! Every trial draws three counter-based substreams of the master seed: one
//! for the ground truth and observations, one shared by `pidm` and `pure_ai`
//! so the two differ only by guidance, and one for the filter.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{generate_corpus, scenario_from_raw, simulate_one, CorpusPreset, NormStats, Scenario, DEFAULT_DT, OBS_DENSITY, OBS_SIGMA};
use crate::diffusion::Checkpoint;
use crate::enkf::{run_filter, EnkfConfig, PhysicalObservations};
use crate::error::{Error, Result};
use crate::guidance::{sample, GuidanceConfig};
use crate::lyapunov::rosenstein_mle;
use crate::metrics::{mape, mean_std, rmse, wilcoxon_signed_rank, WilcoxonResult, SANITIZE_FILL};
use crate::rng::substream;
use crate::store::write_atomic;
use crate::systems::{Condition, SystemKind, SystemSpec};
use crate::tensor::Tensor;

/// Trajectories used for normalisation when no checkpoint supplies them.
const REFERENCE_CORPUS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pidm,
    PureAi,
    Enkf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pidm, Method::PureAi, Method::Enkf];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pidm => "pidm",
            Method::PureAi => "pure_ai",
            Method::Enkf => "enkf",
        }
    }

    fn needs_model(self) -> bool {
        self != Method::Enkf
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "pidm" | "pidm_dp" => Ok(Method::Pidm),
            "pure_ai" | "ddpm" => Ok(Method::PureAi),
            "enkf" => Ok(Method::Enkf),
            other => Err(Error::Config(format!("unknown method `{other}` (pidm|pure_ai|enkf)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    pub condition: Condition,
    pub preset: String,
    pub n_trials: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Physics weight for `pidm`; `None` uses the per-system default.
    pub lambda: Option<f64>,
    pub lambda_sweep: Option<Vec<f64>>,
    pub model: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub name: Option<String>,
    pub lyapunov: bool,
}

impl ExperimentConfig {
    pub fn new(system: SystemKind) -> Self {
        Self {
            system,
            condition: Condition::Id,
            preset: "desk".into(),
            n_trials: 5,
            methods: Method::ALL.to_vec(),
            seed: 0,
            lambda: None,
            lambda_sweep: None,
            model: None,
            out_dir: PathBuf::from("results"),
            name: None,
            lyapunov: false,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim().to_ascii_lowercase();
            if kv.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", no + 1)));
            }
        }
        let system: SystemKind = kv
            .remove("system")
            .ok_or_else(|| Error::Config("missing key `system`".into()))?
            .parse()?;
        let mut cfg = Self::new(system);
        let mut trials_given = false;
        for (k, v) in kv {
            let bad = |what: &str| Error::Config(format!("`{k}`: expected {what}, got `{v}`"));
            match k.as_str() {
                "condition" => cfg.condition = v.parse()?,
                "preset" => {
                    CorpusPreset::by_name(&v)?;
                    cfg.preset = v.to_ascii_lowercase();
                }
                "n_trials" => {
                    cfg.n_trials = v.parse().map_err(|_| bad("an integer"))?;
                    trials_given = true;
                }
                "methods" => cfg.methods = parse_list(&v, |s| s.parse::<Method>())?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad("an integer"))?,
                "lambda" | "lambda_base" => cfg.lambda = Some(v.parse().map_err(|_| bad("a number"))?),
                "lambdas" | "lambda_sweep" => {
                    cfg.lambda_sweep = Some(parse_list(&v, |s| s.parse::<f64>().map_err(|_| bad("numbers")))?)
                }
                "model" => cfg.model = Some(PathBuf::from(v)),
                "out_dir" => cfg.out_dir = PathBuf::from(v),
                "name" => cfg.name = Some(v),
                "lyapunov" => cfg.lyapunov = v.parse().map_err(|_| bad("true or false"))?,
                _ => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        if !trials_given && cfg.preset == "paper" {
            cfg.n_trials = 30;
        }
        cfg.methods.sort();
        cfg.methods.dedup();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(m) = cfg.model.take() {
            cfg.model = Some(base.join(m));
        }
        cfg.out_dir = base.join(&cfg.out_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        let lambdas = self.lambda.iter().chain(self.lambda_sweep.iter().flatten());
        if lambdas.clone().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config("physics weights must be finite and non-negative".into()));
        }
        if self.lambda_sweep.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(Error::Config("lambda sweep is empty".into()));
        }
        CorpusPreset::by_name(&self.preset)?;
        Ok(())
    }

    pub fn spec(&self) -> SystemSpec {
        self.system.spec()
    }

    pub fn lambda_or_default(&self) -> f64 {
        self.lambda.unwrap_or(self.spec().lambda_base)
    }

    /// File stem for the outputs.
    pub fn stem(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}_{}", self.system, self.condition))
    }

    pub fn needs_model(&self) -> bool {
        self.methods.iter().any(|m| m.needs_model())
    }
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

/// One method's result on one trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodOutcome {
    pub rmse: f64,
    /// Per-parameter percentage error, when the method estimates parameters.
    pub mape: Option<Vec<f64>>,
    pub lambda_max: Option<f64>,
    /// Guidance steps that fell back to the unguided update.
    pub fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub true_params: Vec<f64>,
    /// Keyed by method; an aborted trial has every method at the sanitisation fill.
    pub outcomes: BTreeMap<Method, MethodOutcome>,
    pub truth_lambda_max: Option<f64>,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn aborted(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub mape_mean: Option<Vec<f64>>,
    pub lambda_max_mean: Option<f64>,
    pub fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairTest {
    pub a: Method,
    pub b: Method,
    pub result: Option<WilcoxonResult>,
    /// Why no test was run (too few trials, identical samples).
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub system: SystemKind,
    pub condition: Condition,
    pub seed: u64,
    pub n_trials: usize,
    pub lambda: f64,
    pub param_names: Vec<String>,
    pub methods: Vec<Method>,
    pub trials: Vec<TrialRecord>,
    pub summary: BTreeMap<Method, MethodSummary>,
    pub wilcoxon: Vec<PairTest>,
    pub aborted: usize,
    pub runtime_seconds: f64,
}

impl ExperimentResult {
    pub fn rmse_column(&self, m: Method) -> Vec<f64> {
        self.trials.iter().map(|t| t.outcomes[&m].rmse).collect()
    }
}

/// True parameters, per-method outcomes and the truth's λ_max.
type TrialParts = (Vec<f64>, BTreeMap<Method, MethodOutcome>, Option<f64>);

/// Everything a trial needs apart from its index.
struct Bench<'a> {
    cfg: &'a ExperimentConfig,
    spec: SystemSpec,
    ckpt: Option<&'a Checkpoint>,
    stats: NormStats,
    len: usize,
    transient: usize,
    dt: f64,
    lambda: f64,
}

impl<'a> Bench<'a> {
    fn new(cfg: &'a ExperimentConfig, ckpt: Option<&'a Checkpoint>) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.spec();
        let preset = CorpusPreset::by_name(&cfg.preset)?;
        if cfg.needs_model() && ckpt.is_none() {
            return Err(Error::Config("methods pidm and pure_ai need a model checkpoint".into()));
        }
        let (stats, len, dt) = match ckpt {
            Some(ck) => {
                if ck.system != cfg.system {
                    return Err(Error::Config(format!("checkpoint is for {}, experiment is {}", ck.system, cfg.system)));
                }
                if ck.seq_len != preset.len {
                    return Err(Error::Config(format!(
                        "checkpoint trained on length {}, preset `{}` uses {}",
                        ck.seq_len, cfg.preset, preset.len
                    )));
                }
                (ck.stats.clone(), ck.seq_len, ck.dt)
            }
            None => {
                let reference =
                    generate_corpus(&spec, REFERENCE_CORPUS, preset.len, preset.transient, DEFAULT_DT, Condition::Id, cfg.seed)?;
                (reference.stats, preset.len, DEFAULT_DT)
            }
        };
        Ok(Self {
            cfg,
            spec,
            ckpt,
            stats,
            len,
            transient: preset.transient,
            dt,
            lambda: cfg.lambda_or_default(),
        })
    }

    fn scenario(&self, trial: usize) -> Result<Scenario> {
        let mut rng = substream(self.cfg.seed, 3 * trial as u64);
        let (raw, _, _) = simulate_one(&self.spec, self.len, self.transient, self.dt, self.cfg.condition, &mut rng)?;
        scenario_from_raw(&self.spec, &raw, &self.stats, self.dt, OBS_DENSITY, OBS_SIGMA, &mut rng)
    }

    fn lyap(&self, states: &Tensor) -> Option<f64> {
        if !self.cfg.lyapunov {
            return None;
        }
        rosenstein_mle(states, self.dt, &self.spec.lyapunov).ok().map(|e| e.lambda_max).filter(|v| v.is_finite())
    }

    fn diffusion(&self, sc: &Scenario, truth: &Tensor, trial: usize, lambda: f64) -> Result<MethodOutcome> {
        let ck = self.ckpt.expect("checked in Bench::new");
        let gcfg = GuidanceConfig::for_system(&self.spec).with_lambda(lambda);
        let mut rng = substream(self.cfg.seed, 3 * trial as u64 + 1);
        let out = sample(&ck.model, &ck.schedule, &self.spec, &self.stats, &sc.obs, self.dt, &gcfg, &mut rng)?;
        let phys = self.stats.denormalize(&out.x0_hat)?;
        let d = self.spec.state_dim;
        let states = phys.slice_axis(0, 0, d)?.transpose2()?;
        let params = phys.slice_axis(0, d, self.spec.channels())?;
        Ok(MethodOutcome {
            rmse: rmse(&states, truth)?,
            mape: Some(mape(&params, &sc.true_params().values)?),
            lambda_max: self.lyap(&states),
            fallbacks: out.fallback_count,
        })
    }

    fn enkf(&self, sc: &Scenario, truth: &Tensor, trial: usize) -> Result<MethodOutcome> {
        let mut rng = substream(self.cfg.seed, 3 * trial as u64 + 2);
        let obs = PhysicalObservations::from_scenario(sc)?;
        let ecfg = EnkfConfig::for_system(&self.spec);
        let x0 = &truth.data()[..self.spec.state_dim];
        let out = run_filter(&self.spec, &obs, x0, &sc.true_params(), &ecfg, &mut rng)?;
        Ok(MethodOutcome {
            rmse: rmse(&out.mean, truth)?,
            mape: None,
            lambda_max: self.lyap(&out.mean),
            fallbacks: 0,
        })
    }

    fn run_method(&self, m: Method, sc: &Scenario, truth: &Tensor, trial: usize) -> Result<MethodOutcome> {
        match m {
            Method::Pidm => self.diffusion(sc, truth, trial, self.lambda),
            Method::PureAi => self.diffusion(sc, truth, trial, 0.0),
            Method::Enkf => self.enkf(sc, truth, trial),
        }
    }

    fn try_trial(&self, trial: usize) -> Result<TrialParts> {
        let sc = self.scenario(trial)?;
        let truth = sc.truth_states()?;
        let outcomes = self
            .cfg
            .methods
            .iter()
            .map(|&m| Ok((m, self.run_method(m, &sc, &truth, trial)?)))
            .collect::<Result<_>>()?;
        Ok((sc.true_params().values, outcomes, self.lyap(&truth)))
    }

    fn trial(&self, trial: usize) -> TrialRecord {
        match self.try_trial(trial) {
            Ok((true_params, outcomes, truth_lambda_max)) => TrialRecord {
                trial,
                true_params,
                outcomes,
                truth_lambda_max,
                error: None,
            },
            Err(e) => TrialRecord {
                trial,
                true_params: vec![f64::NAN; self.spec.param_dim()],
                outcomes: self
                    .cfg
                    .methods
                    .iter()
                    .map(|&m| {
                        let o = MethodOutcome {
                            rmse: SANITIZE_FILL,
                            mape: m.needs_model().then(|| vec![SANITIZE_FILL; self.spec.param_dim()]),
                            lambda_max: None,
                            fallbacks: 0,
                        };
                        (m, o)
                    })
                    .collect(),
                truth_lambda_max: None,
                error: Some(e.to_string()),
            },
        }
    }
}

fn mean_of_some(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarise(methods: &[Method], trials: &[TrialRecord], dp: usize) -> BTreeMap<Method, MethodSummary> {
    methods
        .iter()
        .map(|&m| {
            let outs: Vec<&MethodOutcome> = trials.iter().map(|t| &t.outcomes[&m]).collect();
            let rmses: Vec<f64> = outs.iter().map(|o| o.rmse).collect();
            let (rmse_mean, rmse_std) = mean_std(&rmses);
            let mape_mean = m.needs_model().then(|| {
                (0..dp)
                    .map(|j| {
                        let col: Vec<f64> = outs.iter().filter_map(|o| o.mape.as_ref().map(|v| v[j])).collect();
                        mean_std(&col).0
                    })
                    .collect()
            });
            let s = MethodSummary {
                rmse_mean,
                rmse_std,
                mape_mean,
                lambda_max_mean: mean_of_some(outs.iter().map(|o| o.lambda_max)),
                fallbacks: outs.iter().map(|o| o.fallbacks).sum(),
            };
            (m, s)
        })
        .collect()
}

fn pair_tests(methods: &[Method], trials: &[TrialRecord]) -> Vec<PairTest> {
    let mut tests = Vec::new();
    for (i, &a) in methods.iter().enumerate() {
        for &b in &methods[i + 1..] {
            let pairs: Vec<(f64, f64)> = trials.iter().map(|t| (t.outcomes[&a].rmse, t.outcomes[&b].rmse)).collect();
            let (result, note) = match wilcoxon_signed_rank(&pairs) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            tests.push(PairTest { a, b, result, note });
        }
    }
    tests
}

/// Run every trial without touching the filesystem.
pub fn run_trials(cfg: &ExperimentConfig, ckpt: Option<&Checkpoint>) -> Result<ExperimentResult> {
    let start = Instant::now();
    let bench = Bench::new(cfg, ckpt)?;
    let trials: Vec<TrialRecord> = (0..cfg.n_trials).into_par_iter().map(|t| bench.trial(t)).collect();
    let dp = bench.spec.param_dim();
    Ok(ExperimentResult {
        system: cfg.system,
        condition: cfg.condition,
        seed: cfg.seed,
        n_trials: cfg.n_trials,
        lambda: bench.lambda,
        param_names: bench.spec.param_names.iter().map(|s| s.to_string()).collect(),
        methods: cfg.methods.clone(),
        summary: summarise(&cfg.methods, &trials, dp),
        wilcoxon: pair_tests(&cfg.methods, &trials),
        aborted: trials.iter().filter(|t| t.aborted()).count(),
        trials,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Paths of the files written for one experiment.
#[derive(Clone, Debug)]
pub struct OutputFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub plot: PathBuf,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Per-trial CSV. Runtime is deliberately absent so reruns compare bitwise.
pub fn trials_csv(res: &ExperimentResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["trial".to_string()];
    header.extend(res.param_names.iter().map(|p| format!("true_{p}")));
    for m in &res.methods {
        header.push(format!("rmse_{m}"));
        if m.needs_model() {
            header.extend(res.param_names.iter().map(|p| format!("mape_{m}_{p}")));
            header.push(format!("fallbacks_{m}"));
        }
        header.push(format!("lambda_max_{m}"));
    }
    header.extend(["lambda_max_truth".into(), "status".into(), "note".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for t in &res.trials {
        let mut row = vec![t.trial.to_string()];
        row.extend(t.true_params.iter().map(f64::to_string));
        for m in &res.methods {
            let o = &t.outcomes[m];
            row.push(o.rmse.to_string());
            if m.needs_model() {
                match &o.mape {
                    Some(v) => row.extend(v.iter().map(f64::to_string)),
                    None => row.extend(res.param_names.iter().map(|_| String::new())),
                }
                row.push(o.fallbacks.to_string());
            }
            row.push(fmt_opt(o.lambda_max));
        }
        row.push(fmt_opt(t.truth_lambda_max));
        row.push(if t.aborted() { "aborted" } else { "ok" }.into());
        row.push(t.error.clone().unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Write the CSV, JSON summary and RMSE distribution text (`method rmse` per line).
pub fn write_outputs(res: &ExperimentResult, out_dir: &Path, stem: &str) -> Result<OutputFiles> {
    std::fs::create_dir_all(out_dir)?;
    let files = OutputFiles {
        csv: out_dir.join(format!("{stem}.csv")),
        summary: out_dir.join(format!("{stem}_summary.json")),
        plot: out_dir.join(format!("{stem}_rmse.txt")),
    };
    write_atomic(&files.csv, &trials_csv(res)?)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        system: SystemKind,
        condition: Condition,
        seed: u64,
        n_trials: usize,
        lambda: f64,
        param_names: &'a [String],
        methods: &'a BTreeMap<Method, MethodSummary>,
        wilcoxon: &'a [PairTest],
        aborted: usize,
        runtime_seconds: f64,
    }
    let summary = Summary {
        system: res.system,
        condition: res.condition,
        seed: res.seed,
        n_trials: res.n_trials,
        lambda: res.lambda,
        param_names: &res.param_names,
        methods: &res.summary,
        wilcoxon: &res.wilcoxon,
        aborted: res.aborted,
        runtime_seconds: res.runtime_seconds,
    };
    write_atomic(&files.summary, &serde_json::to_vec_pretty(&summary)?)?;

    let mut plot = String::from("# method rmse\n");
    for m in &res.methods {
        for v in res.rmse_column(*m) {
            plot.push_str(&format!("{m} {v}\n"));
        }
    }
    write_atomic(&files.plot, plot.as_bytes())?;
    Ok(files)
}

/// Run an experiment and persist its outputs under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, ckpt: Option<&Checkpoint>) -> Result<(ExperimentResult, OutputFiles)> {
    let res = run_trials(cfg, ckpt)?;
    let files = write_outputs(&res, &cfg.out_dir, &cfg.stem())?;
    Ok((res, files))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub system: SystemKind,
    pub lambdas: Vec<f64>,
    /// `rmse[k][trial]` for `lambdas[k]`.
    pub rmse: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Wilcoxon p of each weight against the first one, when defined.
    pub p_vs_first: Vec<Option<f64>>,
    pub aborted: usize,
}

impl AblationTable {
    /// Index of the consecutive pair with the largest drop in mean RMSE.
    pub fn largest_gain(&self) -> Option<usize> {
        (1..self.means.len())
            .max_by(|&a, &b| (self.means[a - 1] - self.means[a]).total_cmp(&(self.means[b - 1] - self.means[b])))
            .map(|k| k - 1)
    }
}

/// One guided run per weight, all sharing trial seeds with each other and
/// with a standalone `pure_ai` run of the same config.
pub fn ablation_sweep(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> Result<AblationTable> {
    let lambdas = cfg
        .lambda_sweep
        .clone()
        .ok_or_else(|| Error::Config("ablation needs `lambdas`".into()))?;
    let mut rmse = Vec::with_capacity(lambdas.len());
    let mut aborted = 0;
    for &lam in &lambdas {
        let mut c = cfg.clone();
        c.methods = vec![Method::Pidm];
        c.lambda = Some(lam);
        c.lambda_sweep = None;
        let res = run_trials(&c, Some(ckpt))?;
        aborted += res.aborted;
        rmse.push(res.rmse_column(Method::Pidm));
    }
    let (means, stds) = rmse.iter().map(|col| mean_std(col)).unzip();
    let p_vs_first = rmse
        .iter()
        .map(|col| {
            let pairs: Vec<(f64, f64)> = rmse[0].iter().copied().zip(col.iter().copied()).collect();
            wilcoxon_signed_rank(&pairs).ok().map(|r| r.p_value)
        })
        .collect();
    Ok(AblationTable {
        system: cfg.system,
        lambdas,
        rmse,
        means,
        stds,
        p_vs_first,
        aborted,
    })
}

/// Write `<stem>_ablation.csv` (trial rows, one column per weight),
/// `<stem>_ablation.json` and `<stem>_ablation.txt` (`lambda mean_rmse`).
pub fn write_ablation(table: &AblationTable, out_dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let paths: Vec<PathBuf> = ["csv", "json", "txt"]
        .iter()
        .map(|ext| out_dir.join(format!("{stem}_ablation.{ext}")))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["trial".to_string()];
    header.extend(table.lambdas.iter().map(|l| format!("lambda_{l}")));
    w.write_record(&header).map_err(csv_err)?;
    let n = table.rmse.first().map_or(0, Vec::len);
    for t in 0..n {
        let mut row = vec![t.to_string()];
        row.extend(table.rmse.iter().map(|col| col[t].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    write_atomic(&paths[0], &w.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
    write_atomic(&paths[1], &serde_json::to_vec_pretty(table)?)?;
    let mut txt = String::from("# lambda mean_rmse\n");
    for (l, m) in table.lambdas.iter().zip(&table.means) {
        txt.push_str(&format!("{l} {m}\n"));
    }
    write_atomic(&paths[2], txt.as_bytes())?;
    Ok(paths)
}
