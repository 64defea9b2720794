use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pidm::dataset::{
    data_dir, generate_corpus, load_states, scenario_from_raw, simulate_one, CorpusPreset, Reconstruction, Scenario,
    TrajectorySet, DEFAULT_DT, OBS_DENSITY, OBS_SIGMA,
};
use pidm::diffusion::{fit_checkpoint, Checkpoint, TrainConfig};
use pidm::enkf::{run_filter, EnkfConfig, PhysicalObservations};
use pidm::guidance::{sample, GuidanceConfig};
use pidm::harness::{ablation_sweep, run_experiment, write_ablation, ExperimentConfig};
use pidm::integrator::{convergence_order, dp45_rollout, DP5};
use pidm::lyapunov::rosenstein_mle;
use pidm::metrics::{mape, rmse};
use pidm::rng::substream;
use pidm::store::write_atomic;
use pidm::systems::{Condition, SystemKind};
use pidm::Result;

/// Physics-guided diffusion reconstruction of chaotic trajectories.
#[derive(Parser)]
#[command(name = "pidm", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a normalised trajectory corpus.
    Generate {
        #[arg(long, default_value = "lorenz")]
        system: SystemKind,
        #[arg(long, default_value = "id")]
        condition: Condition,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        len: usize,
        #[arg(long, default_value_t = pidm::dataset::DEFAULT_TRANSIENT)]
        transient: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a held-out trajectory and sparse noisy observations of it,
    /// normalised with a model's (or corpus's) statistics.
    Observe {
        /// Checkpoint or corpus supplying system, length and normalisation.
        #[arg(long)]
        from: PathBuf,
        #[arg(long, default_value = "id")]
        condition: Condition,
        #[arg(long, default_value_t = OBS_DENSITY)]
        density: f64,
        #[arg(long, default_value_t = OBS_SIGMA)]
        sigma: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a denoiser on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Guided reconstruction from an observation file.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        /// Defaults to the per-system weight.
        #[arg(long)]
        lambda_base: Option<f64>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-step guidance trace as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Oracle ensemble Kalman filter on an observation file.
    Enkf {
        #[arg(long)]
        system: Option<SystemKind>,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long, default_value_t = 50)]
        members: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Estimate parameters jointly instead of using the true ones.
        #[arg(long)]
        augment: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Largest Lyapunov exponent of a stored trajectory.
    Lyapunov {
        #[arg(long)]
        traj: PathBuf,
        /// Overrides the system recorded in the file.
        #[arg(long)]
        system: Option<SystemKind>,
    },
    /// Paired multi-method experiment from a config file.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Physics-weight sweep from a config file.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated weights; overrides `lambdas` in the config.
        #[arg(long)]
        lambdas: Option<String>,
    },
    /// Tableau residuals and empirical convergence orders.
    ValidateIntegrator {
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
    },
}

fn out_or(out: Option<PathBuf>, name: String) -> PathBuf {
    out.unwrap_or_else(|| data_dir().join(name))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Generate {
            system,
            condition,
            n,
            len,
            transient,
            seed,
            out,
        } => {
            let set = generate_corpus(&system.spec(), n, len, transient, DEFAULT_DT, condition, seed)?;
            let out = out_or(out, format!("{system}_{condition}_corpus.pidm"));
            ensure_parent(&out)?;
            set.save(&out)?;
            println!("{:?} trajectories, {} resampled, wrote {}", set.z.shape(), set.meta.rejections, out.display());
        }
        Cmd::Observe {
            from,
            condition,
            density,
            sigma,
            seed,
            out,
        } => {
            let (system, stats, len, dt) = match Checkpoint::load(&from) {
                Ok(ck) => (ck.system, ck.stats, ck.seq_len, ck.dt),
                Err(_) => {
                    let set = TrajectorySet::load(&from)?;
                    (set.meta.system, set.stats.clone(), set.seq_len(), set.dt)
                }
            };
            let spec = system.spec();
            let mut rng = substream(seed, 0);
            let (raw, params, _) = simulate_one(&spec, len, CorpusPreset::DESK.transient, dt, condition, &mut rng)?;
            let sc = scenario_from_raw(&spec, &raw, &stats, dt, density, sigma, &mut rng)?;
            let out = out_or(out, format!("{system}_{condition}_obs_{seed}.pidm"));
            ensure_parent(&out)?;
            sc.save(&out)?;
            println!("{system} {:?}: {} of {len} steps observed, wrote {}", params.values, sc.obs.count(), out.display());
        }
        Cmd::Train {
            corpus,
            preset,
            steps,
            lr,
            seed,
            out,
        } => {
            let set = TrajectorySet::load(&corpus)?;
            let mut cfg = TrainConfig::preset(&preset)?;
            cfg.seed = seed;
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.lr = lr.unwrap_or(cfg.lr);
            let total = cfg.steps;
            let ck = fit_checkpoint(&set, &preset, &cfg, |r| {
                if r.step % 100 == 0 || r.step + 1 == total {
                    println!("step {:>5}  loss {:.4}  lr {:.2e}", r.step, r.loss, r.lr);
                }
            })?;
            let out = out_or(out, format!("{}_{preset}.pidmw", set.meta.system));
            ensure_parent(&out)?;
            ck.save(&out)?;
            println!("{} parameters, wrote {}", ck.model.num_parameters(), out.display());
        }
        Cmd::Sample {
            model,
            obs,
            lambda_base,
            seed,
            out,
            trace,
        } => {
            let ck = Checkpoint::load(&model)?;
            let sc = Scenario::load(&obs)?;
            let spec = ck.system.spec();
            let cfg = GuidanceConfig::for_system(&spec).with_lambda(lambda_base.unwrap_or(spec.lambda_base));
            let res = sample(&ck.model, &ck.schedule, &spec, &ck.stats, &sc.obs, ck.dt, &cfg, &mut substream(seed, 1))?;
            let phys = ck.stats.denormalize(&res.x0_hat)?;
            let states = phys.slice_axis(0, 0, spec.state_dim)?.transpose2()?;
            let params = phys.slice_axis(0, spec.state_dim, spec.channels())?;
            let truth = sc.truth_states()?;
            println!("rmse {:.6}", rmse(&states, &truth)?);
            println!("mape {:?}", mape(&params, &sc.true_params().values)?);
            println!("p_hat {:?}  fallbacks {}/{}", res.p_hat.values, res.fallback_count, res.guided_steps);
            let out = out_or(out, format!("{}_recon_{seed}.pidm", ck.system));
            ensure_parent(&out)?;
            Reconstruction {
                system: ck.system,
                dt: ck.dt,
                method: if cfg.lambda_base > 0.0 { "pidm" } else { "pure_ai" }.into(),
                states,
                params: Some(res.p_hat.values.clone()),
            }
            .save(&out)?;
            if let Some(path) = trace {
                ensure_parent(&path)?;
                write_atomic(&path, &serde_json::to_vec_pretty(&res.trace)?)?;
            }
            println!("wrote {}", out.display());
        }
        Cmd::Enkf {
            system,
            obs,
            members,
            seed,
            augment,
            out,
        } => {
            let sc = Scenario::load(&obs)?;
            if system.is_some_and(|s| s != sc.system) {
                return Err(pidm::Error::Config(format!("observations are for {}", sc.system)));
            }
            let spec = sc.spec();
            let mut cfg = EnkfConfig::for_system(&spec);
            cfg.n_members = members;
            cfg.augment_params = augment;
            let truth = sc.truth_states()?;
            let po = PhysicalObservations::from_scenario(&sc)?;
            let res = run_filter(&spec, &po, &truth.data()[..spec.state_dim], &sc.true_params(), &cfg, &mut substream(seed, 2))?;
            println!("rmse {:.6}  reinitialised {}  max |x| {:.3}", rmse(&res.mean, &truth)?, res.reinitialized, res.max_abs);
            if let Some(p) = &res.params {
                println!("p_hat {p:?}");
            }
            let out = out_or(out, format!("{}_enkf_{seed}.pidm", sc.system));
            ensure_parent(&out)?;
            Reconstruction {
                system: sc.system,
                dt: sc.dt,
                method: "enkf".into(),
                states: res.mean,
                params: res.params,
            }
            .save(&out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Lyapunov { traj, system } => {
            let (kind, dt, states) = load_states(&traj)?;
            let spec = system.unwrap_or(kind).spec();
            let est = rosenstein_mle(&states, dt, &spec.lyapunov)?;
            println!("lambda_max {:.6}", est.lambda_max);
            println!("r2 {:.6}", est.r2);
            println!("fit_range {:?}", est.fit_range);
            println!("per_window {:?}", est.per_window);
        }
        Cmd::Evaluate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ck = cfg.model.as_ref().map(Checkpoint::load).transpose()?;
            let (res, files) = run_experiment(&cfg, ck.as_ref())?;
            for (m, s) in &res.summary {
                println!("{m:<8} rmse {:.4} ± {:.4}", s.rmse_mean, s.rmse_std);
            }
            for t in &res.wilcoxon {
                match &t.result {
                    Some(r) => println!("{} vs {}: p = {:.4}", t.a, t.b, r.p_value),
                    None => println!("{} vs {}: {}", t.a, t.b, t.note.as_deref().unwrap_or("")),
                }
            }
            println!("wrote {}, {}, {}", files.csv.display(), files.summary.display(), files.plot.display());
            if res.aborted > 0 {
                eprintln!("{} trial(s) aborted", res.aborted);
                return Ok(false);
            }
        }
        Cmd::Ablate { config, lambdas } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(list) = lambdas {
                let parsed: std::result::Result<Vec<f64>, _> = list.split(',').map(|s| s.trim().parse()).collect();
                cfg.lambda_sweep = Some(parsed.map_err(|_| pidm::Error::Config(format!("bad lambda list `{list}`")))?);
                cfg.validate()?;
            }
            let path = cfg.model.clone().ok_or_else(|| pidm::Error::Config("ablation needs `model`".into()))?;
            let ck = Checkpoint::load(path)?;
            let table = ablation_sweep(&cfg, &ck)?;
            for (k, lam) in table.lambdas.iter().enumerate() {
                println!("lambda {lam:<5} rmse {:.4} ± {:.4}", table.means[k], table.stds[k]);
            }
            for p in write_ablation(&table, &cfg.out_dir, &cfg.stem())? {
                println!("wrote {}", p.display());
            }
            if table.aborted > 0 {
                eprintln!("{} trial(s) aborted", table.aborted);
                return Ok(false);
            }
        }
        Cmd::ValidateIntegrator { horizon } => {
            println!("row-sum residual    {:.3e}", DP5.row_sum_residual());
            println!("weight-sum residual {:.3e}", DP5.weight_sum_residual());
            for kind in SystemKind::ALL {
                let spec = kind.spec();
                let p = spec.canonical_params();
                let x0 = spec.initial_state(&p, &mut substream(0, 0));
                let warm = dp45_rollout(&spec, &x0, &p, DEFAULT_DT, 200, spec.groundtruth_substeps)?;
                let d = spec.state_dim;
                let on_attractor = &warm.data()[200 * d..];
                println!("{kind:<11} order {:.3}", convergence_order(&spec, on_attractor, &p, horizon));
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
