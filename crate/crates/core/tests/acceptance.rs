//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.
//!
//! Trains two desk-scale denoisers and runs the CLI pipeline twice, so it
//! takes several minutes.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;

use pidm::dataset::{make_observations, DEFAULT_DT, DEFAULT_TRANSIENT};
use pidm::diffusion::{ddpm_sample, Checkpoint};
use pidm::guidance::{lambda_schedule, safe_project, sample, GuidanceConfig};
use pidm::harness::{run_trials, ExperimentConfig, Method};
use pidm::integrator::{convergence_order, dp45_rollout, DP5};
use pidm::lyapunov::{fit_slope, mean_log_divergence, rosenstein_mle};
use pidm::metrics::{mean_std, rmse, wilcoxon_signed_rank};
use pidm::rng::{seeded, substream};
use pidm::systems::SystemKind;
use pidm::tensor::Tensor;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rational(s: &str) -> f64 {
    let (n, d) = s.split_once('/').unwrap();
    n.parse::<i64>().unwrap() as f64 / d.parse::<i64>().unwrap() as f64
}

fn tableau_fidelity() -> Outcome {
    let a: [&[&str]; 6] = [
        &[],
        &["1/5"],
        &["3/40", "9/40"],
        &["44/45", "-56/15", "32/9"],
        &["19372/6561", "-25360/2187", "64448/6561", "-212/729"],
        &["9017/3168", "-355/33", "46732/5247", "49/176", "-5103/18656"],
    ];
    let c = ["0/1", "1/5", "3/10", "4/5", "8/9", "1/1"];
    let b = ["35/384", "0/1", "500/1113", "125/192", "-2187/6784", "11/84"];
    let mut worst: f64 = 0.0;
    for i in 0..6 {
        worst = worst.max((DP5.c[i] - rational(c[i])).abs());
        worst = worst.max((DP5.b[i] - rational(b[i])).abs());
        for (j, s) in a[i].iter().enumerate() {
            worst = worst.max((DP5.a[i][j] - rational(s)).abs());
        }
    }
    let rows = DP5.row_sum_residual();
    check(worst < 1e-14 && rows < 1e-15, format!("max coefficient error {worst:.1e}, row-sum residual {rows:.1e}"))
}

fn integrator_order() -> Outcome {
    let mut report = Vec::new();
    let mut ok = true;
    for kind in [SystemKind::Lorenz, SystemKind::Rossler] {
        let spec = kind.spec();
        let p = spec.canonical_params();
        let x0 = spec.initial_state(&p, &mut seeded(0));
        let warm = dp45_rollout(&spec, &x0, &p, DEFAULT_DT, 200, spec.groundtruth_substeps).map_err(|e| e.to_string())?;
        let on_attractor = &warm.data()[200 * spec.state_dim..];
        let mut lowest = f64::INFINITY;
        for (start, horizon) in [(&[1.0, 1.0, 1.0][..], 0.5), (&[1.0, 1.0, 1.0][..], 1.0), (on_attractor, 1.0)] {
            lowest = lowest.min(convergence_order(&spec, start, &p, horizon));
        }
        ok &= lowest >= 4.7;
        report.push(format!("{kind} min order {lowest:.2}"));
    }
    check(ok, report.join(", "))
}

fn differentiability() -> Outcome {
    let gaps: Vec<(SystemKind, f64)> = SystemKind::ALL.iter().map(|&k| (k, common::physics_chain_gap(k))).collect();
    let worst = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
    let detail = gaps.iter().map(|(k, g)| format!("{k} {g:.1e}")).collect::<Vec<_>>().join(", ");
    check(worst < 1e-4, format!("max relative gap per system: {detail}"))
}

fn guidance_semantics(lorenz: &Checkpoint) -> Outcome {
    let spec = lorenz.system.spec();
    let steps = lorenz.schedule.steps();
    let corpus = common::desk_corpus(lorenz.system, 2, 99);
    let truth = corpus.item(0);
    let obs = make_observations(&truth, spec.state_dim, 0.1, 0.05, &mut seeded(4)).map_err(|e| e.to_string())?;

    let zero = GuidanceConfig::for_system(&spec).with_lambda(0.0);
    let guided_off = sample(&lorenz.model, &lorenz.schedule, &spec, &lorenz.stats, &obs, lorenz.dt, &zero, &mut seeded(21))
        .map_err(|e| e.to_string())?;
    let plain = ddpm_sample(&lorenz.model, &lorenz.schedule, truth.shape()[1], &mut seeded(21)).map_err(|e| e.to_string())?;
    let identical = guided_off.x0_hat == plain;

    let base = 2.0;
    let ends = lambda_schedule(steps, steps, base) == 0.0 && lambda_schedule(0, steps, base) == base;

    let cfg = GuidanceConfig::for_system(&spec).with_lambda(5.0);
    let run = sample(&lorenz.model, &lorenz.schedule, &spec, &lorenz.stats, &obs, lorenz.dt, &cfg, &mut seeded(22))
        .map_err(|e| e.to_string())?;
    let max_corr = run.trace.iter().filter_map(|e| e.correction_norm).fold(0.0, f64::max);

    let big = Tensor::full(&[6, 128], 1.0);
    let aborted = safe_project(&big, 1.0001e4, &cfg).max_abs() == 0.0 && safe_project(&big, f64::NAN, &cfg).max_abs() == 0.0;
    let n = big.norm();
    let kept = safe_project(&big, 1e4, &cfg).norm();
    let clipped = (kept - cfg.g_thresh * n / (n + cfg.eps_norm)).abs() < 1e-12;

    check(
        identical && ends && max_corr <= cfg.g_thresh && aborted && clipped,
        format!(
            "lambda=0 bit-identical {identical}, schedule endpoints exact {ends}, max correction {max_corr:.4}, \
             clipped norm {kept:.6}, L_phy>1e4 zeroed {aborted}"
        ),
    )
}

fn ablation_direction(models: &[&Checkpoint]) -> Outcome {
    let mut report = Vec::new();
    let mut ok = true;
    for ck in models {
        let mut cfg = ExperimentConfig::new(ck.system);
        cfg.n_trials = 5;
        cfg.methods = vec![Method::Pidm, Method::PureAi];
        cfg.lambda = Some(0.5);
        let res = run_trials(&cfg, Some(ck)).map_err(|e| e.to_string())?;
        let (plain, _) = mean_std(&res.rmse_column(Method::PureAi));
        let (guided, _) = mean_std(&res.rmse_column(Method::Pidm));
        let ratio = plain / guided;
        ok &= res.aborted == 0 && guided < plain && ratio >= 1.5;
        report.push(format!("{} {plain:.4} -> {guided:.4} (x{ratio:.2})", ck.system));
    }
    check(ok, report.join(", "))
}

fn enkf_properties() -> Outcome {
    // Gain limits on a scalar toy.
    let mut rng = seeded(1);
    let members = nalgebra::DMatrix::from_fn(200, 1, |_, _| 3.0 + rng.gen_range(-1.0..1.0));
    let cfg = pidm::enkf::EnkfConfig {
        inflation: 1.0,
        ..pidm::enkf::EnkfConfig::default()
    };
    let mut loose = pidm::enkf::Ensemble::new(members.clone());
    pidm::enkf::analysis(&mut loose, &[10.0], &[1e12], &cfg, &mut seeded(2)).map_err(|e| e.to_string())?;
    let moved = (&loose.members - &members).amax();
    let mut tight = pidm::enkf::Ensemble::new(members.clone());
    pidm::enkf::analysis(&mut tight, &[10.0], &[1e-12], &cfg, &mut seeded(3)).map_err(|e| e.to_string())?;
    let pinned = (tight.mean()[0] - 10.0).abs();

    let (good, total) = common::analysis_improvements(5);
    let rate = good as f64 / total as f64;

    let mut max_abs: f64 = 0.0;
    for t in 0..5 {
        let sc = common::desk_scenario(SystemKind::Rabinovich, t, pidm::dataset::OBS_DENSITY, pidm::dataset::OBS_SIGMA);
        max_abs = max_abs.max(common::filter_scenario(&sc, t).max_abs);
    }
    check(
        moved < 1e-3 && pinned < 1e-3 && rate >= 0.8 && max_abs <= 50.0,
        format!(
            "K->0 displacement {moved:.1e}, K->I offset {pinned:.1e}, analysis improved {good}/{total} ({:.0}%), \
             Rabinovich max |x| {max_abs:.2}",
            100.0 * rate
        ),
    )
}

fn lyapunov_estimator() -> Outcome {
    let (rate, dt, tlen) = (0.9, 0.05, 40);
    let mut rng = seeded(3);
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
    let points = Tensor::new(vec![data.len(), 1], data).map_err(|e| e.to_string())?;
    let (slope, _) = fit_slope(&mean_log_divergence(&points, &pairs, tlen), dt, 1, tlen).map_err(|e| e.to_string())?;

    let lorenz = SystemKind::Lorenz.spec();
    let sine = Tensor::from_fn(&[1000, 1], |i| (i as f64 * dt).sin());
    let flat = rosenstein_mle(&sine, dt, &lorenz.lyapunov).map_err(|e| e.to_string())?.lambda_max;

    let p = lorenz.canonical_params();
    let n = DEFAULT_TRANSIENT + 999;
    let mut est = Vec::new();
    for i in 0..5 {
        let x0 = lorenz.initial_state(&p, &mut substream(3, i));
        let full = dp45_rollout(&lorenz, &x0, &p, dt, n, lorenz.groundtruth_substeps).map_err(|e| e.to_string())?;
        let states = full.slice_axis(0, DEFAULT_TRANSIENT, n + 1).map_err(|e| e.to_string())?;
        est.push(rosenstein_mle(&states, dt, &lorenz.lyapunov).map_err(|e| e.to_string())?.lambda_max);
    }
    let (lmax, _) = mean_std(&est);
    check(
        (slope - rate).abs() <= 0.05 && flat.abs() < 0.02 && (lmax - 0.573).abs() <= 0.25 * 0.573,
        format!("synthetic {slope:.4}, sine {flat:.4}, Lorenz L=1000 {lmax:.4}"),
    )
}

fn brute_force_p(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        for &k in &order[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    let total: f64 = ranks.iter().sum();
    let w = |signs: u32| (0..n).filter(|&k| signs >> k & 1 == 1).map(|k| ranks[k]).sum::<f64>();
    let observed = (0..n).filter(|&k| diffs[k] > 0.0).map(|k| ranks[k]).sum::<f64>();
    let stat = observed.min(total - observed);
    let hits = (0..1u32 << n).filter(|&s| w(s).min(total - w(s)) <= stat + 1e-9).count();
    (hits as f64 / (1u64 << n) as f64).min(1.0)
}

fn statistics() -> Outcome {
    let mut rng = seeded(17);
    let mut worst: f64 = 0.0;
    for n in 5..=10 {
        for _ in 0..40 {
            let diffs: Vec<f64> = (0..n)
                .map(|_| {
                    let d = (rng.gen_range(-6..=6) as f64) * 0.5;
                    if d == 0.0 { 0.75 } else { d }
                })
                .collect();
            let pairs: Vec<(f64, f64)> = diffs.iter().map(|&d| (d, 0.0)).collect();
            let got = wilcoxon_signed_rank(&pairs).map_err(|e| e.to_string())?.p_value;
            worst = worst.max((got - brute_force_p(&diffs)).abs());
        }
    }
    let five: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 0.0)).collect();
    let p5 = wilcoxon_signed_rank(&five).map_err(|e| e.to_string())?.p_value;
    let mut x = Tensor::zeros(&[2, 2]);
    x.data_mut()[0] = f64::NAN;
    let r = rmse(&x, &Tensor::zeros(&[2, 2])).map_err(|e| e.to_string())?;
    let want = (999.0f64 * 999.0 / 4.0).sqrt();
    check(
        worst < 1e-12 && (p5 - 0.0625).abs() < 1e-15 && (r - want).abs() < 1e-9,
        format!("max |exact - enumeration| {worst:.1e} over N=5..10, N=5 all-positive p={p5}, NaN rmse {r:.2}"),
    )
}

fn pidm(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pidm"))
        .args(args)
        .current_dir(dir)
        .env("PIDM_DATA_DIR", dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("pidm {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline_once(dir: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    pidm(dir, &["generate", "--system", "lorenz", "--n", "64", "--len", "128", "--seed", "42", "--out", "corpus.pidm"])?;
    pidm(dir, &["train", "--corpus", "corpus.pidm", "--preset", "desk", "--out", "model.pidmw"])?;
    pidm(dir, &["observe", "--from", "model.pidmw", "--seed", "7", "--out", "obs.pidm"])?;
    pidm(dir, &["sample", "--model", "model.pidmw", "--obs", "obs.pidm", "--seed", "7", "--out", "recon.pidm"])?;
    std::fs::write(dir.join("exp.cfg"), "system = lorenz\nn_trials = 5\nseed = 3\nmodel = model.pidmw\nout_dir = out\n")
        .map_err(|e| e.to_string())?;
    pidm(dir, &["evaluate", "--config", "exp.cfg"])?;
    let csv = std::fs::read(dir.join("out/lorenz_id.csv")).map_err(|e| e.to_string())?;
    let recon = std::fs::read(dir.join("recon.pidm")).map_err(|e| e.to_string())?;
    Ok((csv, recon))
}

fn reproducibility() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline_once(a.path())?;
    let second = pipeline_once(b.path())?;
    check(
        first == second,
        format!("csv {} bytes identical {}, reconstruction identical {}", first.0.len(), first.0 == second.0, first.1 == second.1),
    )
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n} {tag}: {name}: {detail}");
    outcome.is_ok()
}

#[test]
fn acceptance_criteria() {
    let mut results = vec![
        run(1, "tableau fidelity", tableau_fidelity),
        run(2, "integrator order", integrator_order),
        run(3, "differentiable physics chain", differentiability),
        run(6, "ensemble Kalman filter", enkf_properties),
        run(7, "Lyapunov estimator", lyapunov_estimator),
        run(8, "statistics", statistics),
    ];
    let lorenz = common::desk_checkpoint(SystemKind::Lorenz, 1500);
    let rabinovich = common::desk_checkpoint(SystemKind::Rabinovich, 1500);
    results.push(run(4, "guidance semantics", || guidance_semantics(&lorenz)));
    results.push(run(5, "desk ablation direction", || ablation_direction(&[&lorenz, &rabinovich])));
    results.push(run(9, "pipeline reproducibility", reproducibility));
    let failed = results.iter().filter(|ok| !**ok).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
