#![allow(dead_code)]

use pidm::dataset::{generate_corpus, make_observations, scenario_from_raw, simulate_one, CorpusPreset, TrajectorySet, DEFAULT_DT, OBS_DENSITY, OBS_SIGMA};
use pidm::diffusion::{fit_checkpoint, Checkpoint, NoiseSchedule, TrainConfig};
use pidm::enkf::{run_filter, EnkfConfig, FilterOutput, PhysicalObservations};
use pidm::guidance::{GuidanceConfig, GuidanceContext};
use pidm::rng::{normals, seeded, substream};
use pidm::systems::{Condition, SystemKind};
use pidm::tensor::Tensor;

/// Largest element-wise relative gap between the tape gradient of the
/// physics term and finite differences, on an `L = 8` miniature.
pub fn physics_chain_gap(kind: SystemKind) -> f64 {
    let spec = kind.spec();
    let corpus = generate_corpus(&spec, 2, 8, 50, DEFAULT_DT, Condition::Id, 3).unwrap();
    let truth = corpus.item(0);
    let c = spec.channels();
    let obs = make_observations(&truth, spec.state_dim, 0.5, 0.05, &mut seeded(1)).unwrap();
    let schedule = NoiseSchedule::linear(50);
    // Data weight off: only x -> x0_hat -> denormalise -> pool -> DP5 -> log1p-MSE remains.
    let cfg = GuidanceConfig {
        w_data: 0.0,
        ..GuidanceConfig::for_system(&spec)
    };
    let ctx = GuidanceContext {
        schedule: &schedule,
        kind,
        stats: &corpus.stats,
        obs: &obs,
        dt: DEFAULT_DT,
        cfg: &cfg,
    };
    let mut r = seeded(6);
    let eps = Tensor::new(vec![c, 8], normals(&mut r, c * 8)).unwrap();
    let x = truth.zip_map(&eps, "noise", |a, b| a + 0.05 * b).unwrap();
    let (t, lam) = (3, 1.3);
    let g = ctx.terms(&x, t, &eps, lam, false).unwrap();
    assert!(g.l_phy > 0.0, "{kind}: physics residual should be non-zero off the manifold");
    let scale = g.grad.max_abs();
    // Five-point stencil: O(h^4) truncation lets h stay large enough that
    // round-off does not swamp the smallest entries.
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let bumped = |s: f64| {
            let mut p = x.clone();
            p.data_mut()[i] += s * h;
            ctx.total_loss(&p, t, &eps, lam).unwrap()
        };
        let fd = (8.0 * (bumped(1.0) - bumped(-1.0)) - (bumped(2.0) - bumped(-2.0))) / (12.0 * h);
        let an = g.grad.data()[i];
        // Entries many orders below the largest one are pure round-off in both.
        let denom = an.abs().max(fd.abs()).max(1e-6 * scale);
        worst = worst.max((fd - an).abs() / denom);
    }
    worst
}

/// Desk scenario `trial` of a Lorenz-style run, normalised with `stats_seed`'s corpus.
pub fn desk_scenario(kind: SystemKind, trial: u64, density: f64, sigma: f64) -> pidm::dataset::Scenario {
    let spec = kind.spec();
    let p = CorpusPreset::DESK;
    let stats = generate_corpus(&spec, 16, p.len, p.transient, DEFAULT_DT, Condition::Id, 42).unwrap().stats;
    let mut rng = substream(1000, trial);
    let (raw, _, _) = simulate_one(&spec, p.len, p.transient, DEFAULT_DT, Condition::Id, &mut rng).unwrap();
    scenario_from_raw(&spec, &raw, &stats, DEFAULT_DT, density, sigma, &mut rng).unwrap()
}

pub fn filter_scenario(sc: &pidm::dataset::Scenario, trial: u64) -> FilterOutput {
    let spec = sc.spec();
    let truth = sc.truth_states().unwrap();
    let obs = PhysicalObservations::from_scenario(sc).unwrap();
    let cfg = EnkfConfig::for_system(&spec);
    run_filter(&spec, &obs, &truth.data()[..spec.state_dim], &sc.true_params(), &cfg, &mut substream(2000, trial)).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Analyses (over `trials` Lorenz desk scenarios) whose mean moved closer to
/// the truth, and the total number of analyses.
pub fn analysis_improvements(trials: u64) -> (usize, usize) {
    let (mut good, mut total) = (0, 0);
    for trial in 0..trials {
        let sc = desk_scenario(SystemKind::Lorenz, trial, OBS_DENSITY, OBS_SIGMA);
        let truth = sc.truth_states().unwrap();
        let d = sc.spec().state_dim;
        for a in &filter_scenario(&sc, trial).analyses {
            let x = &truth.data()[a.step * d..(a.step + 1) * d];
            total += 1;
            if dist(&a.analysis, x) < dist(&a.forecast, x) {
                good += 1;
            }
        }
    }
    (good, total)
}

pub fn desk_corpus(kind: SystemKind, n: usize, seed: u64) -> TrajectorySet {
    let p = CorpusPreset::DESK;
    generate_corpus(&kind.spec(), n, p.len, p.transient, DEFAULT_DT, Condition::Id, seed).unwrap()
}

/// Desk checkpoint trained with `steps` optimiser steps.
pub fn desk_checkpoint(kind: SystemKind, steps: usize) -> Checkpoint {
    let corpus = desk_corpus(kind, CorpusPreset::DESK.n_traj, 42);
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::desk()
    };
    fit_checkpoint(&corpus, "desk", &cfg, |_| {}).unwrap()
}
