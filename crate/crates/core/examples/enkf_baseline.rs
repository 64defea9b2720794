//! Oracle ensemble Kalman filter on a sparse, noisy desk-scale scenario.
//!
//! ```text
//! cargo run --release --example enkf_baseline -- [system] [trials]
//! ```

use pidm::dataset::{generate_corpus, scenario_from_raw, simulate_one, CorpusPreset, DEFAULT_DT, OBS_DENSITY, OBS_SIGMA};
use pidm::enkf::{run_filter, EnkfConfig, PhysicalObservations};
use pidm::metrics::{mean_std, rmse};
use pidm::rng::substream;
use pidm::systems::{Condition, SystemKind};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn main() -> pidm::Result<()> {
    let mut args = std::env::args().skip(1);
    let system: SystemKind = args.next().as_deref().unwrap_or("lorenz").parse()?;
    let trials: u64 = args.next().map_or(5, |s| s.parse().expect("trials must be an integer"));
    let spec = system.spec();
    let p = CorpusPreset::DESK;
    // Normalisation statistics come from a small training corpus.
    let stats = generate_corpus(&spec, 16, p.len, p.transient, DEFAULT_DT, Condition::Id, 42)?.stats;
    let cfg = EnkfConfig::for_system(&spec);

    let mut errors = Vec::new();
    for trial in 0..trials {
        let mut rng = substream(1000, trial);
        let (raw, params, _) = simulate_one(&spec, p.len, p.transient, DEFAULT_DT, Condition::Id, &mut rng)?;
        let sc = scenario_from_raw(&spec, &raw, &stats, DEFAULT_DT, OBS_DENSITY, OBS_SIGMA, &mut rng)?;
        let truth = sc.truth_states()?;
        let obs = PhysicalObservations::from_scenario(&sc)?;
        let out = run_filter(&spec, &obs, &truth.data()[..spec.state_dim], &params, &cfg, &mut rng)?;
        let d = spec.state_dim;
        let improved = out
            .analyses
            .iter()
            .filter(|a| {
                let x = &truth.data()[a.step * d..(a.step + 1) * d];
                dist(&a.analysis, x) < dist(&a.forecast, x)
            })
            .count();
        let e = rmse(&out.mean, &truth)?;
        errors.push(e);
        println!(
            "trial {trial}: rmse {e:>8.4}  analysis helped {improved}/{}  reinitialised {}  max |x| {:.1}",
            out.analyses.len(),
            out.reinitialized,
            out.max_abs
        );
    }
    let (m, s) = mean_std(&errors);
    println!("{system}: rmse {m:.4} ± {s:.4} over {trials} trials");
    Ok(())
}
