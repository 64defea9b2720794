//! Reconstruct a held-out trajectory from 10% noisy observations with and
//! without physics guidance.
//!
//! ```text
//! cargo run --release --example train_denoiser -- lorenz 1500 lorenz_desk.pidmw
//! cargo run --release --example guided_reconstruction -- lorenz_desk.pidmw [lambda] [seed]
//! ```

use pidm::dataset::{scenario_from_raw, simulate_one, DEFAULT_TRANSIENT, OBS_DENSITY, OBS_SIGMA};
use pidm::diffusion::Checkpoint;
use pidm::guidance::{sample, GuidanceConfig};
use pidm::metrics::rmse;
use pidm::rng::substream;
use pidm::systems::Condition;

fn main() -> pidm::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "lorenz_desk.pidmw".into());
    let ck = Checkpoint::load(&path)?;
    let spec = ck.system.spec();
    let lambda: f64 = args.next().map_or(spec.lambda_base, |s| s.parse().expect("lambda must be a number"));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed must be an integer"));

    let mut rng = substream(seed, 0);
    let (raw, params, _) = simulate_one(&spec, ck.seq_len, DEFAULT_TRANSIENT, ck.dt, Condition::Id, &mut rng)?;
    let scenario = scenario_from_raw(&spec, &raw, &ck.stats, ck.dt, OBS_DENSITY, OBS_SIGMA, &mut rng)?;
    let truth = scenario.truth_states()?;
    println!("{} with {:?}: {} of {} steps observed", spec.kind, params.values, scenario.obs.count(), scenario.obs.len());

    for lam in [0.0, lambda] {
        let cfg = GuidanceConfig::for_system(&spec).with_lambda(lam);
        let out = sample(&ck.model, &ck.schedule, &spec, &ck.stats, &scenario.obs, ck.dt, &cfg, &mut substream(seed, 1))?;
        let recon = ck.stats.denormalize(&out.x0_hat)?.slice_axis(0, 0, spec.state_dim)?.transpose2()?;
        println!(
            "lambda {lam:<4} rmse {:>8.4}  p_hat {:?}  fallbacks {}/{}",
            rmse(&recon, &truth)?,
            out.p_hat.values,
            out.fallback_count,
            out.guided_steps
        );
    }
    Ok(())
}
