//! Physics-weight sweep on paired trials: every weight sees the same ground
//! truth, observations and sampler noise.
//!
//! ```text
//! cargo run --release --example train_denoiser -- lorenz 1500 lorenz_desk.pidmw
//! cargo run --release --example ablation_sweep -- lorenz_desk.pidmw [trials] [lambdas]
//! ```

use pidm::diffusion::Checkpoint;
use pidm::harness::{ablation_sweep, ExperimentConfig};

fn main() -> pidm::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "lorenz_desk.pidmw".into());
    let ck = Checkpoint::load(&path)?;
    let mut cfg = ExperimentConfig::new(ck.system);
    cfg.n_trials = args.next().map_or(5, |s| s.parse().expect("trials must be an integer"));
    let lambdas = args.next().unwrap_or_else(|| "0,0.5,1,2,5".into());
    cfg.lambda_sweep = Some(lambdas.split(',').map(|s| s.trim().parse().expect("lambdas are numbers")).collect());

    let table = ablation_sweep(&cfg, &ck)?;
    println!("{} ablation, {} paired trials", ck.system, cfg.n_trials);
    for (k, lam) in table.lambdas.iter().enumerate() {
        let p = table.p_vs_first[k].map_or("-".to_string(), |p| format!("{p:.4}"));
        println!("lambda {lam:<5} rmse {:>9.4} ± {:<9.4} p vs first {p}", table.means[k], table.stds[k]);
    }
    if let Some(k) = table.largest_gain() {
        println!("largest gain: {} -> {}", table.lambdas[k], table.lambdas[k + 1]);
    }
    Ok(())
}
