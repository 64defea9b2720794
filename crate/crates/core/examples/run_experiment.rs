//! Paired multi-method experiment from a `key = value` config, writing the
//! per-trial CSV, JSON summary and RMSE distribution file.
//!
//! ```text
//! cargo run --release --example run_experiment -- [config]
//! ```
//!
//! Without a config, runs the filter baseline alone on five Lorenz trials.

use pidm::diffusion::Checkpoint;
use pidm::harness::{run_experiment, ExperimentConfig};

const DEFAULT: &str = "
system   = lorenz
n_trials = 5
methods  = enkf
out_dir  = results
";

fn main() -> pidm::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::parse(DEFAULT)?,
    };
    let ck = cfg.model.as_ref().map(Checkpoint::load).transpose()?;
    let (res, files) = run_experiment(&cfg, ck.as_ref())?;
    for t in &res.trials {
        let row: Vec<String> = t.outcomes.iter().map(|(m, o)| format!("{m} {:.4}", o.rmse)).collect();
        println!("trial {}: {}{}", t.trial, row.join("  "), t.error.as_deref().map_or(String::new(), |e| format!("  ({e})")));
    }
    for (m, s) in &res.summary {
        println!("{m:<8} mean {:.4} ± {:.4}", s.rmse_mean, s.rmse_std);
    }
    println!("{:.1}s, wrote {}", res.runtime_seconds, files.csv.display());
    Ok(())
}
