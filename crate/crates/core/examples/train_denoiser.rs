//! Train the desk-scale denoiser on a freshly generated corpus.
//!
//! ```text
//! cargo run --release --example train_denoiser -- [system] [steps] [out] [lr]
//! ```

use std::time::Instant;

use pidm::dataset::{generate_corpus, CorpusPreset, DEFAULT_DT};
use pidm::diffusion::{fit_checkpoint, TrainConfig};
use pidm::systems::{Condition, SystemKind};

fn main() -> pidm::Result<()> {
    let mut args = std::env::args().skip(1);
    let system: SystemKind = args.next().as_deref().unwrap_or("lorenz").parse()?;
    let steps: usize = args.next().map_or(1500, |s| s.parse().expect("steps must be an integer"));
    let out = args.next().unwrap_or_else(|| format!("{system}_desk.pidmw"));
    let lr: Option<f64> = args.next().map(|s| s.parse().expect("lr must be a number"));

    let spec = system.spec();
    let p = CorpusPreset::DESK;
    let corpus = generate_corpus(&spec, p.n_traj, p.len, p.transient, DEFAULT_DT, Condition::Id, 42)?;
    println!("corpus {:?}, {} resampled rollouts", corpus.z.shape(), corpus.meta.rejections);

    let mut cfg = TrainConfig::desk();
    cfg.steps = steps;
    if let Some(lr) = lr {
        cfg.lr = lr;
    }
    let start = Instant::now();
    let ck = fit_checkpoint(&corpus, "desk", &cfg, |r| {
        if r.step % 50 == 0 || r.step + 1 == steps {
            println!("step {:>5}  loss {:.4}  |g| {:.3}  lr {:.2e}", r.step, r.loss, r.grad_norm, r.lr);
        }
    })?;
    println!("{} parameters trained in {:.1}s", ck.model.num_parameters(), start.elapsed().as_secs_f64());
    ck.save(&out)?;
    println!("wrote {out}");
    Ok(())
}
