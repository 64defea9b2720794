//! Simulate a normalised corpus and a held-out observation scenario, then
//! write both to disk.
//!
//! ```text
//! cargo run --release --example generate_dataset -- [system] [condition] [out_dir]
//! ```

use std::path::PathBuf;

use pidm::dataset::{generate_corpus, scenario_from_raw, simulate_one, CorpusPreset, DEFAULT_DT, OBS_DENSITY, OBS_SIGMA};
use pidm::rng::substream;
use pidm::systems::{Condition, SystemKind};

fn main() -> pidm::Result<()> {
    let mut args = std::env::args().skip(1);
    let system: SystemKind = args.next().as_deref().unwrap_or("lorenz").parse()?;
    let condition: Condition = args.next().as_deref().unwrap_or("id").parse()?;
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    std::fs::create_dir_all(&dir)?;

    let spec = system.spec();
    let p = CorpusPreset::DESK;
    let corpus = generate_corpus(&spec, p.n_traj, p.len, p.transient, DEFAULT_DT, Condition::Id, 42)?;
    println!("{system}: {:?} after {} resampled rollouts", corpus.z.shape(), corpus.meta.rejections);
    for ch in 0..corpus.channels() {
        let name = spec.param_names.get(ch.wrapping_sub(spec.state_dim)).copied();
        let label = name.map_or_else(|| format!("x{ch}"), str::to_string);
        println!("  {label:<6} range [{:>9.3}, {:>9.3}]", corpus.stats.z_min[ch], corpus.stats.z_max[ch]);
    }
    let corpus_path = dir.join(format!("{system}_corpus.pidm"));
    corpus.save(&corpus_path)?;

    // Test scenarios may come from the OOD box but always reuse training statistics.
    let mut rng = substream(7, 0);
    let (raw, params, _) = simulate_one(&spec, p.len, p.transient, DEFAULT_DT, condition, &mut rng)?;
    let sc = scenario_from_raw(&spec, &raw, &corpus.stats, DEFAULT_DT, OBS_DENSITY, OBS_SIGMA, &mut rng)?;
    let obs_path = dir.join(format!("{system}_{condition}_obs.pidm"));
    sc.save(&obs_path)?;
    println!("{condition} scenario {:?}: observed steps {:?}", params.values, sc.obs.indices());
    println!("wrote {} and {}", corpus_path.display(), obs_path.display());
    Ok(())
}
