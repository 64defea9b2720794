use pidm::dataset::{DEFAULT_DT, DEFAULT_TRANSIENT};
use pidm::integrator::dp45_rollout;
use pidm::lyapunov::rosenstein_mle;
use pidm::rng::substream;
use pidm::systems::SystemKind;

/// Finite-sample reference for Lorenz at `L = 1000`.
const LORENZ_FINITE_SAMPLE: f64 = 0.573;

#[test]
fn lorenz_thousand_step_estimate_matches_finite_sample_reference() {
    let spec = SystemKind::Lorenz.spec();
    let p = spec.canonical_params();
    let n = DEFAULT_TRANSIENT + 999;
    let est: Vec<f64> = (0..5)
        .map(|i| {
            let x0 = spec.initial_state(&p, &mut substream(3, i));
            let full = dp45_rollout(&spec, &x0, &p, DEFAULT_DT, n, spec.groundtruth_substeps).unwrap();
            let states = full.slice_axis(0, DEFAULT_TRANSIENT, n + 1).unwrap();
            rosenstein_mle(&states, DEFAULT_DT, &spec.lyapunov).unwrap().lambda_max
        })
        .collect();
    let mean = est.iter().sum::<f64>() / est.len() as f64;
    assert!((mean - LORENZ_FINITE_SAMPLE).abs() <= 0.25 * LORENZ_FINITE_SAMPLE, "{mean} from {est:?}");
}
