//! Butcher tableau consistency and empirical order of the fixed-step
//! Dormand–Prince integrator on every system.
//!
//! ```text
//! cargo run --release --example integrator_convergence -- [horizon]
//! ```

use pidm::integrator::{convergence_order, dp45_rollout, DP5};
use pidm::rng::substream;
use pidm::systems::SystemKind;

fn main() -> pidm::Result<()> {
    let horizon: f64 = std::env::args().nth(1).map_or(1.0, |s| s.parse().expect("horizon must be a number"));
    println!("sum_j a_ij - c_i : {:.2e}", DP5.row_sum_residual());
    println!("sum_i b_i - 1    : {:.2e}", DP5.weight_sum_residual());
    for kind in SystemKind::ALL {
        let spec = kind.spec();
        let p = spec.canonical_params();
        let x0 = spec.initial_state(&p, &mut substream(0, 0));
        // Start on the attractor so the order reflects typical dynamics.
        let warm = dp45_rollout(&spec, &x0, &p, 0.05, 200, spec.groundtruth_substeps)?;
        let x = &warm.data()[200 * spec.state_dim..];
        println!("{kind:<11} order over t = {horizon}: {:.3}", convergence_order(&spec, x, &p, horizon));
    }
    Ok(())
}
