//! Reverse-mode gradient of a Dormand–Prince residual with respect to the
//! states and parameters, checked against central differences.
//!
//! ```text
//! cargo run --release --example differentiable_step
//! ```

use pidm::guidance::physics_loss;
use pidm::integrator::dp45_rollout;
use pidm::systems::SystemKind;
use pidm::tensor::{Tape, Tensor};

fn loss_at(states: &Tensor, params: &Tensor, dt: f64) -> f64 {
    let tape = Tape::new();
    let l = physics_loss(tape.constant(states.clone()), tape.constant(params.clone()), SystemKind::Lorenz, dt).unwrap();
    l.value().item().unwrap()
}

fn main() -> pidm::Result<()> {
    let spec = SystemKind::Lorenz.spec();
    let p = spec.canonical_params();
    let dt = 0.05;
    let traj = dp45_rollout(&spec, &[1.0, 2.0, 20.0], &p, dt, 7, 1)?;
    // Channel-major [D_s, L] with a small perturbation so the residual is non-zero.
    let states = traj.transpose2()?.map(|v| v * 1.01);
    let params = Tensor::from_vec(vec![9.5, 28.5, 2.5]);

    let tape = Tape::new();
    let (x, q) = (tape.leaf(states.clone()), tape.leaf(params.clone()));
    let loss = physics_loss(x, q, SystemKind::Lorenz, dt)?;
    let grads = tape.backward(loss)?;
    println!("log(1 + mse) = {:.6}", loss.value().item()?);

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (name, base, g) in [("params", &params, grads.wrt(q)), ("states", &states, grads.wrt(x))] {
        for i in 0..base.numel() {
            let bump = |s: f64| {
                let mut t = base.clone();
                t.data_mut()[i] += s * h;
                t
            };
            let fd = if name == "params" {
                (loss_at(&states, &bump(1.0), dt) - loss_at(&states, &bump(-1.0), dt)) / (2.0 * h)
            } else {
                (loss_at(&bump(1.0), &params, dt) - loss_at(&bump(-1.0), &params, dt)) / (2.0 * h)
            };
            let ad = g.data()[i];
            worst = worst.max((ad - fd).abs() / fd.abs().max(1e-8));
            if name == "params" {
                println!("d/d{:<5} tape {ad:>12.6e}  finite diff {fd:>12.6e}", p.names[i]);
            }
        }
    }
    println!("largest relative gap over all {} inputs: {worst:.2e}", states.numel() + params.numel());
    Ok(())
}
