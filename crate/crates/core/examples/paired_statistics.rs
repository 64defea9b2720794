//! Exact and large-sample Wilcoxon signed-rank tests, RMSE sanitisation and
//! parameter MAPE.
//!
//! ```text
//! cargo run --release --example paired_statistics
//! ```

use pidm::metrics::{mape, rmse, wilcoxon_signed_rank};
use pidm::tensor::Tensor;

fn main() -> pidm::Result<()> {
    // Five trials where one method always wins: the smallest two-sided p.
    let five = [(1.0, 2.0), (0.5, 1.5), (2.0, 2.4), (0.1, 0.9), (3.0, 4.0)];
    let r = wilcoxon_signed_rank(&five)?;
    println!("n=5 one-sided wins: W={} p={} exact={}", r.statistic, r.p_value, r.exact);

    let thirty: Vec<(f64, f64)> = (0..30)
        .map(|i| {
            let x = i as f64;
            (x.sin() + 1.5, (1.7 * x).cos() + 1.6)
        })
        .collect();
    let r = wilcoxon_signed_rank(&thirty)?;
    println!("n=30 mixed: W={} p={:.4} exact={}", r.statistic, r.p_value, r.exact);

    let truth = Tensor::zeros(&[4, 3]);
    let mut recon = Tensor::full(&[4, 3], 0.5);
    recon.data_mut()[5] = f64::NAN;
    println!("rmse with one NaN entry: {:.4}", rmse(&recon, &truth)?);

    let rows = Tensor::from_fn(&[3, 10], |i| [11.0, 30.8, 8.0 / 3.0][i / 10]);
    println!("mape {:?}", mape(&rows, &[10.0, 28.0, 8.0 / 3.0])?);
    Ok(())
}
