//! Train-mode HerPN on a batch, freeze it, and fold each channel into one
//! quadratic `c2 x^2 + c1 x + c0`.

use hermite_pi::herpn::{fold_to_quadratic, herpn_forward_infer, herpn_forward_train, HerPNParams, Mode};
use hermite_pi::nn::zoo::Init;

fn main() -> anyhow::Result<()> {
    let channels = 3;
    let mut p = HerPNParams::new(channels);
    p.mode = Mode::Train;
    p.momentum = 1.0;
    p.gamma = vec![1.0, 0.5, -2.0];
    p.beta = vec![0.0, 0.1, 0.3];

    let batch = Init::new(3).uniform(&[64, channels], 2.0);
    let (y_train, _) = herpn_forward_train(&batch, &mut p)?;
    println!("coefficients f = {:?}", p.coeffs);

    p.mode = Mode::Infer;
    let q = fold_to_quadratic(&p)?;
    for c in 0..channels {
        println!("channel {c}: c2 = {:+.5}, c1 = {:+.5}, c0 = {:+.5}", q.c2[c], q.c1[c], q.c0[c]);
    }

    // With momentum 1 the frozen statistics are the batch statistics, so
    // inference, the folded quadratic and the training forward agree.
    let y_infer = herpn_forward_infer(&batch, &p)?;
    let mut worst = 0.0f64;
    for (j, &x) in batch.data().iter().enumerate() {
        let c = j % channels;
        worst = worst.max((q.eval(c, x) - y_infer.data()[j]).abs());
    }
    println!("max |folded - infer| = {worst:.2e}");
    println!("max |infer - train| = {:.2e}", y_infer.max_abs_diff(&y_train));
    Ok(())
}
