//! Scores degraded copies of a smooth map with half-MSE, mean SSIM and the
//! combined pretraining loss.

use dpnn::losses::{mean_ssim, mse_half, pretrain_loss, LossVariant, SsimConfig};
use dpnn::tensor::{Tape, Tensor};

fn map(f: impl Fn(usize, usize) -> f64) -> Tensor {
    let v = (0..64 * 64).map(|i| f(i / 64, i % 64).clamp(0.0, 1.0)).collect();
    Tensor::from_vec(v, [1, 1, 64, 64]).unwrap()
}

fn main() -> dpnn::Result<()> {
    let cfg = SsimConfig::default();
    let blob = |y: usize, x: usize| {
        let (dy, dx) = (y as f64 - 30.0, x as f64 - 34.0);
        (-(dy * dy + dx * dx) / 150.0).exp()
    };
    let target = map(blob);
    let candidates = [
        ("identical", map(blob)),
        ("brighter", map(|y, x| blob(y, x) + 0.1)),
        ("striped", map(|y, x| blob(y, x) + if x % 2 == 0 { 0.08 } else { -0.08 })),
        ("shifted", map(|y, x| blob(y, x.saturating_sub(4)))),
        ("flat", map(|_, _| 0.3)),
    ];
    println!("{:<10}{:>12}{:>12}{:>14}", "candidate", "half-MSE", "mean SSIM", "MSE - SSIM");
    for (name, p) in &candidates {
        let mut t = Tape::new();
        let (pv, gv) = (t.leaf(p.clone()), t.leaf(target.clone()));
        let mse = mse_half(&mut t, pv, gv)?;
        let ssim = mean_ssim(&mut t, pv, gv, &cfg)?;
        let loss = pretrain_loss(&mut t, pv, gv, &cfg, LossVariant::MseSsim)?;
        let v = |var| t.value(var).item().unwrap();
        println!("{name:<10}{:>12.6}{:>12.6}{:>14.6}", v(mse), v(ssim), v(loss));
    }
    Ok(())
}
