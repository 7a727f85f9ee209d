//! Checks tape gradients of a small conv → batch norm → relu → pool stack
//! against central differences.

use dpnn::layers::{NormStats, BN_EPS};
use dpnn::tensor::{finite_diff_check, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), dims.to_vec()).unwrap()
}

fn main() -> dpnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[2, 3, 8, 8]);
    let w = random(&mut rng, &[4, 3, 3, 3]);
    let b = random(&mut rng, &[4]);
    let r = random(&mut rng, &[2, 4, 4, 4]);

    let forward = |t: &mut Tape, x: Var, w: Var, b: Var| -> dpnn::Result<Var> {
        let y = t.conv2d(x, w, b, 1, 1)?;
        let gamma = t.leaf(Tensor::full([4], 1.0)?);
        let beta = t.leaf(Tensor::zeros([4])?);
        let (y, _) = t.batch_norm(y, gamma, beta, NormStats::Batch, BN_EPS)?;
        let y = t.relu(y);
        let y = t.max_pool2d(y)?;
        let rv = t.leaf(r.clone());
        let y = t.mul(y, rv)?;
        Ok(t.sum(y))
    };

    let wrt_x = finite_diff_check(
        |t, xv| {
            let (wv, bv) = (t.leaf(w.clone()), t.leaf(b.clone()));
            forward(t, xv, wv, bv)
        },
        &x,
        1e-3,
        1e-4,
    )?;
    let wrt_w = finite_diff_check(
        |t, wv| {
            let (xv, bv) = (t.leaf(x.clone()), t.leaf(b.clone()));
            forward(t, xv, wv, bv)
        },
        &w,
        1e-3,
        1e-4,
    )?;
    println!("input:  {wrt_x}");
    println!("weight: {wrt_w}");
    Ok(())
}
