//! Independent reference implementations shared by the integration tests
//! and the acceptance gate.

#![allow(dead_code)]

use dpnn::data::Volume;
use dpnn::error::Result;
use dpnn::layers::{NormStats, BN_EPS};
use dpnn::losses::{cross_entropy, mean_ssim, mse_half, pretrain_loss, LossVariant, SsimConfig};
use dpnn::tensor::{finite_diff_check, GradCheckReport, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_H: f64 = 1e-3;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.random_range(lo..hi)).collect(), dims.to_vec()).unwrap()
}

/// `Σ y ⊙ R` for a fixed random `R`, turning any output into a scalar with
/// a generic upstream gradient.
pub fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let dims = tape.shape(y).dims().to_vec();
    let r = uniform(&mut rng(seed), &dims, -1.0, 1.0);
    let rv = tape.leaf(r);
    let prod = tape.mul(y, rv)?;
    Ok(tape.sum(prod))
}

/// Central-difference checks of every layer and loss with respect to
/// every differentiable input.
pub fn gradcheck_suite() -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    let mut r = rng(0x6772_6164);
    let mut check = |name: &str, x: &Tensor, f: &dyn Fn(&mut Tape, Var) -> Result<Var>| -> Result<()> {
        out.push((name.to_owned(), finite_diff_check(f, x, GRAD_H, GRAD_TOL)?));
        Ok(())
    };

    let x = uniform(&mut r, &[2, 3, 6, 5], -1.0, 1.0);
    let w = uniform(&mut r, &[4, 3, 3, 3], -0.5, 0.5);
    let b = uniform(&mut r, &[4], -0.5, 0.5);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let tag = format!("conv2d s{stride} p{pad}");
        let (w1, b1) = (w.clone(), b.clone());
        check(&format!("{tag} wrt x"), &x, &|t, xv| {
            let (wv, bv) = (t.leaf(w1.clone()), t.leaf(b1.clone()));
            let y = t.conv2d(xv, wv, bv, stride, pad)?;
            weighted_sum(t, y, 1)
        })?;
        let (x1, b1) = (x.clone(), b.clone());
        check(&format!("{tag} wrt weight"), &w, &|t, wv| {
            let (xv, bv) = (t.leaf(x1.clone()), t.leaf(b1.clone()));
            let y = t.conv2d(xv, wv, bv, stride, pad)?;
            weighted_sum(t, y, 1)
        })?;
        let (x1, w1) = (x.clone(), w.clone());
        check(&format!("{tag} wrt bias"), &b, &|t, bv| {
            let (xv, wv) = (t.leaf(x1.clone()), t.leaf(w1.clone()));
            let y = t.conv2d(xv, wv, bv, stride, pad)?;
            weighted_sum(t, y, 1)
        })?;
    }

    let w11 = uniform(&mut r, &[3, 3, 1, 1], -0.5, 0.5);
    let b11 = uniform(&mut r, &[3], -0.5, 0.5);
    {
        let (w1, b1) = (w11.clone(), b11.clone());
        check("conv1x1 wrt x", &x, &|t, xv| {
            let (wv, bv) = (t.leaf(w1.clone()), t.leaf(b1.clone()));
            let y = t.conv2d(xv, wv, bv, 1, 0)?;
            weighted_sum(t, y, 2)
        })?;
        let x1 = x.clone();
        let b1 = b11.clone();
        check("conv1x1 wrt weight", &w11, &|t, wv| {
            let (xv, bv) = (t.leaf(x1.clone()), t.leaf(b1.clone()));
            let y = t.conv2d(xv, wv, bv, 1, 0)?;
            weighted_sum(t, y, 2)
        })?;
    }

    let gamma = uniform(&mut r, &[3], 0.5, 1.5);
    let beta = uniform(&mut r, &[3], -0.5, 0.5);
    let running_mean = vec![0.1, -0.2, 0.05];
    let running_var = vec![0.9, 1.3, 0.6];
    {
        let (g1, b1) = (gamma.clone(), beta.clone());
        check("batch_norm (batch stats) wrt x", &x, &|t, xv| {
            let (gv, bv) = (t.leaf(g1.clone()), t.leaf(b1.clone()));
            let (y, _) = t.batch_norm(xv, gv, bv, NormStats::Batch, BN_EPS)?;
            weighted_sum(t, y, 3)
        })?;
        let (x1, b1) = (x.clone(), beta.clone());
        check("batch_norm wrt gamma", &gamma, &|t, gv| {
            let (xv, bv) = (t.leaf(x1.clone()), t.leaf(b1.clone()));
            let (y, _) = t.batch_norm(xv, gv, bv, NormStats::Batch, BN_EPS)?;
            weighted_sum(t, y, 3)
        })?;
        let (x1, g1) = (x.clone(), gamma.clone());
        check("batch_norm wrt beta", &beta, &|t, bv| {
            let (xv, gv) = (t.leaf(x1.clone()), t.leaf(g1.clone()));
            let (y, _) = t.batch_norm(xv, gv, bv, NormStats::Batch, BN_EPS)?;
            weighted_sum(t, y, 3)
        })?;
        let (g1, b1) = (gamma.clone(), beta.clone());
        let (rm, rv) = (running_mean.clone(), running_var.clone());
        check("batch_norm (running stats) wrt x", &x, &|t, xv| {
            let (gv, bv) = (t.leaf(g1.clone()), t.leaf(b1.clone()));
            let stats = NormStats::Running { mean: &rm, var: &rv };
            let (y, _) = t.batch_norm(xv, gv, bv, stats, BN_EPS)?;
            weighted_sum(t, y, 3)
        })?;
    }

    check("relu", &x, &|t, xv| {
        let y = t.relu(xv);
        weighted_sum(t, y, 4)
    })?;
    let wide = uniform(&mut r, &[2, 3, 4, 4], -6.0, 6.0);
    check("sigmoid", &wide, &|t, xv| {
        let y = t.sigmoid(xv);
        weighted_sum(t, y, 5)
    })?;
    check("max_pool2d", &x, &|t, xv| {
        let y = t.max_pool2d(xv)?;
        weighted_sum(t, y, 6)
    })?;
    check("global_avg_pool", &x, &|t, xv| {
        let y = t.global_avg_pool(xv)?;
        weighted_sum(t, y, 7)
    })?;
    let logits = uniform(&mut r, &[4, 3], -3.0, 3.0);
    check("softmax", &logits, &|t, xv| {
        let y = t.softmax(xv)?;
        weighted_sum(t, y, 8)
    })?;

    let p = uniform(&mut r, &[2, 1, 12, 13], 0.05, 0.95);
    let g = uniform(&mut r, &[2, 1, 12, 13], 0.0, 1.0);
    let ssim = SsimConfig::default();
    for (slot, (fixed, at)) in [("P", (g.clone(), p.clone())), ("G", (p.clone(), g.clone()))] {
        let f1 = fixed.clone();
        let first = slot == "P";
        let pair = move |t: &mut Tape, v: Var, f: &Tensor| {
            let other = t.leaf(f.clone());
            if first {
                (v, other)
            } else {
                (other, v)
            }
        };
        check(&format!("mse_half wrt {slot}"), &at, &|t, v| {
            let (a, b) = pair(t, v, &f1);
            mse_half(t, a, b)
        })?;
        check(&format!("mean_ssim wrt {slot}"), &at, &|t, v| {
            let (a, b) = pair(t, v, &f1);
            mean_ssim(t, a, b, &ssim)
        })?;
        for variant in [LossVariant::MseSsim, LossVariant::MseOnly] {
            check(&format!("pretrain_loss {variant:?} wrt {slot}"), &at, &|t, v| {
                let (a, b) = pair(t, v, &f1);
                pretrain_loss(t, a, b, &ssim, variant)
            })?;
        }
    }

    let labels = [0usize, 2, 1, 2];
    check("cross_entropy wrt probabilities", &uniform(&mut r, &[4, 3], 0.1, 0.9), &|t, pv| {
        cross_entropy(t, pv, &labels)
    })?;
    check("cross_entropy through softmax", &logits, &|t, xv| {
        let pr = t.softmax(xv)?;
        cross_entropy(t, pr, &labels)
    })?;
    Ok(out)
}

/// Mean SSIM over non-overlapping `window × window` tiles of `maps` stacked
/// `h × w` images, with single-pass sums for the moments.
pub fn ssim_oracle(p: &[f64], g: &[f64], h: usize, w: usize, cfg: &SsimConfig) -> f64 {
    let k = cfg.window;
    let maps = p.len() / (h * w);
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for m in 0..maps {
        for ty in 0..h / k {
            for tx in 0..w / k {
                let (mut sp, mut sg, mut spp, mut sgg, mut spg) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in ty * k..(ty + 1) * k {
                    for x in tx * k..(tx + 1) * k {
                        let i = m * h * w + y * w + x;
                        sp += p[i];
                        sg += g[i];
                        spp += p[i] * p[i];
                        sgg += g[i] * g[i];
                        spg += p[i] * g[i];
                    }
                }
                let (mp, mg) = (sp / n, sg / n);
                let vp = spp / n - mp * mp;
                let vg = sgg / n - mg * mg;
                let cov = spg / n - mp * mg;
                total += ((2.0 * mp * mg + cfg.c1) * (2.0 * cov + cfg.c2))
                    / ((mp * mp + mg * mg + cfg.c1) * (vp + vg + cfg.c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

/// `Σ (p − g)² / (2N)` by a plain loop.
pub fn mse_oracle(p: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] - g[i]) * (p[i] - g[i]);
    }
    s / (2.0 * p.len() as f64)
}

fn normalize(m: &[f64]) -> Vec<f64> {
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Depth projection from the leading singular pair of the `D × HW`
/// unfolding, found by alternating `u ← A v`, `v ← Aᵀ u` without forming
/// the Gram matrix.
pub fn tucker_oracle(v: &Volume) -> Vec<f64> {
    let (d, hw) = (v.depth, v.height * v.width);
    let a = |z: usize| v.slice(z);
    let mut u = vec![1.0 / (d as f64).sqrt(); d];
    for _ in 0..20_000 {
        let mut right = vec![0.0; hw];
        for z in 0..d {
            for (r, x) in right.iter_mut().zip(a(z)) {
                *r += u[z] * x;
            }
        }
        let mut next: Vec<f64> = (0..d).map(|z| a(z).iter().zip(&right).map(|(x, r)| x * r).sum()).collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        next.iter_mut().for_each(|x| *x /= norm);
        let delta = next.iter().zip(&u).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        u = next;
        if delta < 1e-14 {
            break;
        }
    }
    if u.iter().sum::<f64>() < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
    let mut m = vec![0.0; hw];
    for z in 0..d {
        for (acc, x) in m.iter_mut().zip(a(z)) {
            *acc += u[z] * x;
        }
    }
    normalize(&m)
}

/// `V[z, y, x] = a_z · B[y, x]` with positive `a`, and the expected
/// normalized map `(B − min) / (max − min)`.
pub fn rank1_volume(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> (Volume, Vec<f64>) {
    let a: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..2.0)).collect();
    let b: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut voxels = Vec::with_capacity(h * w * d);
    for az in &a {
        voxels.extend(b.iter().map(|x| az * x));
    }
    (Volume::new("rank1", h, w, d, voxels).unwrap(), normalize(&b))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
