use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Tape, Tensor, Var};

/// Per-channel statistics of one training batch (biased variance).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Which statistics normalize the input.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a> {
    /// Statistics of the current batch.
    Batch,
    /// Fixed running estimates.
    Running { mean: &'a [f64], var: &'a [f64] },
}

struct BatchNormOp {
    channels: usize,
    batch: usize,
    plane: usize,
    /// Normalized input x̂, same layout as x.
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Batch statistics were used, so x̂ depends on every element of its channel.
    coupled: bool,
}

impl BackwardOp for BatchNormOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let gamma = inputs[1].data();
        let (c_n, plane) = (self.channels, self.plane);
        let mut sum_dy = vec![0.0; c_n];
        let mut sum_dy_xhat = vec![0.0; c_n];
        for n in 0..self.batch {
            for c in 0..c_n {
                let off = (n * c_n + c) * plane;
                let (gy, xh) = (&grad[off..off + plane], &self.xhat[off..off + plane]);
                sum_dy[c] += gy.iter().sum::<f64>();
                sum_dy_xhat[c] += gy.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; grad.len()];
            let m = (self.batch * plane) as f64;
            for n in 0..self.batch {
                for c in 0..c_n {
                    let off = (n * c_n + c) * plane;
                    let scale = gamma[c] * self.inv_std[c];
                    let dst = &mut dx[off..off + plane];
                    let (gy, xh) = (&grad[off..off + plane], &self.xhat[off..off + plane]);
                    if self.coupled {
                        let (mean_dy, mean_dy_xhat) = (sum_dy[c] / m, sum_dy_xhat[c] / m);
                        for i in 0..plane {
                            dst[i] = scale * (gy[i] - mean_dy - xh[i] * mean_dy_xhat);
                        }
                    } else {
                        for i in 0..plane {
                            dst[i] = scale * gy[i];
                        }
                    }
                }
            }
            dx
        });
        vec![dx, needs[1].then_some(sum_dy_xhat), needs[2].then_some(sum_dy)]
    }
}

impl Tape {
    /// Per-channel normalization of `[N, C, H, W]` input followed by the
    /// affine map `gamma · x̂ + beta`.
    ///
    /// With [`NormStats::Batch`] the batch statistics are returned so the
    /// caller can fold them into its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let [n, c_n, h, w] = self.shape(x).nchw("batch_norm input")?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v).dims() != [c_n] {
                return Err(Error::shape(format!(
                    "batch_norm: {name} shape {} does not match {c_n} channels",
                    self.shape(v)
                )));
            }
        }
        let plane = h * w;
        let xd = self.value(x).data();

        let (mean, var, batch_stats) = match stats {
            NormStats::Batch => {
                let count = n * plane;
                if count < 2 {
                    return Err(Error::contract(format!(
                        "batch_norm in training mode needs at least 2 elements per channel, got {count}"
                    )));
                }
                let mut mean = vec![0.0; c_n];
                let mut var = vec![0.0; c_n];
                for c in 0..c_n {
                    let channel = (0..n).flat_map(|b| {
                        let off = (b * c_n + c) * plane;
                        xd[off..off + plane].iter()
                    });
                    let mu = channel.clone().sum::<f64>() / count as f64;
                    let v = channel.map(|&v| (v - mu) * (v - mu)).sum::<f64>() / count as f64;
                    mean[c] = mu;
                    var[c] = v;
                }
                let s = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(s))
            }
            NormStats::Running { mean, var } => {
                if mean.len() != c_n || var.len() != c_n {
                    return Err(Error::shape(format!(
                        "batch_norm: running stats have {}/{} entries for {c_n} channels",
                        mean.len(),
                        var.len()
                    )));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..n {
            for c in 0..c_n {
                let off = (b * c_n + c) * plane;
                for i in off..off + plane {
                    let xh = (xd[i] - mean[c]) * inv_std[c];
                    xhat[i] = xh;
                    out[i] = gd[c] * xh + bd[c];
                }
            }
        }
        let shape = self.shape(x).clone();
        let op = BatchNormOp {
            channels: c_n,
            batch: n,
            plane,
            xhat,
            inv_std,
            coupled: batch_stats.is_some(),
        };
        let y = self.record(Tensor::from_parts(shape, out), &[x, gamma, beta], op);
        Ok((y, batch_stats))
    }
}
