use crate::error::Result;
use crate::tensor::{BackwardOp, Tape, Tensor, Var};

struct ReluOp;
impl BackwardOp for ReluOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        // relu'(0) = 0
        vec![needs[0].then(|| {
            grad.iter()
                .zip(inputs[0].data())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect()
        })]
    }
}

struct SigmoidOp;
impl BackwardOp for SigmoidOp {
    fn backward(&self, grad: &[f64], _: &[&Tensor], out: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| grad.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect())]
    }
}

struct SoftmaxOp {
    cols: usize,
}
impl BackwardOp for SoftmaxOp {
    fn backward(&self, grad: &[f64], _: &[&Tensor], out: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| {
            let mut dx = vec![0.0; grad.len()];
            for ((dx, gy), y) in dx
                .chunks_exact_mut(self.cols)
                .zip(grad.chunks_exact(self.cols))
                .zip(out.data().chunks_exact(self.cols))
            {
                let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                for i in 0..self.cols {
                    dx[i] = y[i] * (gy[i] - dot);
                }
            }
            dx
        })]
    }
}

/// Logistic function without overflow for large |x|.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let out = Tensor::from_parts(src.shape().clone(), src.data().iter().map(|&v| v.max(0.0)).collect());
        if self.tracks_branches() {
            let words: Vec<u64> = self
                .value(x)
                .data()
                .chunks(64)
                .map(|chunk| chunk.iter().enumerate().fold(0u64, |w, (i, &v)| w | (u64::from(v > 0.0) << i)))
                .collect();
            self.note_branches(words);
        }
        self.record(out, &[x], ReluOp)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let out = Tensor::from_parts(src.shape().clone(), src.data().iter().map(|&v| stable_sigmoid(v)).collect());
        self.record(out, &[x], SigmoidOp)
    }

    /// Row-wise softmax over the last dimension of a `[N, K]` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let dims = self.shape(x).dims();
        let cols = *dims.last().expect("shapes have rank >= 1");
        let src = self.value(x);
        let mut out = Vec::with_capacity(src.numel());
        for row in src.data().chunks_exact(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            out.extend(exps.iter().map(|e| e / total));
        }
        let out = Tensor::from_parts(src.shape().clone(), out);
        Ok(self.record(out, &[x], SoftmaxOp { cols }))
    }
}
