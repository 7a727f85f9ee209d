//! Differentiable layer primitives and their parameter containers.
//!
//! The tape-level operations (`Tape::conv2d`, `Tape::batch_norm`, ...) are
//! defined in the submodules; [`Conv2d`] and [`BatchNorm`] own the parameter
//! handles and the non-differentiable running statistics.

mod activation;
mod conv;
mod norm;
mod pool;

pub use activation::stable_sigmoid;
pub use norm::{BatchStats, NormStats};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Training uses batch statistics and updates running estimates; inference
/// uses the running estimates only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Square-kernel convolution parameters (`[C_out, C_in, k, k]` weights, `[C_out]` bias).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Registers zero-initialized weights and bias under `name.weight` / `name.bias`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if !matches!(kernel, 1 | 3) {
            return Err(Error::contract(format!("{name}: kernel must be 1 or 3, got {kernel}")));
        }
        if in_channels == 0 || out_channels == 0 || stride == 0 {
            return Err(Error::contract(format!(
                "{name}: channels and stride must be positive ({in_channels} -> {out_channels}, stride {stride})"
            )));
        }
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::zeros([out_channels, in_channels, kernel, kernel])?,
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_channels])?, false);
        Ok(Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn fan_out(&self) -> usize {
        self.out_channels * self.kernel * self.kernel
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, bound.var(self.weight), bound.var(self.bias), self.stride, self.padding)
    }
}

/// Batch normalization with affine scale/shift and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    /// Registers `name.gamma` (ones, decayed) and `name.beta` (zeros).
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full([channels], 1.0)?, true);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros([channels])?, false);
        Ok(BatchNorm {
            gamma,
            beta,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, mode: Mode) -> Result<(Var, Option<BatchStats>)> {
        let stats = match mode {
            Mode::Train => NormStats::Batch,
            Mode::Infer => NormStats::Running {
                mean: &self.running_mean,
                var: &self.running_var,
            },
        };
        tape.batch_norm(x, bound.var(self.gamma), bound.var(self.beta), stats, self.eps)
    }

    /// `run ← momentum · run + (1 − momentum) · batch`.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_follow_recursion() {
        let mut store = ParamStore::new();
        let mut bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
        let batch = Tensor::from_vec(vec![1.0, 3.0, 5.0, 7.0], [1, 1, 2, 2]).unwrap();
        // batch mean 4, biased variance (9 + 1 + 1 + 9) / 4 = 5
        for _ in 0..2 {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let x = tape.leaf(batch.clone());
            let (_, stats) = bn.forward(&mut tape, &bound, x, Mode::Train).unwrap();
            bn.update_running(&stats.unwrap());
        }
        // mean: 0 → 0.4 → 0.76 ; var: 1 → 1.4 → 1.76
        assert!((bn.running_mean[0] - 0.76).abs() < 1e-12);
        assert!((bn.running_var[0] - 1.76).abs() < 1e-12);

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = tape.leaf(batch.clone());
        let (y, stats) = bn.forward(&mut tape, &bound, x, Mode::Infer).unwrap();
        assert!(stats.is_none());
        let inv = 1.0 / (1.76f64 + 1e-5).sqrt();
        for (got, xv) in tape.value(y).data().iter().zip(batch.data()) {
            assert!((got - (xv - 0.76) * inv).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_sizes_are_restricted() {
        let mut store = ParamStore::new();
        assert!(Conv2d::new(&mut store, "c", 1, 1, 5, 1, 2).is_err());
        assert!(Conv2d::new(&mut store, "c", 1, 1, 3, 1, 1).is_ok());
    }
}
