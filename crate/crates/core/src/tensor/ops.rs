//! Elementwise arithmetic and reductions.

use super::{BackwardOp, Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

struct AddOp;
impl BackwardOp for AddOp {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        needs.iter().map(|&n| n.then(|| g.to_vec())).collect()
    }
}

struct SubOp;
impl BackwardOp for SubOp {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| g.iter().map(|v| -v).collect()),
        ]
    }
}

struct MulOp;
impl BackwardOp for MulOp {
    fn backward(&self, g: &[f64], inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        vec![
            needs[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
            needs[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
        ]
    }
}

struct ScaleOp(f64);
impl BackwardOp for ScaleOp {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| g.iter().map(|v| v * self.0).collect())]
    }
}

/// Sum of all elements scaled by a constant (1 for sum, 1/n for mean).
struct ReduceOp(f64);
impl BackwardOp for ReduceOp {
    fn backward(&self, g: &[f64], inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| vec![g[0] * self.0; inputs[0].numel()])]
    }
}

struct ReshapeOp;
impl BackwardOp for ReshapeOp {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| g.to_vec())]
    }
}

impl Tape {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(format!("{what}: operand shapes {sa} and {sb} differ")));
        }
        Ok(sa.clone())
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, [Var; 2])> {
        let shape = self.same_shape(a, b, what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((Tensor::from_parts(shape, data), [a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ins) = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.record(t, &ins, AddOp))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ins) = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.record(t, &ins, SubOp))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ins) = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.record(t, &ins, MulOp))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let src = self.value(a);
        let t = Tensor::from_parts(src.shape().clone(), src.data().iter().map(|v| v * c).collect());
        self.record(t, &[a], ScaleOp(c))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.record(Tensor::scalar(s), &[a], ReduceOp(1.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let n = src.numel() as f64;
        let s: f64 = src.data().iter().sum::<f64>() / n;
        self.record(Tensor::scalar(s), &[a], ReduceOp(1.0 / n))
    }

    pub fn reshape(&mut self, a: Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).clone().reshape(dims)?;
        Ok(self.record(t, &[a], ReshapeOp))
    }
}
