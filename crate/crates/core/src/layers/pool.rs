use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Shape, Tape, Tensor, Var};

struct MaxPoolOp {
    /// Flat input index of each output's winning cell.
    argmax: Vec<usize>,
}

impl BackwardOp for MaxPoolOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| {
            let mut dx = vec![0.0; inputs[0].numel()];
            for (&src, g) in self.argmax.iter().zip(grad) {
                dx[src] += g;
            }
            dx
        })]
    }
}

struct GlobalAvgPoolOp {
    plane: usize,
}

impl BackwardOp for GlobalAvgPoolOp {
    fn backward(&self, grad: &[f64], _: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let scale = 1.0 / self.plane as f64;
        vec![needs[0].then(|| grad.iter().flat_map(|g| std::iter::repeat_n(g * scale, self.plane)).collect())]
    }
}

impl Tape {
    /// 2×2 max pooling with stride 2. A trailing odd row or column is
    /// dropped; ties go to the lowest flat index in the window.
    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(x).nchw("max_pool2d input")?;
        if h < 2 || w < 2 {
            return Err(Error::shape(format!("max_pool2d needs H, W >= 2, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        if self.tracks_branches() {
            self.note_branches(argmax.iter().map(|&i| i as u64));
        }
        let shape = Shape::new([n, c, oh, ow])?;
        Ok(self.record(Tensor::from_parts(shape, out), &[x], MaxPoolOp { argmax }))
    }

    /// Mean over the spatial extent of each channel: `[N, C, H, W] → [N, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(x).nchw("global_avg_pool input")?;
        let plane = h * w;
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(plane)
            .map(|ch| ch.iter().sum::<f64>() / plane as f64)
            .collect();
        let shape = Shape::new([n, c, 1, 1])?;
        Ok(self.record(Tensor::from_parts(shape, out), &[x], GlobalAvgPoolOp { plane }))
    }
}
