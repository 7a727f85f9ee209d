use crate::error::{Error, Result};
use crate::tensor::kernels::{col2im_add, gemm, im2col, ConvGeom};
use crate::tensor::{BackwardOp, Shape, Tape, Tensor, Var};

struct Conv2dOp {
    geom: ConvGeom,
    batch: usize,
    out_channels: usize,
}

impl BackwardOp for Conv2dOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let g = &self.geom;
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let (k_rows, hw_out) = (g.col_rows(), g.col_cols());
        let in_len = g.channels * g.height * g.width;
        let out_len = self.out_channels * hw_out;

        let mut dx = needs[0].then(|| vec![0.0; x.len()]);
        let mut dw = needs[1].then(|| vec![0.0; w.len()]);
        let mut db = needs[2].then(|| vec![0.0; self.out_channels]);
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k_rows * hw_out] };
        let mut dcols = if g.is_pointwise() || dx.is_none() {
            Vec::new()
        } else {
            vec![0.0; k_rows * hw_out]
        };

        for n in 0..self.batch {
            let gy = &grad[n * out_len..(n + 1) * out_len];
            let xn = &x[n * in_len..(n + 1) * in_len];
            if let Some(db) = db.as_mut() {
                for (c, acc) in db.iter_mut().enumerate() {
                    *acc += gy[c * hw_out..(c + 1) * hw_out].iter().sum::<f64>();
                }
            }
            if let Some(dw) = dw.as_mut() {
                let colmat: &[f64] = if g.is_pointwise() {
                    xn
                } else {
                    im2col(xn, g, &mut cols);
                    &cols
                };
                gemm(self.out_channels, hw_out, k_rows, gy, false, colmat, true, 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx[n * in_len..(n + 1) * in_len];
                if g.is_pointwise() {
                    gemm(k_rows, self.out_channels, hw_out, w, true, gy, false, 1.0, dxn);
                } else {
                    gemm(k_rows, self.out_channels, hw_out, w, true, gy, false, 0.0, &mut dcols);
                    col2im_add(&dcols, g, dxn);
                }
            }
        }
        vec![dx, dw, db]
    }
}

impl Tape {
    /// 2-D cross-correlation with per-channel bias.
    ///
    /// `x` is `[N, C_in, H, W]`, `weight` is `[C_out, C_in, k, k]`, `bias` is
    /// `[C_out]`. Output extent is `floor((H + 2·pad − k) / stride) + 1`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c_in, h, w] = self.shape(x).nchw("conv2d input")?;
        let [c_out, wc_in, kh, kw] = self.shape(weight).nchw("conv2d weight")?;
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv2d: input has {c_in} channels, kernel expects {wc_in}"
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!("conv2d: kernel {kh}x{kw} is not square")));
        }
        if self.shape(bias).dims() != [c_out] {
            return Err(Error::shape(format!(
                "conv2d: bias shape {} does not match {c_out} output channels",
                self.shape(bias)
            )));
        }
        let geom = ConvGeom::new(c_in, h, w, kh, stride, pad).ok_or_else(|| {
            Error::shape(format!(
                "conv2d: {h}x{w} input with kernel {kh}, stride {stride}, pad {pad} has no output"
            ))
        })?;

        let (k_rows, hw_out) = (geom.col_rows(), geom.col_cols());
        let in_len = c_in * h * w;
        let out_len = c_out * hw_out;
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let bd = self.value(bias).data();
        let mut out = vec![0.0; n * out_len];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![0.0; k_rows * hw_out] };
        for i in 0..n {
            let xn = &xd[i * in_len..(i + 1) * in_len];
            let yn = &mut out[i * out_len..(i + 1) * out_len];
            for (c, &b) in bd.iter().enumerate() {
                yn[c * hw_out..(c + 1) * hw_out].fill(b);
            }
            let colmat: &[f64] = if geom.is_pointwise() {
                xn
            } else {
                im2col(xn, &geom, &mut cols);
                &cols
            };
            gemm(c_out, k_rows, hw_out, wd, false, colmat, false, 1.0, yn);
        }
        let shape = Shape::new([n, c_out, geom.out_h, geom.out_w])?;
        Ok(self.record(
            Tensor::from_parts(shape, out),
            &[x, weight, bias],
            Conv2dOp {
                geom,
                batch: n,
                out_channels: c_out,
            },
        ))
    }
}
