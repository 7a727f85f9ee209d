//! Pretraining objective (half-MSE minus mean windowed SSIM) and the
//! classification cross-entropy.
//!
//! SSIM is evaluated on non-overlapping `window × window` tiles; a trailing
//! partial tile along either axis is dropped. Window variances and the
//! covariance use the biased (divide by n) estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Tape, Tensor, Var};

/// Smallest probability allowed inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 6,
            c1: 1e-4,
            c2: 9e-4,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::config("ssim.window", format!("must be >= 2, got {}", self.window)));
        }
        if !(self.c1 > 0.0) {
            return Err(Error::config("ssim.c1", format!("must be positive, got {}", self.c1)));
        }
        if !(self.c2 > 0.0) {
            return Err(Error::config("ssim.c2", format!("must be positive, got {}", self.c2)));
        }
        Ok(())
    }
}

/// Which terms the pretraining loss combines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    /// Half-MSE minus mean SSIM.
    MseSsim,
    /// Half-MSE alone (the BL-1 ablation).
    MseOnly,
}

/// Moments of one pair of equally sized windows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStats {
    pub mu_p: f64,
    pub mu_g: f64,
    pub var_p: f64,
    pub var_g: f64,
    pub cov_pg: f64,
}

impl WindowStats {
    /// Two-pass moments of two equal-length windows.
    pub fn from_windows(p: &[f64], g: &[f64]) -> Self {
        debug_assert_eq!(p.len(), g.len());
        let n = p.len() as f64;
        let mu_p = p.iter().sum::<f64>() / n;
        let mu_g = g.iter().sum::<f64>() / n;
        let (mut var_p, mut var_g, mut cov_pg) = (0.0, 0.0, 0.0);
        for (a, b) in p.iter().zip(g) {
            let (dp, dg) = (a - mu_p, b - mu_g);
            var_p += dp * dp;
            var_g += dg * dg;
            cov_pg += dp * dg;
        }
        WindowStats {
            mu_p,
            mu_g,
            var_p: var_p / n,
            var_g: var_g / n,
            cov_pg: cov_pg / n,
        }
    }
}

/// `((2μpμg + C1)(2σpg + C2)) / ((μp² + μg² + C1)(σp² + σg² + C2))`.
pub fn ssim_window(s: &WindowStats, cfg: &SsimConfig) -> f64 {
    let var_p = s.var_p.max(0.0);
    let var_g = s.var_g.max(0.0);
    ((2.0 * s.mu_p * s.mu_g + cfg.c1) * (2.0 * s.cov_pg + cfg.c2))
        / ((s.mu_p * s.mu_p + s.mu_g * s.mu_g + cfg.c1) * (var_p + var_g + cfg.c2))
}

/// Layout of a stack of maps: every dimension before the last two is a batch dimension.
#[derive(Clone, Copy, Debug)]
struct Tiling {
    maps: usize,
    height: usize,
    width: usize,
    window: usize,
    rows: usize,
    cols: usize,
}

impl Tiling {
    fn new(dims: &[usize], window: usize) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::shape(format!("SSIM needs maps of rank >= 2, got {dims:?}")));
        }
        let (height, width) = (dims[dims.len() - 2], dims[dims.len() - 1]);
        if height < window || width < window {
            return Err(Error::shape(format!(
                "{height}x{width} map is smaller than one {window}x{window} SSIM window"
            )));
        }
        Ok(Tiling {
            maps: dims[..dims.len() - 2].iter().product(),
            height,
            width,
            window,
            rows: height / window,
            cols: width / window,
        })
    }

    fn windows(&self) -> usize {
        self.maps * self.rows * self.cols
    }

    /// Flat indices of the pixels of one tile, row-major.
    fn tile(&self, map: usize, row: usize, col: usize) -> impl Iterator<Item = usize> + '_ {
        let base = map * self.height * self.width;
        (0..self.window).flat_map(move |dy| {
            let start = base + (row * self.window + dy) * self.width + col * self.window;
            start..start + self.window
        })
    }

    fn gather(&self, data: &[f64], map: usize, row: usize, col: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(self.tile(map, row, col).map(|i| data[i]));
    }
}

struct MeanSsimOp {
    tiling: Tiling,
    cfg: SsimConfig,
}

impl BackwardOp for MeanSsimOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let t = &self.tiling;
        let (p, g) = (inputs[0].data(), inputs[1].data());
        let mut dp = needs[0].then(|| vec![0.0; p.len()]);
        let mut dg = needs[1].then(|| vec![0.0; g.len()]);
        let n = (t.window * t.window) as f64;
        let upstream = grad[0] / t.windows() as f64;
        let (mut wp, mut wg) = (Vec::new(), Vec::new());
        let c1 = self.cfg.c1;
        let c2 = self.cfg.c2;
        for m in 0..t.maps {
            for r in 0..t.rows {
                for c in 0..t.cols {
                    t.gather(p, m, r, c, &mut wp);
                    t.gather(g, m, r, c, &mut wg);
                    let s = WindowStats::from_windows(&wp, &wg);
                    let a = 2.0 * s.mu_p * s.mu_g + c1;
                    let b = 2.0 * s.cov_pg + c2;
                    let cc = s.mu_p * s.mu_p + s.mu_g * s.mu_g + c1;
                    let d = s.var_p + s.var_g + c2;
                    let ssim = a * b / (cc * d);
                    // partials of one window's SSIM w.r.t. its moments
                    let d_cov = upstream * 2.0 * ssim / b;
                    let d_var = -upstream * ssim / d;
                    let d_mu_p = upstream * ssim * (2.0 * s.mu_g / a - 2.0 * s.mu_p / cc);
                    let d_mu_g = upstream * ssim * (2.0 * s.mu_p / a - 2.0 * s.mu_g / cc);
                    for (k, idx) in t.tile(m, r, c).enumerate() {
                        let (ep, eg) = (wp[k] - s.mu_p, wg[k] - s.mu_g);
                        if let Some(dp) = dp.as_mut() {
                            dp[idx] += (d_mu_p + d_cov * eg + 2.0 * d_var * ep) / n;
                        }
                        if let Some(dg) = dg.as_mut() {
                            dg[idx] += (d_mu_g + d_cov * ep + 2.0 * d_var * eg) / n;
                        }
                    }
                }
            }
        }
        vec![dp, dg]
    }
}

fn check_pair(tape: &Tape, p: Var, g: Var, what: &str) -> Result<()> {
    if tape.shape(p) != tape.shape(g) {
        return Err(Error::shape(format!(
            "{what}: prediction {} and target {} differ in shape",
            tape.shape(p),
            tape.shape(g)
        )));
    }
    Ok(())
}

/// `(1 / 2N) · Σ (P − G)²` over all N elements.
pub fn mse_half(tape: &mut Tape, p: Var, g: Var) -> Result<Var> {
    check_pair(tape, p, g, "mse_half")?;
    let diff = tape.sub(p, g)?;
    let sq = tape.mul(diff, diff)?;
    let mean = tape.mean(sq);
    Ok(tape.scale(mean, 0.5))
}

/// Average SSIM over every tile of every map in `p` and `g`.
pub fn mean_ssim(tape: &mut Tape, p: Var, g: Var, cfg: &SsimConfig) -> Result<Var> {
    check_pair(tape, p, g, "mean_ssim")?;
    cfg.validate()?;
    let tiling = Tiling::new(tape.shape(p).dims(), cfg.window)?;
    let (pd, gd) = (tape.value(p).data(), tape.value(g).data());
    let (mut wp, mut wg) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for m in 0..tiling.maps {
        for r in 0..tiling.rows {
            for c in 0..tiling.cols {
                tiling.gather(pd, m, r, c, &mut wp);
                tiling.gather(gd, m, r, c, &mut wg);
                total += ssim_window(&WindowStats::from_windows(&wp, &wg), cfg);
            }
        }
    }
    let value = Tensor::scalar(total / tiling.windows() as f64);
    Ok(tape.record(value, &[p, g], MeanSsimOp { tiling, cfg: *cfg }))
}

/// Half-MSE minus mean SSIM, or half-MSE alone for [`LossVariant::MseOnly`].
pub fn pretrain_loss(tape: &mut Tape, p: Var, g: Var, cfg: &SsimConfig, variant: LossVariant) -> Result<Var> {
    let mse = mse_half(tape, p, g)?;
    match variant {
        LossVariant::MseOnly => Ok(mse),
        LossVariant::MseSsim => {
            let ssim = mean_ssim(tape, p, g, cfg)?;
            tape.sub(mse, ssim)
        }
    }
}

struct CrossEntropyOp {
    labels: Vec<usize>,
    classes: usize,
}

impl BackwardOp for CrossEntropyOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| {
            let probs = inputs[0].data();
            let n = self.labels.len() as f64;
            let mut d = vec![0.0; probs.len()];
            for (i, &label) in self.labels.iter().enumerate() {
                let idx = i * self.classes + label;
                if probs[idx] > PROB_FLOOR {
                    d[idx] = -grad[0] / (n * probs[idx]);
                }
            }
            d
        })]
    }
}

/// `−(1/N) Σ ln max(probs[i, label_i], 1e-12)` for `[N, K]` probabilities.
pub fn cross_entropy(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    let dims = tape.shape(probs).dims();
    let &[rows, classes] = dims else {
        return Err(Error::shape(format!("cross_entropy expects [N, K] probabilities, got {dims:?}")));
    };
    if labels.len() != rows {
        return Err(Error::contract(format!(
            "cross_entropy: {} labels for {rows} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!("label {bad} outside 0..{classes}")));
    }
    let pd = tape.value(probs).data();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -pd[i * classes + l].max(PROB_FLOOR).ln())
        .sum();
    let value = Tensor::scalar(total / rows as f64);
    Ok(tape.record(
        value,
        &[probs],
        CrossEntropyOp {
            labels: labels.to_vec(),
            classes,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(f: impl FnOnce(&mut Tape, Var, Var) -> Result<Var>, p: Vec<f64>, g: Vec<f64>, dims: &[usize]) -> f64 {
        let mut t = Tape::new();
        let pv = t.leaf(Tensor::from_vec(p, dims.to_vec()).unwrap());
        let gv = t.leaf(Tensor::from_vec(g, dims.to_vec()).unwrap());
        let out = f(&mut t, pv, gv).unwrap();
        t.value(out).item().unwrap()
    }

    #[test]
    fn mse_half_examples() {
        let p: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        assert_eq!(eval(mse_half, p.clone(), p.clone(), &[4, 4]), 0.0);
        let g: Vec<f64> = p.iter().map(|v| v - 1.0).collect();
        assert!((eval(mse_half, p, g, &[4, 4]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ssim_window_examples() {
        let cfg = SsimConfig::default();
        let same = WindowStats {
            mu_p: 0.4,
            mu_g: 0.4,
            var_p: 0.02,
            var_g: 0.02,
            cov_pg: 0.02,
        };
        assert_eq!(ssim_window(&same, &cfg), 1.0);
        let flat = WindowStats::from_windows(&[0.3; 36], &[0.3; 36]);
        assert_eq!(ssim_window(&flat, &cfg), 1.0);
        let anti = WindowStats {
            mu_p: 0.0,
            mu_g: 0.0,
            var_p: 1.0,
            var_g: 1.0,
            cov_pg: -1.0,
        };
        // (C1(−2 + C2)) / (C1(2 + C2))
        let want = (-2.0 + 9e-4) / (2.0 + 9e-4);
        assert!((ssim_window(&anti, &cfg) - want).abs() < 1e-15);
        assert!((want - (-0.99910)).abs() < 5e-6);
    }

    #[test]
    fn mean_ssim_identity_and_loss_floor() {
        let cfg = SsimConfig::default();
        let p: Vec<f64> = (0..144).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        let s = eval(|t, a, b| mean_ssim(t, a, b, &cfg), p.clone(), p.clone(), &[12, 12]);
        assert_eq!(s, 1.0);
        let l = eval(
            |t, a, b| pretrain_loss(t, a, b, &cfg, LossVariant::MseSsim),
            p.clone(),
            p.clone(),
            &[12, 12],
        );
        assert_eq!(l, -1.0);
        let l = eval(
            |t, a, b| pretrain_loss(t, a, b, &cfg, LossVariant::MseOnly),
            p.clone(),
            p,
            &[12, 12],
        );
        assert_eq!(l, 0.0);
    }

    #[test]
    fn map_smaller_than_window_is_rejected() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::zeros([5, 8]).unwrap());
        let g = t.leaf(Tensor::zeros([5, 8]).unwrap());
        assert!(matches!(
            mean_ssim(&mut t, p, g, &SsimConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = |probs: Vec<f64>, labels: &[usize]| {
            let mut t = Tape::new();
            let n = labels.len();
            let p = t.leaf(Tensor::from_vec(probs, [n, 3]).unwrap());
            let l = cross_entropy(&mut t, p, labels).unwrap();
            t.value(l).item().unwrap()
        };
        assert_eq!(ce(vec![0.0, 1.0, 0.0], &[1]), 0.0);
        assert!((ce(vec![1.0 / 3.0; 3], &[2]) - 3f64.ln()).abs() < 1e-12);
        assert!((ce(vec![1.0 / 3.0; 3], &[2]) - 1.098612).abs() < 1e-6);
        // rows: −ln 0.7 and −ln 0.2
        let two = ce(vec![0.7, 0.2, 0.1, 0.5, 0.2, 0.3], &[0, 1]);
        assert!((two - (-(0.7f64).ln() - (0.2f64).ln()) / 2.0).abs() < 1e-15);
        // zero probability hits the floor instead of infinity
        assert!((ce(vec![1.0, 0.0, 0.0], &[2]) - (-(PROB_FLOOR).ln())).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::from_vec(vec![1.0 / 3.0; 3], [1, 3]).unwrap());
        assert!(matches!(cross_entropy(&mut t, p, &[3]), Err(Error::Contract(_))));
        assert!(matches!(cross_entropy(&mut t, p, &[0, 1]), Err(Error::Contract(_))));
    }

    #[test]
    fn config_validation() {
        assert!(SsimConfig::default().validate().is_ok());
        assert!(SsimConfig { window: 1, ..Default::default() }.validate().is_err());
        assert!(SsimConfig { c1: 0.0, ..Default::default() }.validate().is_err());
    }
}
