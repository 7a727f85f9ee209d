//! Depth-mode Tucker-1 projection targets.
//!
//! A volume is unfolded along depth into a `D × (H·W)` matrix `A`. The
//! leading left singular vector `u` of `A` weights the slices, `M = Σ_z u_z ·
//! slice_z`, and `M` is min-max normalized into `[0, 1]`. `u` comes from a
//! cyclic Jacobi eigendecomposition of the `D × D` Gram matrix `A·Aᵀ`, with
//! power iteration as a fallback, and is oriented so that `Σ u ≥ 0`.

use crate::data::{ProjectionMap, Volume};
use crate::error::{Error, Result};

const TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;
const MAX_POWER_ITERS: usize = 100_000;

/// A normalized target map and whether it came from a degenerate input.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionTarget {
    pub map: ProjectionMap,
    pub source_id: String,
    pub degenerate: bool,
}

/// `(M − min) / (max − min)`; a constant grid becomes all 0.5 and the flag
/// is set.
pub fn normalize_map(values: &[f64]) -> Result<(Vec<f64>, bool)> {
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::contract(format!("cannot normalize non-finite value {bad}")));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || max == min {
        return Ok((vec![0.5; values.len()], true));
    }
    let span = max - min;
    Ok((values.iter().map(|v| ((v - min) / span).clamp(0.0, 1.0)).collect(), false))
}

/// Row-major `D × D` Gram matrix of the depth slices.
pub fn depth_gram(v: &Volume) -> Vec<f64> {
    let d = v.depth;
    let mut g = vec![0.0; d * d];
    for i in 0..d {
        let si = v.slice(i);
        for j in 0..=i {
            let dot: f64 = si.iter().zip(v.slice(j)).map(|(a, b)| a * b).sum();
            g[i * d + j] = dot;
            g[j * d + i] = dot;
        }
    }
    g
}

/// Eigen-decomposes a symmetric `n × n` matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors as columns of a row-major matrix)`,
/// or `None` if the off-diagonal mass does not vanish within the sweep cap.
pub fn jacobi_eigen(a: &[f64], n: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Some((vec![0.0; n], v));
    }
    for _ in 0..MAX_SWEEPS {
        let off = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= TOL * scale {
            return Some(((0..n).map(|i| a[i * n + i]).collect(), v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    None
}

/// Dominant eigenvector of a symmetric positive semidefinite matrix by
/// power iteration.
pub fn power_iteration(a: &[f64], n: usize) -> Vec<f64> {
    let mut u = vec![1.0 / (n as f64).sqrt(); n];
    for _ in 0..MAX_POWER_ITERS {
        let mut next: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i * n + j] * u[j]).sum()).collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return u;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        let delta = next.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        u = next;
        if delta < TOL {
            break;
        }
    }
    u
}

/// Leading left singular vector of the depth unfolding, oriented so that
/// its components sum to a nonnegative value.
pub fn depth_weights(v: &Volume) -> Vec<f64> {
    let d = v.depth;
    let g = depth_gram(v);
    let mut u = match jacobi_eigen(&g, d) {
        Some((vals, vecs)) => {
            let top = (0..d).fold(0, |best, i| if vals[i] > vals[best] { i } else { best });
            (0..d).map(|k| vecs[k * d + top]).collect()
        }
        None => power_iteration(&g, d),
    };
    if u.iter().sum::<f64>() < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
    u
}

/// Tucker-1 depth projection of a volume, normalized to `[0, 1]`.
pub fn tucker_project(v: &Volume) -> Result<ProjectionTarget> {
    if let Some(bad) = v.voxels.iter().find(|x| !x.is_finite()) {
        return Err(Error::contract(format!("volume {} has non-finite voxel {bad}", v.id)));
    }
    let hw = v.height * v.width;
    if v.voxels.iter().all(|&x| x == 0.0) {
        return Ok(ProjectionTarget {
            map: ProjectionMap::new(v.height, v.width, vec![0.0; hw])?,
            source_id: v.id.clone(),
            degenerate: true,
        });
    }
    let u = depth_weights(v);
    let mut m = vec![0.0; hw];
    for (z, &w) in u.iter().enumerate() {
        for (acc, x) in m.iter_mut().zip(v.slice(z)) {
            *acc += w * x;
        }
    }
    let (values, degenerate) = normalize_map(&m)?;
    Ok(ProjectionTarget {
        map: ProjectionMap::new(v.height, v.width, values)?,
        source_id: v.id.clone(),
        degenerate,
    })
}
