//! Volumes, projection maps, their file formats, synthetic phantoms, the
//! dataset manifest and stratified splitting.

mod io;
mod manifest;
mod phantom;
mod split;

pub use io::{load_map, load_volume, save_map, save_map_pgm, save_volume, VOLUME_MAGIC, VOLUME_VERSION};
pub use manifest::{Manifest, ManifestEntry};
pub use phantom::{synth_phantoms, synth_unlabeled, ClassMultipliers, PhantomConfig, Region};
pub use split::{holdout_split, stratified_holdout, stratified_kfold, FoldSplit};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Diagnostic classes, in label-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Msa = 0,
    Psp = 1,
    Pd = 2,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Msa, Class::Psp, Class::Pd];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Class::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Msa => "MSA",
            Class::Psp => "PSP",
            Class::Pd => "PD",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Class::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::contract(format!("unknown class label {s:?} (expected MSA, PSP or PD)")))
    }
}

/// A `height × width × depth` voxel grid; voxel `(x, y, z)` lives at
/// `(z·height + y)·width + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub voxels: Vec<f64>,
    pub label: Option<Class>,
}

impl Volume {
    pub fn new(id: impl Into<String>, height: usize, width: usize, depth: usize, voxels: Vec<f64>) -> Result<Self> {
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(depth))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::shape(format!("volume dims {height}x{width}x{depth} are empty or overflow")))?;
        if voxels.len() != n {
            return Err(Error::shape(format!(
                "{} voxels for a {height}x{width}x{depth} volume",
                voxels.len()
            )));
        }
        Ok(Volume {
            id: id.into(),
            height,
            width,
            depth,
            voxels,
            label: None,
        })
    }

    pub fn with_label(mut self, label: Class) -> Self {
        self.label = Some(label);
        self
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.depth)
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.height + y) * self.width + x
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.voxels[self.index(x, y, z)]
    }

    /// The `z`-th `height × width` slice.
    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.voxels[z * n..(z + 1) * n]
    }
}

/// Divides every voxel by the mean over nonzero voxels.
pub fn global_mean_normalize(v: &Volume) -> Result<Volume> {
    let (sum, count) = v
        .voxels
        .iter()
        .filter(|&&x| x != 0.0)
        .fold((0.0, 0usize), |(s, c), &x| (s + x, c + 1));
    let mean = if count == 0 { 0.0 } else { sum / count as f64 };
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::Degenerate(format!(
            "volume {} has no positive nonzero-voxel mean",
            v.id
        )));
    }
    Ok(Volume {
        voxels: v.voxels.iter().map(|x| x / mean).collect(),
        ..v.clone()
    })
}

/// Stacks equally sized volumes into an `[N, D, H, W]` batch.
pub fn stack_volumes(volumes: &[&Volume]) -> Result<Tensor> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::contract("cannot batch zero volumes"))?;
    let dims = first.dims();
    let mut data = Vec::with_capacity(volumes.len() * first.voxels.len());
    for v in volumes {
        if v.dims() != dims {
            return Err(Error::shape(format!(
                "volume {} is {:?}, batch expects {:?}",
                v.id,
                v.dims(),
                dims
            )));
        }
        data.extend_from_slice(&v.voxels);
    }
    Tensor::from_vec(data, [volumes.len(), first.depth, first.height, first.width])
}

/// A `height × width` map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ProjectionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width} map",
                values.len()
            )));
        }
        Ok(ProjectionMap { height, width, values })
    }
}

/// Stacks equally sized maps into an `[N, 1, H, W]` batch.
pub fn stack_maps(maps: &[&ProjectionMap]) -> Result<Tensor> {
    let first = maps.first().ok_or_else(|| Error::contract("cannot batch zero maps"))?;
    let mut data = Vec::with_capacity(maps.len() * first.values.len());
    for m in maps {
        if (m.height, m.width) != (first.height, first.width) {
            return Err(Error::shape(format!(
                "map is {}x{}, batch expects {}x{}",
                m.height, m.width, first.height, first.width
            )));
        }
        data.extend_from_slice(&m.values);
    }
    Tensor::from_vec(data, [maps.len(), 1, first.height, first.width])
}
