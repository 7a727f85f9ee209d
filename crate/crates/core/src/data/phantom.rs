//! Synthetic three-class activity phantoms.
//!
//! Each volume is a smooth ellipsoidal "brain" background plus Gaussian
//! blobs for the two striatal nuclei and the cerebellum. Class multipliers
//! scale the blob amplitudes: PD keeps both regions bright, MSA dims both,
//! PSP dims the striatum only. Every subject gets bounded amplitude and
//! position jitter and additive Gaussian noise inside the brain; values are
//! clamped at zero. Volume `i` draws from ChaCha8 stream `i` of the seed, so
//! generation is reproducible and order-independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Class, Volume};
use crate::error::{Error, Result};

/// Gaussian blob; `center` holds `(x, y, z)` as fractions of the extents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: [f64; 3],
    /// Standard deviation in voxels.
    pub sigma: f64,
}

/// `[striatum, cerebellum]` amplitude multipliers per class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMultipliers {
    pub msa: [f64; 2],
    pub psp: [f64; 2],
    pub pd: [f64; 2],
}

impl ClassMultipliers {
    pub fn of(&self, c: Class) -> [f64; 2] {
        match c {
            Class::Msa => self.msa,
            Class::Psp => self.psp,
            Class::Pd => self.pd,
        }
    }
}

impl Default for ClassMultipliers {
    fn default() -> Self {
        ClassMultipliers {
            msa: [0.3, 0.3],
            psp: [0.3, 1.0],
            pd: [1.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub background: f64,
    pub striatum: [Region; 2],
    pub striatum_amplitude: f64,
    pub cerebellum: Region,
    pub cerebellum_amplitude: f64,
    pub multipliers: ClassMultipliers,
    /// Relative amplitude jitter; each subject scales each region by a
    /// factor drawn uniformly from `[1 − jitter, 1 + jitter]`.
    pub jitter: f64,
    /// Maximum blob-center displacement in voxels along each axis.
    pub shift: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            height: 64,
            width: 64,
            depth: 48,
            background: 1.0,
            striatum: [
                Region {
                    center: [0.38, 0.45, 0.55],
                    sigma: 3.0,
                },
                Region {
                    center: [0.62, 0.45, 0.55],
                    sigma: 3.0,
                },
            ],
            striatum_amplitude: 3.0,
            cerebellum: Region {
                center: [0.5, 0.78, 0.25],
                sigma: 5.0,
            },
            cerebellum_amplitude: 2.0,
            multipliers: ClassMultipliers::default(),
            jitter: 0.1,
            shift: 1.0,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("phantom.height", self.height),
            ("phantom.width", self.width),
            ("phantom.depth", self.depth),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        let regions = [
            ("phantom.striatum[0]", self.striatum[0]),
            ("phantom.striatum[1]", self.striatum[1]),
            ("phantom.cerebellum", self.cerebellum),
        ];
        for (field, r) in regions {
            if r.center.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::config(field, format!("center {:?} lies outside the volume", r.center)));
            }
            if !(r.sigma > 0.0) || !r.sigma.is_finite() {
                return Err(Error::config(field, format!("sigma must be positive, got {}", r.sigma)));
            }
        }
        for (field, v) in [
            ("phantom.background", self.background),
            ("phantom.striatum_amplitude", self.striatum_amplitude),
            ("phantom.cerebellum_amplitude", self.cerebellum_amplitude),
            ("phantom.noise_sigma", self.noise_sigma),
            ("phantom.shift", self.shift),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::config("phantom.jitter", format!("must lie in [0, 1), got {}", self.jitter)));
        }
        for c in Class::ALL {
            if self.multipliers.of(c).iter().any(|m| !(*m >= 0.0)) {
                return Err(Error::config("phantom.multipliers", format!("{c} multipliers must be >= 0")));
            }
        }
        Ok(())
    }

    /// Voxel-space center of a region.
    fn center(&self, r: &Region) -> [f64; 3] {
        let ext = [self.width, self.height, self.depth];
        std::array::from_fn(|a| r.center[a] * (ext[a] - 1) as f64)
    }
}

fn jittered(rng: &mut ChaCha8Rng, jitter: f64) -> f64 {
    if jitter > 0.0 {
        rng.random_range(1.0 - jitter..=1.0 + jitter)
    } else {
        1.0
    }
}

fn generate(cfg: &PhantomConfig, class: Class, stream: u64, id: String) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let [m_str, m_cer] = cfg.multipliers.of(class);
    let bg = cfg.background * jittered(&mut rng, cfg.jitter);
    let mut blobs = Vec::with_capacity(3);
    for (region, amp) in [
        (cfg.striatum[0], cfg.striatum_amplitude * m_str),
        (cfg.striatum[1], cfg.striatum_amplitude * m_str),
        (cfg.cerebellum, cfg.cerebellum_amplitude * m_cer),
    ] {
        let mut c = cfg.center(&region);
        for v in &mut c {
            if cfg.shift > 0.0 {
                *v += rng.random_range(-cfg.shift..=cfg.shift);
            }
        }
        blobs.push((c, region.sigma, amp * jittered(&mut rng, cfg.jitter)));
    }
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
    let (h, w, d) = (cfg.height, cfg.width, cfg.depth);
    let half = [(w as f64) / 2.0, (h as f64) / 2.0, (d as f64) / 2.0];
    let mut voxels = vec![0.0; h * w * d];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let p = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                let r2: f64 = (0..3).map(|a| ((p[a] - half[a]) / (0.9 * half[a])).powi(2)).sum();
                if r2 >= 1.0 {
                    continue;
                }
                let mut v = bg * (1.0 - 0.5 * r2);
                for (c, sigma, amp) in &blobs {
                    let q = [x as f64, y as f64, z as f64];
                    let dist2: f64 = (0..3).map(|a| (q[a] - c[a]).powi(2)).sum();
                    v += amp * (-dist2 / (2.0 * sigma * sigma)).exp();
                }
                if cfg.noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                voxels[(z * h + y) * w + x] = v.max(0.0);
            }
        }
    }
    Volume {
        id,
        height: h,
        width: w,
        depth: d,
        voxels,
        label: None,
    }
}

/// `n_per_class` labeled volumes per class, ordered MSA, PSP, PD.
pub fn synth_phantoms(cfg: &PhantomConfig, n_per_class: usize) -> Result<Vec<Volume>> {
    cfg.validate()?;
    if n_per_class == 0 {
        return Err(Error::contract("n_per_class must be >= 1"));
    }
    let mut out = Vec::with_capacity(3 * n_per_class);
    for c in Class::ALL {
        for i in 0..n_per_class {
            let stream = (c.index() * n_per_class + i) as u64;
            let id = format!("{}_{i:04}", c.name().to_lowercase());
            out.push(generate(cfg, c, stream, id).with_label(c));
        }
    }
    Ok(out)
}

/// `n` unlabeled volumes with classes drawn in rotation, for pretraining.
/// Uses stream offsets disjoint from [`synth_phantoms`] with the same seed.
pub fn synth_unlabeled(cfg: &PhantomConfig, n: usize) -> Result<Vec<Volume>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::contract("unlabeled corpus size must be >= 1"));
    }
    Ok((0..n)
        .map(|i| {
            let c = Class::ALL[i % 3];
            generate(cfg, c, (1 << 40) + i as u64, format!("u_{i:04}"))
        })
        .collect())
}
