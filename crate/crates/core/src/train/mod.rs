//! Deterministic patch-based training.
//!
//! High-resolution patches are cropped on a non-overlapping grid at identical
//! spatial windows across all views, low-resolution inputs are generated by
//! per-view bicubic downsampling, and augmentation co-transforms the angular
//! and spatial axes so the EPI line geometry survives every flip/rotation.

mod adam;
mod run;

pub use adam::{adam_step, lr_at, AdamState};
pub use run::{train_loop, write_trace_csv, TraceRow, TrainOutcome};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lf::{resize_lf, LfError, LightField};
use crate::net::NetError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("scene {h}x{w} smaller than hr_patch {patch}")]
    SceneTooSmall { h: usize, w: usize, patch: usize },
    #[error("90-degree rotation requires a square angular grid, got {u}x{v}")]
    RotationNeedsSquareAngular { u: usize, v: usize },
    #[error("loss diverged to {loss} at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: u64, loss: f64 },
    #[error(transparent)]
    Lf(#[from] LfError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// Training hyperparameters; one flat-config namespace with [`crate::net::EpitConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: usize,
    /// High-resolution crop size; LR patches are `hr_patch / alpha`.
    pub hr_patch: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    /// Learning rate halves every this many epochs.
    pub lr_halve_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub augment_hflip: bool,
    pub augment_vflip: bool,
    pub augment_rot90: bool,
    /// Random crop positions instead of the deterministic grid.
    pub random_crops: bool,
    /// Also write a checkpoint every k epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn default_for_alpha(alpha: usize) -> Self {
        Self {
            alpha,
            hr_patch: 32 * alpha,
            batch_size: 4,
            epochs: 80,
            lr0: 2e-4,
            lr_halve_every: 15,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            augment_hflip: true,
            augment_vflip: true,
            augment_rot90: true,
            random_crops: false,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hr_patch == 0 || self.hr_patch % self.alpha != 0 {
            return Err(format!(
                "hr_patch {} must be a positive multiple of alpha {}",
                self.hr_patch, self.alpha
            ));
        }
        if self.epochs < 1 || self.batch_size < 1 || self.lr_halve_every < 1 {
            return Err("epochs, batch_size, lr_halve_every must all be >= 1".into());
        }
        if !(self.lr0 > 0.0) {
            return Err(format!("lr0 must be positive, got {}", self.lr0));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        Ok(())
    }

    /// Applies one `key=value`; `Ok(false)` means the key is not a training key.
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<bool, String> {
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| format!("`{v}` is not a count"));
        let parse_u64 = |v: &str| v.parse::<u64>().map_err(|_| format!("`{v}` is not an integer"));
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| format!("`{v}` is not a number"));
        let parse_bool = |v: &str| match v {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(format!("`{v}` is not a boolean")),
        };
        match key {
            "hr_patch" => self.hr_patch = parse_usize(value)?,
            "batch_size" => self.batch_size = parse_usize(value)?,
            "epochs" => self.epochs = parse_usize(value)?,
            "lr0" => self.lr0 = parse_f64(value)?,
            "lr_halve_every" => self.lr_halve_every = parse_usize(value)?,
            "beta1" => self.beta1 = parse_f64(value)?,
            "beta2" => self.beta2 = parse_f64(value)?,
            "adam_eps" => self.adam_eps = parse_f64(value)?,
            "seed" => self.seed = parse_u64(value)?,
            "augment_hflip" => self.augment_hflip = parse_bool(value)?,
            "augment_vflip" => self.augment_vflip = parse_bool(value)?,
            "augment_rot90" => self.augment_rot90 = parse_bool(value)?,
            "random_crops" => self.random_crops = parse_bool(value)?,
            "checkpoint_every" => self.checkpoint_every = parse_usize(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        format!(
            "hr_patch={}\nbatch_size={}\nepochs={}\nlr0={}\nlr_halve_every={}\nbeta1={}\nbeta2={}\nadam_eps={}\nseed={}\naugment_hflip={}\naugment_vflip={}\naugment_rot90={}\nrandom_crops={}\ncheckpoint_every={}\n",
            self.hr_patch,
            self.batch_size,
            self.epochs,
            self.lr0,
            self.lr_halve_every,
            self.beta1,
            self.beta2,
            self.adam_eps,
            self.seed,
            self.augment_hflip,
            self.augment_vflip,
            self.augment_rot90,
            self.random_crops,
            self.checkpoint_every,
        )
    }
}

/// An aligned (LR input, HR target) pair of light-field patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub lr: LightField,
    pub hr: LightField,
}

/// Non-overlapping grid of HR crops with per-view bicubic LR counterparts.
pub fn make_patches(scene: &LightField, cfg: &TrainConfig) -> Result<Vec<PatchPair>, TrainError> {
    let (_, _, h, w) = scene.extents();
    let p = cfg.hr_patch;
    if h < p || w < p {
        return Err(TrainError::SceneTooSmall { h, w, patch: p });
    }
    let mut pairs = Vec::new();
    for row in 0..h / p {
        for col in 0..w / p {
            let hr = scene.crop_spatial(row * p, col * p, p, p)?;
            let lr = resize_lf(&hr, 1.0 / cfg.alpha as f64)?;
            pairs.push(PatchPair { lr, hr });
        }
    }
    Ok(pairs)
}

/// One random crop pair; used when `random_crops` is on.
pub fn random_patch(
    scene: &LightField,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PatchPair, TrainError> {
    let (_, _, h, w) = scene.extents();
    let p = cfg.hr_patch;
    if h < p || w < p {
        return Err(TrainError::SceneTooSmall { h, w, patch: p });
    }
    let row = rng.gen_range(0..=h - p);
    let col = rng.gen_range(0..=w - p);
    let hr = scene.crop_spatial(row, col, p, p)?;
    let lr = resize_lf(&hr, 1.0 / cfg.alpha as f64)?;
    Ok(PatchPair { lr, hr })
}

/// Horizontal flip: reverses `w` *and* the `v` view order, so disparity
/// geometry is preserved rather than negated.
pub fn hflip_lf(lf: &LightField) -> LightField {
    let (us, vs, hs, ws) = lf.extents();
    LightField::from_fn(us, vs, hs, ws, lf.channels(), |u, v, h, w, c| {
        lf.get(u, vs - 1 - v, h, ws - 1 - w, c)
    })
    .expect("flip preserves validity")
}

/// Vertical flip: reverses `h` and the `u` view order.
pub fn vflip_lf(lf: &LightField) -> LightField {
    let (us, vs, hs, ws) = lf.extents();
    LightField::from_fn(us, vs, hs, ws, lf.channels(), |u, v, h, w, c| {
        lf.get(us - 1 - u, v, hs - 1 - h, w, c)
    })
    .expect("flip preserves validity")
}

/// 90-degree rotation of the spatial axes and the angular grid together.
pub fn rot90_lf(lf: &LightField) -> Result<LightField, TrainError> {
    let (us, vs, hs, ws) = lf.extents();
    if us != vs {
        return Err(TrainError::RotationNeedsSquareAngular { u: us, v: vs });
    }
    Ok(LightField::from_fn(vs, us, ws, hs, lf.channels(), |u, v, h, w, c| {
        lf.get(v, vs - 1 - u, w, ws - 1 - h, c)
    })
    .expect("rotation preserves validity"))
}

/// Seeded augmentation: independent coin flips for each enabled transform,
/// applied identically to the LR and HR members.
pub fn augment(pair: &PatchPair, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<PatchPair, TrainError> {
    let mut lr = pair.lr.clone();
    let mut hr = pair.hr.clone();
    if cfg.augment_hflip && rng.gen_bool(0.5) {
        lr = hflip_lf(&lr);
        hr = hflip_lf(&hr);
    }
    if cfg.augment_vflip && rng.gen_bool(0.5) {
        lr = vflip_lf(&lr);
        hr = vflip_lf(&hr);
    }
    if cfg.augment_rot90 && rng.gen_bool(0.5) {
        lr = rot90_lf(&lr)?;
        hr = rot90_lf(&hr)?;
    }
    Ok(PatchPair { lr, hr })
}
