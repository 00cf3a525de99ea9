//! The EPI Transformer network.
//!
//! Architecture: a SpatialConv stem lifts each sub-aperture image to a
//! `C`-channel feature, a cascade of non-local blocks alternates
//! Basic-Transformer units over horizontal and vertical EPI token sequences
//! (weights shared between the two orientations by default), and an
//! upsampling head produces the output — per-view pixel shuffle for spatial
//! super-resolution, or an angular pixel shuffle for 2x2 -> 7x7 view
//! synthesis. Every ablation variant is a configuration switch.

mod checkpoint;
mod forward;
mod weights;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    attention_scores, basic_transformer, bind_constants, bind_leaves, epit_forward,
    epit_forward_asr, epit_forward_on_tape, epit_forward_with_attention, non_local_block,
    spatial_conv, AttentionTap, ForwardResult, LAYER_NORM_EPS,
};
pub use weights::{
    sizes, xavier_init, BasicTransformerWeights, BlockWeights, ConvLayer, EpitWeights,
    HeadWeights, SpatialConvWeights, UnitWeights,
};

use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("config: {0}")]
    Config(String),
    #[error("weights/config mismatch at `{name}`: expected shape {expected:?}, got {got:?}")]
    WeightShape { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("input has {got} channels, model expects {expected}")]
    InputChannels { expected: usize, got: usize },
    #[error("angular super-resolution requires a 2x2 input grid, got {u}x{v}")]
    AngularExtent { u: usize, v: usize },
    #[error("forward in mode {mode:?} requires config mode {expected:?}")]
    WrongMode { mode: Mode, expected: Mode },
    #[error("attention tap out of range: block {block} of {blocks}, orientation {orientation:?} disabled={disabled}")]
    TapOutOfRange { block: usize, blocks: usize, orientation: crate::lf::EpiOrientation, disabled: bool },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("output: {0}")]
    Output(#[from] crate::lf::LfError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: std::path::PathBuf, msg: String },
    #[error("checkpoint {path}: {source}")]
    CheckpointIo { path: std::path::PathBuf, source: std::io::Error },
}

/// Which task the upsampling head solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    SpatialSr,
    AngularSr,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::SpatialSr => "spatial_sr",
            Mode::AngularSr => "angular_sr",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "spatial_sr" => Some(Mode::SpatialSr),
            "angular_sr" => Some(Mode::AngularSr),
            _ => None,
        }
    }
}

/// Model hyperparameters and ablation switches.
#[derive(Debug, Clone, PartialEq)]
pub struct EpitConfig {
    /// Feature channels C of the stem and block features.
    pub channels: usize,
    /// Token embedding dimension D inside Basic-Transformer units.
    pub embed_dim: usize,
    pub num_blocks: usize,
    /// MLP hidden width as a multiple of D.
    pub mlp_hidden_ratio: usize,
    /// Spatial upscaling factor (2 or 4).
    pub alpha: usize,
    pub leaky_slope: f64,
    /// Input/output image channels (1 = luminance, 3 = RGB).
    pub io_channels: usize,
    pub use_horizontal: bool,
    pub use_vertical: bool,
    pub share_weights: bool,
    pub use_spatial_conv: bool,
    pub use_transformer: bool,
    pub mode: Mode,
}

impl Default for EpitConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            embed_dim: 32,
            num_blocks: 5,
            mlp_hidden_ratio: 2,
            alpha: 2,
            leaky_slope: 0.1,
            io_channels: 1,
            use_horizontal: true,
            use_vertical: true,
            share_weights: true,
            use_spatial_conv: true,
            use_transformer: true,
            mode: Mode::SpatialSr,
        }
    }
}

impl EpitConfig {
    /// A tiny configuration for gradient checks and overfit fixtures.
    pub fn micro() -> Self {
        Self { channels: 8, embed_dim: 8, num_blocks: 1, ..Self::default() }
    }

    /// Larger preset for anyone chasing the published parameter budget.
    pub fn large() -> Self {
        Self { channels: 64, embed_dim: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.channels < 1 || self.embed_dim < 1 || self.num_blocks < 1 || self.mlp_hidden_ratio < 1 {
            return Err(NetError::Config(
                "channels, embed_dim, num_blocks, mlp_hidden_ratio must all be >= 1".into(),
            ));
        }
        if !self.use_horizontal && !self.use_vertical {
            return Err(NetError::Config(
                "at least one of use_horizontal/use_vertical must be true".into(),
            ));
        }
        if self.mode == Mode::SpatialSr && !matches!(self.alpha, 2 | 4) {
            return Err(NetError::Config(format!("alpha must be 2 or 4, got {}", self.alpha)));
        }
        if !matches!(self.io_channels, 1 | 3) {
            return Err(NetError::Config(format!(
                "io_channels must be 1 or 3, got {}",
                self.io_channels
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(NetError::Config(format!(
                "leaky_slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Applies one flat `key=value` setting; `Ok(false)` means the key does
    /// not belong to the model configuration.
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<bool, String> {
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| format!("`{v}` is not a count"));
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| format!("`{v}` is not a number"));
        let parse_bool = |v: &str| match v {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(format!("`{v}` is not a boolean")),
        };
        match key {
            "channels" => self.channels = parse_usize(value)?,
            "embed_dim" => self.embed_dim = parse_usize(value)?,
            "num_blocks" => self.num_blocks = parse_usize(value)?,
            "mlp_hidden_ratio" => self.mlp_hidden_ratio = parse_usize(value)?,
            "alpha" => self.alpha = parse_usize(value)?,
            "leaky_slope" => self.leaky_slope = parse_f64(value)?,
            "io_channels" => self.io_channels = parse_usize(value)?,
            "use_horizontal" => self.use_horizontal = parse_bool(value)?,
            "use_vertical" => self.use_vertical = parse_bool(value)?,
            "share_weights" => self.share_weights = parse_bool(value)?,
            "use_spatial_conv" => self.use_spatial_conv = parse_bool(value)?,
            "use_transformer" => self.use_transformer = parse_bool(value)?,
            "mode" => {
                self.mode = Mode::parse(value).ok_or_else(|| {
                    format!("`{value}` is not a mode (spatial_sr | angular_sr)")
                })?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Canonical flat text form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        format!(
            "channels={}\nembed_dim={}\nnum_blocks={}\nmlp_hidden_ratio={}\nalpha={}\nleaky_slope={}\nio_channels={}\nuse_horizontal={}\nuse_vertical={}\nshare_weights={}\nuse_spatial_conv={}\nuse_transformer={}\nmode={}\n",
            self.channels,
            self.embed_dim,
            self.num_blocks,
            self.mlp_hidden_ratio,
            self.alpha,
            self.leaky_slope,
            self.io_channels,
            self.use_horizontal,
            self.use_vertical,
            self.share_weights,
            self.use_spatial_conv,
            self.use_transformer,
            self.mode.as_str(),
        )
    }

    pub fn from_text(text: &str) -> Result<Self, NetError> {
        let mut config = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| NetError::Config(format!("expected key=value, got `{line}`")))?;
            match config.set_field(key.trim(), value.trim()) {
                Ok(true) => {}
                Ok(false) => return Err(NetError::Config(format!("unknown model key `{key}`"))),
                Err(msg) => return Err(NetError::Config(format!("{key}: {msg}"))),
            }
        }
        config.validate()?;
        Ok(config)
    }
}
