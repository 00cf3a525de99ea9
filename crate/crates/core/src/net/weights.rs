//! Learnable parameter containers.
//!
//! The structures are generic over the payload so the same shape tree can
//! hold stored tensors (`Tensor<f32>`), tape bindings (`ValueId`), or
//! anything a `map` produces. `map` and `visit` traverse fields in one fixed
//! order; checkpointing, Adam state, and parameter counting all rely on it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EpitConfig, Mode, NetError};
use crate::lf::EpiOrientation;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<P> {
    pub weight: P,
    pub bias: P,
}

/// Three stacked convolutions with LeakyReLU in between; the building block
/// of the stem, the per-block spatial stages, and the transformer-free
/// ablation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialConvWeights<P> {
    pub convs: [ConvLayer<P>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicTransformerWeights<P> {
    pub w_in: P,
    pub ln1_gamma: P,
    pub ln1_beta: P,
    pub w_q: P,
    pub w_k: P,
    pub w_v: P,
    pub ln2_gamma: P,
    pub ln2_beta: P,
    pub mlp_w1: P,
    pub mlp_b1: P,
    pub mlp_w2: P,
    pub mlp_b2: P,
    pub w_out: P,
}

/// One orientation stage's learnable unit: a Basic-Transformer, or the
/// cascaded-convolution replacement of the transformer-free variant.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitWeights<P> {
    Transformer(BasicTransformerWeights<P>),
    ConvStack(SpatialConvWeights<P>),
}

/// One non-local cascading block. With weight sharing a single unit serves
/// both orientations; without it each enabled orientation owns a copy. The
/// spatial stage weights are applied after each enabled orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<P> {
    pub shared_unit: Option<UnitWeights<P>>,
    pub unit_h: Option<UnitWeights<P>>,
    pub unit_v: Option<UnitWeights<P>>,
    pub spatial: Option<SpatialConvWeights<P>>,
}

impl<P> BlockWeights<P> {
    /// The unit driving the given orientation stage, honoring sharing.
    pub fn unit_for(&self, orientation: EpiOrientation) -> Option<&UnitWeights<P>> {
        if self.shared_unit.is_some() {
            return self.shared_unit.as_ref();
        }
        match orientation {
            EpiOrientation::Horizontal => self.unit_h.as_ref(),
            EpiOrientation::Vertical => self.unit_v.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadWeights<P> {
    /// 1x1 channel expansion to `C*alpha^2`, pixel shuffle, then a 3x3
    /// reconstruction convolution.
    Spatial { up: ConvLayer<P>, out: ConvLayer<P> },
    /// 2x2 angular reduction, 1x1 expansion to `49*C`, angular pixel
    /// shuffle to 7x7 views, then a 3x3 reconstruction convolution.
    Angular { reduce: ConvLayer<P>, expand: ConvLayer<P>, out: ConvLayer<P> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpitWeights<P> {
    pub stem: SpatialConvWeights<P>,
    pub blocks: Vec<BlockWeights<P>>,
    pub head: HeadWeights<P>,
}

impl<P> ConvLayer<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ConvLayer<Q> {
        ConvLayer { weight: f(&self.weight), bias: f(&self.bias) }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &P)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<P> SpatialConvWeights<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> SpatialConvWeights<Q> {
        SpatialConvWeights {
            convs: [
                self.convs[0].map(f),
                self.convs[1].map(f),
                self.convs[2].map(f),
            ],
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &P)) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.visit(&format!("{prefix}.conv{i}"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_mut(&format!("{prefix}.conv{i}"), f);
        }
    }
}

impl<P> BasicTransformerWeights<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> BasicTransformerWeights<Q> {
        BasicTransformerWeights {
            w_in: f(&self.w_in),
            ln1_gamma: f(&self.ln1_gamma),
            ln1_beta: f(&self.ln1_beta),
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            ln2_gamma: f(&self.ln2_gamma),
            ln2_beta: f(&self.ln2_beta),
            mlp_w1: f(&self.mlp_w1),
            mlp_b1: f(&self.mlp_b1),
            mlp_w2: f(&self.mlp_w2),
            mlp_b2: f(&self.mlp_b2),
            w_out: f(&self.w_out),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &P)) {
        f(&format!("{prefix}.w_in"), &self.w_in);
        f(&format!("{prefix}.ln1_gamma"), &self.ln1_gamma);
        f(&format!("{prefix}.ln1_beta"), &self.ln1_beta);
        f(&format!("{prefix}.w_q"), &self.w_q);
        f(&format!("{prefix}.w_k"), &self.w_k);
        f(&format!("{prefix}.w_v"), &self.w_v);
        f(&format!("{prefix}.ln2_gamma"), &self.ln2_gamma);
        f(&format!("{prefix}.ln2_beta"), &self.ln2_beta);
        f(&format!("{prefix}.mlp_w1"), &self.mlp_w1);
        f(&format!("{prefix}.mlp_b1"), &self.mlp_b1);
        f(&format!("{prefix}.mlp_w2"), &self.mlp_w2);
        f(&format!("{prefix}.mlp_b2"), &self.mlp_b2);
        f(&format!("{prefix}.w_out"), &self.w_out);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&format!("{prefix}.w_in"), &mut self.w_in);
        f(&format!("{prefix}.ln1_gamma"), &mut self.ln1_gamma);
        f(&format!("{prefix}.ln1_beta"), &mut self.ln1_beta);
        f(&format!("{prefix}.w_q"), &mut self.w_q);
        f(&format!("{prefix}.w_k"), &mut self.w_k);
        f(&format!("{prefix}.w_v"), &mut self.w_v);
        f(&format!("{prefix}.ln2_gamma"), &mut self.ln2_gamma);
        f(&format!("{prefix}.ln2_beta"), &mut self.ln2_beta);
        f(&format!("{prefix}.mlp_w1"), &mut self.mlp_w1);
        f(&format!("{prefix}.mlp_b1"), &mut self.mlp_b1);
        f(&format!("{prefix}.mlp_w2"), &mut self.mlp_w2);
        f(&format!("{prefix}.mlp_b2"), &mut self.mlp_b2);
        f(&format!("{prefix}.w_out"), &mut self.w_out);
    }
}

impl<P> UnitWeights<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> UnitWeights<Q> {
        match self {
            UnitWeights::Transformer(t) => UnitWeights::Transformer(t.map(f)),
            UnitWeights::ConvStack(c) => UnitWeights::ConvStack(c.map(f)),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &P)) {
        match self {
            UnitWeights::Transformer(t) => t.visit(prefix, f),
            UnitWeights::ConvStack(c) => c.visit(prefix, f),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        match self {
            UnitWeights::Transformer(t) => t.visit_mut(prefix, f),
            UnitWeights::ConvStack(c) => c.visit_mut(prefix, f),
        }
    }
}

impl<P> EpitWeights<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> EpitWeights<Q> {
        EpitWeights {
            stem: self.stem.map(f),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockWeights {
                    shared_unit: b.shared_unit.as_ref().map(|u| u.map(f)),
                    unit_h: b.unit_h.as_ref().map(|u| u.map(f)),
                    unit_v: b.unit_v.as_ref().map(|u| u.map(f)),
                    spatial: b.spatial.as_ref().map(|s| s.map(f)),
                })
                .collect(),
            head: match &self.head {
                HeadWeights::Spatial { up, out } => {
                    HeadWeights::Spatial { up: up.map(f), out: out.map(f) }
                }
                HeadWeights::Angular { reduce, expand, out } => HeadWeights::Angular {
                    reduce: reduce.map(f),
                    expand: expand.map(f),
                    out: out.map(f),
                },
            },
        }
    }

    /// Calls `f(name, param)` for every parameter, in the same order `map`
    /// traverses fields.
    pub fn visit(&self, f: &mut impl FnMut(&str, &P)) {
        self.stem.visit("stem", f);
        for (i, block) in self.blocks.iter().enumerate() {
            if let Some(unit) = &block.shared_unit {
                unit.visit(&format!("blocks.{i}.unit"), f);
            }
            if let Some(unit) = &block.unit_h {
                unit.visit(&format!("blocks.{i}.unit_h"), f);
            }
            if let Some(unit) = &block.unit_v {
                unit.visit(&format!("blocks.{i}.unit_v"), f);
            }
            if let Some(spatial) = &block.spatial {
                spatial.visit(&format!("blocks.{i}.spatial"), f);
            }
        }
        match &self.head {
            HeadWeights::Spatial { up, out } => {
                up.visit("head.up", f);
                out.visit("head.out", f);
            }
            HeadWeights::Angular { reduce, expand, out } => {
                reduce.visit("head.reduce", f);
                expand.visit("head.expand", f);
                out.visit("head.out", f);
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut P)) {
        self.stem.visit_mut("stem", f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            if let Some(unit) = &mut block.shared_unit {
                unit.visit_mut(&format!("blocks.{i}.unit"), f);
            }
            if let Some(unit) = &mut block.unit_h {
                unit.visit_mut(&format!("blocks.{i}.unit_h"), f);
            }
            if let Some(unit) = &mut block.unit_v {
                unit.visit_mut(&format!("blocks.{i}.unit_v"), f);
            }
            if let Some(spatial) = &mut block.spatial {
                spatial.visit_mut(&format!("blocks.{i}.spatial"), f);
            }
        }
        match &mut self.head {
            HeadWeights::Spatial { up, out } => {
                up.visit_mut("head.up", f);
                out.visit_mut("head.out", f);
            }
            HeadWeights::Angular { reduce, expand, out } => {
                reduce.visit_mut("head.reduce", f);
                expand.visit_mut("head.expand", f);
                out.visit_mut("head.out", f);
            }
        }
    }
}

impl EpitWeights<Tensor<f32>> {
    /// Allocates the parameter tree for a configuration, zero-filled.
    pub fn zeros(config: &EpitConfig) -> Result<Self, NetError> {
        config.validate()?;
        Self::build(config, &mut InitMode::Zeros)
    }

    /// Exact number of scalar parameters; a pure function of the config.
    pub fn param_count(&self) -> usize {
        let mut count = 0usize;
        self.visit(&mut |_, t| count += t.numel());
        count
    }

    fn build(config: &EpitConfig, init: &mut InitMode) -> Result<Self, NetError> {
        let c = config.channels;
        let io = config.io_channels;

        let stem = spatial_conv_weights(io, c, init);

        let make_unit = |init: &mut InitMode| -> UnitWeights<Tensor<f32>> {
            if config.use_transformer {
                UnitWeights::Transformer(transformer_weights(config, init))
            } else {
                UnitWeights::ConvStack(spatial_conv_weights(c, c, init))
            }
        };

        let mut blocks = Vec::with_capacity(config.num_blocks);
        for _ in 0..config.num_blocks {
            let (shared_unit, unit_h, unit_v) = if config.share_weights {
                (Some(make_unit(init)), None, None)
            } else {
                (
                    None,
                    config.use_horizontal.then(|| make_unit(init)),
                    config.use_vertical.then(|| make_unit(init)),
                )
            };
            let spatial = config.use_spatial_conv.then(|| spatial_conv_weights(c, c, init));
            blocks.push(BlockWeights { shared_unit, unit_h, unit_v, spatial });
        }

        let head = match config.mode {
            Mode::SpatialSr => HeadWeights::Spatial {
                up: conv_layer(c, c * config.alpha * config.alpha, 1, init),
                out: conv_layer(c, io, 3, init),
            },
            Mode::AngularSr => HeadWeights::Angular {
                reduce: conv_layer(c, c, 2, init),
                expand: conv_layer(c, 49 * c, 1, init),
                out: conv_layer(c, 1, 3, init),
            },
        };

        Ok(EpitWeights { stem, blocks, head })
    }

    /// Checks every parameter shape against what the config dictates.
    pub fn validate_against(&self, config: &EpitConfig) -> Result<(), NetError> {
        let expected = Self::zeros(config)?;
        let mut expect_list: Vec<(String, Vec<usize>)> = Vec::new();
        expected.visit(&mut |name, t| expect_list.push((name.to_string(), t.shape().to_vec())));
        let mut got_list: Vec<(String, Vec<usize>)> = Vec::new();
        self.visit(&mut |name, t| got_list.push((name.to_string(), t.shape().to_vec())));
        if expect_list.len() != got_list.len() {
            return Err(NetError::Config(format!(
                "parameter count mismatch: expected {} buffers, got {}",
                expect_list.len(),
                got_list.len()
            )));
        }
        for ((en, es), (gn, gs)) in expect_list.iter().zip(&got_list) {
            if en != gn || es != gs {
                return Err(NetError::WeightShape {
                    name: gn.clone(),
                    expected: es.clone(),
                    got: gs.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Draws all weights with Xavier-uniform initialization, biases zero, layer
/// norm at identity. The same seed always yields bit-identical parameters.
pub fn xavier_init(config: &EpitConfig, seed: u64) -> Result<EpitWeights<Tensor<f32>>, NetError> {
    config.validate()?;
    let rng = ChaCha8Rng::seed_from_u64(seed);
    EpitWeights::build(config, &mut InitMode::Xavier(Box::new(rng)))
}

enum InitMode {
    Zeros,
    Xavier(Box<ChaCha8Rng>),
}

impl InitMode {
    /// Uniform in +-sqrt(6 / (fan_in + fan_out)); zero when zero-building.
    fn draw(&mut self, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor<f32> {
        match self {
            InitMode::Zeros => Tensor::zeros(shape),
            InitMode::Xavier(rng) => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(shape, |_| rng.gen_range(-limit..=limit) as f32)
            }
        }
    }

    fn constant(&mut self, shape: Vec<usize>, value: f32) -> Tensor<f32> {
        let n = shape.iter().product();
        match self {
            InitMode::Zeros => Tensor::zeros(shape),
            InitMode::Xavier(_) => Tensor::new(shape, vec![value; n]).unwrap(),
        }
    }
}

/// `kernel x kernel` convolution `c_in -> c_out`; bias zero.
fn conv_layer(c_in: usize, c_out: usize, kernel: usize, init: &mut InitMode) -> ConvLayer<Tensor<f32>> {
    let fan_in = c_in * kernel * kernel;
    let fan_out = c_out * kernel * kernel;
    ConvLayer {
        weight: init.draw(vec![c_out, c_in, kernel, kernel], fan_in, fan_out),
        bias: init.constant(vec![c_out], 0.0),
    }
}

fn spatial_conv_weights(c_in: usize, c_out: usize, init: &mut InitMode) -> SpatialConvWeights<Tensor<f32>> {
    SpatialConvWeights {
        convs: [
            conv_layer(c_in, c_out, 3, init),
            conv_layer(c_out, c_out, 3, init),
            conv_layer(c_out, c_out, 3, init),
        ],
    }
}

fn transformer_weights(config: &EpitConfig, init: &mut InitMode) -> BasicTransformerWeights<Tensor<f32>> {
    let c = config.channels;
    let d = config.embed_dim;
    let hidden = config.mlp_hidden_ratio * d;
    BasicTransformerWeights {
        w_in: init.draw(vec![c, d], c, d),
        ln1_gamma: init.constant(vec![d], 1.0),
        ln1_beta: init.constant(vec![d], 0.0),
        w_q: init.draw(vec![d, d], d, d),
        w_k: init.draw(vec![d, d], d, d),
        w_v: init.draw(vec![d, d], d, d),
        ln2_gamma: init.constant(vec![d], 1.0),
        ln2_beta: init.constant(vec![d], 0.0),
        mlp_w1: init.draw(vec![d, hidden], d, hidden),
        mlp_b1: init.constant(vec![hidden], 0.0),
        mlp_w2: init.draw(vec![hidden, d], hidden, d),
        mlp_b2: init.constant(vec![d], 0.0),
        w_out: init.draw(vec![d, c], d, c),
    }
}

/// Closed-form per-component sizes used by the ablation accounting tests.
pub mod sizes {
    use super::EpitConfig;

    pub fn conv(c_in: usize, c_out: usize, kernel: usize) -> usize {
        c_out * c_in * kernel * kernel + c_out
    }

    pub fn spatial_conv(c_in: usize, c_out: usize) -> usize {
        conv(c_in, c_out, 3) + 2 * conv(c_out, c_out, 3)
    }

    pub fn transformer(config: &EpitConfig) -> usize {
        let c = config.channels;
        let d = config.embed_dim;
        let hidden = config.mlp_hidden_ratio * d;
        // w_in + 2 LN pairs + QKV + MLP (with biases) + w_out
        c * d + 4 * d + 3 * d * d + (d * hidden + hidden) + (hidden * d + d) + d * c
    }

    pub fn unit(config: &EpitConfig) -> usize {
        if config.use_transformer {
            transformer(config)
        } else {
            spatial_conv(config.channels, config.channels)
        }
    }

    pub fn spatial_head(config: &EpitConfig) -> usize {
        let c = config.channels;
        conv(c, c * config.alpha * config.alpha, 1) + conv(c, config.io_channels, 3)
    }

    pub fn angular_head(config: &EpitConfig) -> usize {
        let c = config.channels;
        conv(c, c, 2) + conv(c, 49 * c, 1) + conv(c, 1, 3)
    }

    /// Closed-form total; cross-checked against enumeration in tests.
    pub fn total(config: &EpitConfig) -> usize {
        let c = config.channels;
        let stem = spatial_conv(config.io_channels, c);
        let units_per_block = if config.share_weights {
            1
        } else {
            config.use_horizontal as usize + config.use_vertical as usize
        };
        let per_block = units_per_block * unit(config)
            + if config.use_spatial_conv { spatial_conv(c, c) } else { 0 };
        let head = match config.mode {
            super::Mode::SpatialSr => spatial_head(config),
            super::Mode::AngularSr => angular_head(config),
        };
        stem + config.num_blocks * per_block + head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_identical_weights() {
        let config = EpitConfig::micro();
        let a = xavier_init(&config, 42).unwrap();
        let b = xavier_init(&config, 42).unwrap();
        let mut equal = true;
        let mut pairs = Vec::new();
        a.visit(&mut |name, t| pairs.push((name.to_string(), t.clone())));
        let mut idx = 0;
        b.visit(&mut |name, t| {
            let (n2, t2) = &pairs[idx];
            equal &= name == n2 && t == t2;
            idx += 1;
        });
        assert!(equal);
        let c = xavier_init(&config, 43).unwrap();
        assert_ne!(c.stem.convs[0].weight.data()[0], a.stem.convs[0].weight.data()[0]);
    }

    #[test]
    fn xavier_statistics() {
        // 256x256 matrix: mean within +-0.01 of 0 (3-sigma of uniform),
        // variance within +-15% of 2 / (fan_in + fan_out).
        let config = EpitConfig { channels: 256, embed_dim: 256, num_blocks: 1, ..EpitConfig::default() };
        let weights = xavier_init(&config, 7).unwrap();
        let mut matrix = None;
        weights.visit(&mut |name, t| {
            if name == "blocks.0.unit.w_q" {
                matrix = Some(t.clone());
            }
        });
        let matrix = matrix.unwrap();
        let n = matrix.numel() as f64;
        let mean: f64 = matrix.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        let var: f64 = matrix.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / (256.0 + 256.0);
        assert!((var - expected).abs() < 0.15 * expected, "var {var} vs {expected}");
    }

    #[test]
    fn param_count_matches_closed_form() {
        for config in [
            EpitConfig::default(),
            EpitConfig::micro(),
            EpitConfig { share_weights: false, ..EpitConfig::default() },
            EpitConfig { use_spatial_conv: false, ..EpitConfig::default() },
            EpitConfig { use_transformer: false, ..EpitConfig::default() },
            EpitConfig { use_horizontal: false, share_weights: false, ..EpitConfig::default() },
            EpitConfig { mode: Mode::AngularSr, ..EpitConfig::default() },
            EpitConfig { alpha: 4, io_channels: 3, ..EpitConfig::default() },
        ] {
            let weights = EpitWeights::zeros(&config).unwrap();
            assert_eq!(weights.param_count(), sizes::total(&config), "{config:?}");
        }
    }

    #[test]
    fn sharing_reduces_count_by_unit_size_per_block() {
        let shared = EpitConfig::default();
        let unshared = EpitConfig { share_weights: false, ..EpitConfig::default() };
        let a = EpitWeights::zeros(&shared).unwrap().param_count();
        let b = EpitWeights::zeros(&unshared).unwrap().param_count();
        assert!(a < b);
        assert_eq!(b - a, shared.num_blocks * sizes::transformer(&shared));
    }

    #[test]
    fn count_invariant_under_reinit() {
        let config = EpitConfig::micro();
        let a = xavier_init(&config, 1).unwrap().param_count();
        let b = xavier_init(&config, 2).unwrap().param_count();
        assert_eq!(a, b);
    }

    #[test]
    fn map_and_visit_agree_on_order() {
        let config = EpitConfig { share_weights: false, ..EpitConfig::micro() };
        let weights = EpitWeights::zeros(&config).unwrap();
        let mut visit_shapes = Vec::new();
        weights.visit(&mut |_, t| visit_shapes.push(t.shape().to_vec()));
        let mut map_shapes = Vec::new();
        let _ = weights.map(&mut |t| map_shapes.push(t.shape().to_vec()));
        assert_eq!(visit_shapes, map_shapes);
    }
}
