//! Forward pass, built entirely from tape operations so the same code path
//! serves inference, training, and 64-bit gradient checks.
//!
//! Features travel between stages in the canonical `(U, V, H, W, C)` layout.
//! EPI stages permute into `(G, L, C)` token volumes, run the
//! Basic-Transformer, and permute back; spatial stages batch the `U*V` views
//! through 2-D convolutions.

use super::{
    BasicTransformerWeights, EpitConfig, EpitWeights, HeadWeights, Mode, NetError,
    SpatialConvWeights, UnitWeights,
};
use crate::lf::{EpiOrientation, LightField};
use crate::tensor::{Padding, Scalar, Tape, Tensor, ValueId};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Selects one Basic-Transformer invocation whose attention matrix should be
/// captured during the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionTap {
    pub block: usize,
    pub orientation: EpiOrientation,
}

pub struct ForwardResult {
    pub output: ValueId,
    /// `(G, L, L)` softmax scores of the tapped invocation, if requested.
    pub attention: Option<ValueId>,
}

/// Registers every parameter as a gradient-tracked leaf (training).
pub fn bind_leaves<T: Scalar>(
    tape: &mut Tape<T>,
    weights: &EpitWeights<Tensor<f32>>,
) -> EpitWeights<ValueId> {
    weights.map(&mut |t| {
        let converted = Tensor::<T>::from_f32_slice(t.shape().to_vec(), t.data()).unwrap();
        tape.leaf(converted)
    })
}

/// Registers every parameter as a constant (inference).
pub fn bind_constants<T: Scalar>(
    tape: &mut Tape<T>,
    weights: &EpitWeights<Tensor<f32>>,
) -> EpitWeights<ValueId> {
    weights.map(&mut |t| {
        let converted = Tensor::<T>::from_f32_slice(t.shape().to_vec(), t.data()).unwrap();
        tape.constant(converted)
    })
}

fn feat_dims<T: Scalar>(tape: &Tape<T>, x: ValueId) -> [usize; 5] {
    let shape = tape.value(x).shape();
    [shape[0], shape[1], shape[2], shape[3], shape[4]]
}

/// Per-view stack of three 3x3 convolutions with LeakyReLU after each.
/// All `U*V` views share the weights and are processed as one conv batch.
pub fn spatial_conv<T: Scalar>(
    tape: &mut Tape<T>,
    x: ValueId,
    weights: &SpatialConvWeights<ValueId>,
    slope: f64,
) -> Result<ValueId, NetError> {
    let [u, v, h, w, c] = feat_dims(tape, x);
    let merged = tape.reshape(x, vec![u * v, h, w, c])?;
    let mut planes = tape.permute(merged, vec![0, 3, 1, 2])?;
    for conv in &weights.convs {
        planes = tape.conv2d(planes, conv.weight, conv.bias, Padding::Same)?;
        planes = tape.leaky_relu(planes, slope)?;
    }
    let c_out = tape.value(planes).shape()[1];
    let spatial_last = tape.permute(planes, vec![0, 2, 3, 1])?;
    Ok(tape.reshape(spatial_last, vec![u, v, h, w, c_out])?)
}

/// Scaled dot-product attention scores `softmax(Q K^T / sqrt(D))`.
/// Accepts `(L, D)` token matrices or `(G, L, D)` volumes.
pub fn attention_scores<T: Scalar>(
    tape: &mut Tape<T>,
    q: ValueId,
    k: ValueId,
) -> Result<ValueId, NetError> {
    let q_shape = tape.value(q).shape().to_vec();
    let rank2 = q_shape.len() == 2;
    let (q3, k3) = if rank2 {
        let l = q_shape[0];
        let d = q_shape[1];
        let k_len = tape.value(k).shape()[0];
        (
            tape.reshape(q, vec![1, l, d])?,
            tape.reshape(k, vec![1, k_len, d])?,
        )
    } else {
        (q, k)
    };
    let d = *tape.value(q3).shape().last().unwrap();
    let raw = tape.bmm_nt(q3, k3)?;
    let scaled = tape.scale(raw, 1.0 / (d as f64).sqrt())?;
    let soft = tape.softmax_last(scaled)?;
    if rank2 {
        let shape = tape.value(soft).shape().to_vec();
        Ok(tape.reshape(soft, vec![shape[1], shape[2]])?)
    } else {
        Ok(soft)
    }
}

/// One Basic-Transformer unit over a `(G, L, C)` token volume. Returns the
/// output volume and the `(G, L, L)` attention scores.
///
/// Pipeline: project tokens to the embedding width, pre-norm, self-attention
/// with a residual onto the *pre-norm* tokens, then a norm + MLP with its own
/// residual, and a projection back to feature width.
pub fn basic_transformer<T: Scalar>(
    tape: &mut Tape<T>,
    volume: ValueId,
    weights: &BasicTransformerWeights<ValueId>,
    slope: f64,
) -> Result<(ValueId, ValueId), NetError> {
    let tokens = tape.matmul(volume, weights.w_in)?;
    let normed = tape.layer_norm(tokens, weights.ln1_gamma, weights.ln1_beta, LAYER_NORM_EPS)?;
    let q = tape.matmul(normed, weights.w_q)?;
    let k = tape.matmul(normed, weights.w_k)?;
    let v = tape.matmul(normed, weights.w_v)?;
    let attention = attention_scores(tape, q, k)?;
    let context = tape.bmm(attention, v)?;
    let attended = tape.add(context, tokens)?;
    let normed2 = tape.layer_norm(attended, weights.ln2_gamma, weights.ln2_beta, LAYER_NORM_EPS)?;
    let hidden = tape.matmul(normed2, weights.mlp_w1)?;
    let hidden = tape.add_bias(hidden, weights.mlp_b1)?;
    let hidden = tape.leaky_relu(hidden, slope)?;
    let mlp_out = tape.matmul(hidden, weights.mlp_w2)?;
    let mlp_out = tape.add_bias(mlp_out, weights.mlp_b2)?;
    let enhanced = tape.add(mlp_out, attended)?;
    let output = tape.matmul(enhanced, weights.w_out)?;
    Ok((output, attention))
}

/// Reshape to one EPI orientation, run the transformer per group, reshape
/// back. Horizontal volumes are `(U*H, V*W, C)`, vertical `(V*W, U*H, C)`.
fn epi_transformer_stage<T: Scalar>(
    tape: &mut Tape<T>,
    x: ValueId,
    orientation: EpiOrientation,
    weights: &BasicTransformerWeights<ValueId>,
    slope: f64,
) -> Result<(ValueId, ValueId), NetError> {
    let [u, v, h, w, c] = feat_dims(tape, x);
    let volume = match orientation {
        EpiOrientation::Horizontal => {
            let grouped = tape.permute(x, vec![0, 2, 1, 3, 4])?; // (U,H,V,W,C)
            tape.reshape(grouped, vec![u * h, v * w, c])?
        }
        EpiOrientation::Vertical => {
            let grouped = tape.permute(x, vec![1, 3, 0, 2, 4])?; // (V,W,U,H,C)
            tape.reshape(grouped, vec![v * w, u * h, c])?
        }
    };
    let (transformed, attention) = basic_transformer(tape, volume, weights, slope)?;
    let restored = match orientation {
        EpiOrientation::Horizontal => {
            let split = tape.reshape(transformed, vec![u, h, v, w, c])?;
            tape.permute(split, vec![0, 2, 1, 3, 4])?
        }
        EpiOrientation::Vertical => {
            let split = tape.reshape(transformed, vec![v, w, u, h, c])?;
            tape.permute(split, vec![2, 0, 3, 1, 4])?
        }
    };
    Ok((restored, attention))
}

/// One non-local cascading block: the horizontal stage then the vertical
/// stage, each followed by the block's spatial convolutions. Ablation flags
/// skip stages; `tap` captures one stage's attention scores.
pub fn non_local_block<T: Scalar>(
    tape: &mut Tape<T>,
    mut x: ValueId,
    block: &super::BlockWeights<ValueId>,
    config: &EpitConfig,
    tap: Option<EpiOrientation>,
) -> Result<(ValueId, Option<ValueId>), NetError> {
    let mut captured = None;
    for orientation in [EpiOrientation::Horizontal, EpiOrientation::Vertical] {
        let enabled = match orientation {
            EpiOrientation::Horizontal => config.use_horizontal,
            EpiOrientation::Vertical => config.use_vertical,
        };
        if !enabled {
            continue;
        }
        let unit = block
            .unit_for(orientation)
            .ok_or_else(|| NetError::Config("block unit missing for enabled orientation".into()))?;
        x = match unit {
            UnitWeights::Transformer(t) => {
                let (out, attention) = epi_transformer_stage(tape, x, orientation, t, config.leaky_slope)?;
                if tap == Some(orientation) {
                    captured = Some(attention);
                }
                out
            }
            UnitWeights::ConvStack(c) => spatial_conv(tape, x, c, config.leaky_slope)?,
        };
        if let Some(spatial) = &block.spatial {
            x = spatial_conv(tape, x, spatial, config.leaky_slope)?;
        }
    }
    Ok((x, captured))
}

/// Full forward pass over features already on the tape.
/// `input` must be `(U, V, H, W, io_channels)`.
pub fn epit_forward_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    input: ValueId,
    weights: &EpitWeights<ValueId>,
    config: &EpitConfig,
    tap: Option<AttentionTap>,
) -> Result<ForwardResult, NetError> {
    let [u, v, _, _, c_in] = feat_dims(tape, input);
    if c_in != config.io_channels {
        return Err(NetError::InputChannels { expected: config.io_channels, got: c_in });
    }
    if let Some(t) = tap {
        let disabled = !config.use_transformer
            || match t.orientation {
                EpiOrientation::Horizontal => !config.use_horizontal,
                EpiOrientation::Vertical => !config.use_vertical,
            };
        if t.block >= config.num_blocks || disabled {
            return Err(NetError::TapOutOfRange {
                block: t.block,
                blocks: config.num_blocks,
                orientation: t.orientation,
                disabled,
            });
        }
    }

    let mut feat = spatial_conv(tape, input, &weights.stem, config.leaky_slope)?;
    let mut attention = None;
    for (i, block) in weights.blocks.iter().enumerate() {
        let block_tap = tap.filter(|t| t.block == i).map(|t| t.orientation);
        let (next, captured) = non_local_block(tape, feat, block, config, block_tap)?;
        feat = next;
        if captured.is_some() {
            attention = captured;
        }
    }

    let output = match &weights.head {
        HeadWeights::Spatial { up, out } => {
            let [u, v, h, w, c] = feat_dims(tape, feat);
            let merged = tape.reshape(feat, vec![u * v, h, w, c])?;
            let planes = tape.permute(merged, vec![0, 3, 1, 2])?;
            let expanded = tape.conv2d(planes, up.weight, up.bias, Padding::Same)?;
            let shuffled = tape.pixel_shuffle(expanded, config.alpha)?;
            let restored = tape.conv2d(shuffled, out.weight, out.bias, Padding::Same)?;
            let spatial_last = tape.permute(restored, vec![0, 2, 3, 1])?;
            let alpha = config.alpha;
            tape.reshape(spatial_last, vec![u, v, h * alpha, w * alpha, config.io_channels])?
        }
        HeadWeights::Angular { reduce, expand, out } => {
            if (u, v) != (2, 2) {
                return Err(NetError::AngularExtent { u, v });
            }
            asr_upsample_on_tape(tape, feat, reduce, expand, out)?
        }
    };
    Ok(ForwardResult { output, attention })
}

/// The angular upsampling head: a 2x2 no-padding convolution over the view
/// grid, channel expansion to `49*C`, pixel shuffle over the *angular* axes
/// to a 7x7 grid, then a spatial 3x3 reconstruction convolution.
fn asr_upsample_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    feat: ValueId,
    reduce: &super::ConvLayer<ValueId>,
    expand: &super::ConvLayer<ValueId>,
    out: &super::ConvLayer<ValueId>,
) -> Result<ValueId, NetError> {
    let [u, v, h, w, c] = feat_dims(tape, feat);
    // Angular grid becomes the conv plane; spatial sites become the batch.
    let angular_last = tape.permute(feat, vec![2, 3, 4, 0, 1])?; // (H,W,C,U,V)
    let batched = tape.reshape(angular_last, vec![h * w, c, u, v])?;
    let reduced = tape.conv2d(batched, reduce.weight, reduce.bias, Padding::Valid)?; // (HW,C,1,1)
    let expanded = tape.conv2d(reduced, expand.weight, expand.bias, Padding::Same)?; // (HW,49C,1,1)
    let up = tape.pixel_shuffle(expanded, 7)?; // (HW,C,7,7)
    let split = tape.reshape(up, vec![h, w, c, 7, 7])?;
    let canonical = tape.permute(split, vec![3, 4, 0, 1, 2])?; // (7,7,H,W,C)
    // Final spatial convolution per synthesized view.
    let merged = tape.reshape(canonical, vec![49, h, w, c])?;
    let planes = tape.permute(merged, vec![0, 3, 1, 2])?;
    let restored = tape.conv2d(planes, out.weight, out.bias, Padding::Same)?;
    let spatial_last = tape.permute(restored, vec![0, 2, 3, 1])?;
    Ok(tape.reshape(spatial_last, vec![7, 7, h, w, 1])?)
}

fn lf_to_tensor<T: Scalar>(lf: &LightField) -> Tensor<T> {
    let (u, v, h, w) = lf.extents();
    Tensor::from_f32_slice(vec![u, v, h, w, lf.channels()], lf.data()).unwrap()
}

fn tensor_to_lf<T: Scalar>(t: &Tensor<T>) -> Result<LightField, NetError> {
    let s = t.shape();
    let data: Vec<f32> = t.data().iter().map(|v| v.to_f32()).collect();
    Ok(LightField::new(s[0], s[1], s[2], s[3], s[4], data)?)
}

/// Spatial super-resolution inference: `(U, V, H, W)` -> `(U, V, aH, aW)`.
pub fn epit_forward(
    lf: &LightField,
    weights: &EpitWeights<Tensor<f32>>,
    config: &EpitConfig,
) -> Result<LightField, NetError> {
    if config.mode != Mode::SpatialSr {
        return Err(NetError::WrongMode { mode: Mode::SpatialSr, expected: config.mode });
    }
    weights.validate_against(config)?;
    let mut tape: Tape<f32> = Tape::new();
    let input = tape.constant(lf_to_tensor(lf));
    let bound = bind_constants(&mut tape, weights);
    let result = epit_forward_on_tape(&mut tape, input, &bound, config, None)?;
    tensor_to_lf(tape.value(result.output))
}

/// Angular super-resolution inference: `(2, 2, H, W)` -> `(7, 7, H, W)`.
pub fn epit_forward_asr(
    lf: &LightField,
    weights: &EpitWeights<Tensor<f32>>,
    config: &EpitConfig,
) -> Result<LightField, NetError> {
    if config.mode != Mode::AngularSr {
        return Err(NetError::WrongMode { mode: Mode::AngularSr, expected: config.mode });
    }
    weights.validate_against(config)?;
    let mut tape: Tape<f32> = Tape::new();
    let input = tape.constant(lf_to_tensor(lf));
    let bound = bind_constants(&mut tape, weights);
    let result = epit_forward_on_tape(&mut tape, input, &bound, config, None)?;
    tensor_to_lf(tape.value(result.output))
}

/// Inference plus one captured attention matrix `(G, L, L)`.
pub fn epit_forward_with_attention(
    lf: &LightField,
    weights: &EpitWeights<Tensor<f32>>,
    config: &EpitConfig,
    tap: AttentionTap,
) -> Result<(LightField, Tensor<f32>), NetError> {
    weights.validate_against(config)?;
    let mut tape: Tape<f32> = Tape::new();
    let input = tape.constant(lf_to_tensor(lf));
    let bound = bind_constants(&mut tape, weights);
    let result = epit_forward_on_tape(&mut tape, input, &bound, config, Some(tap))?;
    let attention = tape.value(result.attention.expect("tap validated")).clone();
    Ok((tensor_to_lf(tape.value(result.output))?, attention))
}
