//! Operation recording and reverse-mode differentiation.
//!
//! Every forward call computes its value eagerly and appends a node to the
//! tape, so node ids are already in topological order: backward walks the
//! node list once in reverse, accumulating (never overwriting) gradients.

use super::{Scalar, Tensor, TensorError};

pub type ValueId = usize;

/// Zero padding policy for [`Tape::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so spatial extents are preserved (odd kernels only).
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { requires_grad: bool },
    Add(ValueId, ValueId),
    Mul(ValueId, ValueId),
    AddBias { x: ValueId, bias: ValueId },
    Scale { x: ValueId, factor: f64 },
    Matmul { a: ValueId, b: ValueId },
    Bmm { a: ValueId, b: ValueId },
    BmmNt { a: ValueId, b: ValueId },
    SoftmaxLast { x: ValueId },
    LayerNorm { x: ValueId, gamma: ValueId, beta: ValueId, eps: f64 },
    Conv2d { x: ValueId, weight: ValueId, bias: ValueId, padding: Padding },
    LeakyRelu { x: ValueId, slope: f64 },
    PixelShuffle { x: ValueId, factor: usize },
    L1Loss { pred: ValueId, target: ValueId },
    Reshape { x: ValueId },
    Permute { x: ValueId, axes: Vec<usize> },
    Sum { x: ValueId },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

/// Single-writer record of forward operations.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), check_finite: cfg!(debug_assertions) }
    }

    /// Toggles the per-op NaN/Inf diagnostic (on by default in debug builds).
    pub fn set_finite_checks(&mut self, enabled: bool) {
        self.check_finite = enabled;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    /// Records a gradient-requiring input (a parameter or differentiable input).
    pub fn leaf(&mut self, value: Tensor<T>) -> ValueId {
        self.push_unchecked(value, Op::Leaf { requires_grad: true })
    }

    /// Records a constant input; no gradient is reported for it.
    pub fn constant(&mut self, value: Tensor<T>) -> ValueId {
        self.push_unchecked(value, Op::Leaf { requires_grad: false })
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op) -> Result<ValueId, TensorError> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, op))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b))
    }

    /// Adds a rank-1 bias over the last axis.
    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let d = *tx.shape().last().ok_or(TensorError::BadRank {
            op: "add_bias",
            need: 1,
            shape: tx.shape().to_vec(),
        })?;
        if tb.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let bd = tb.data();
        let data: Vec<T> = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % d])
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_bias", value, Op::AddBias { x, bias })
    }

    pub fn scale(&mut self, x: ValueId, factor: f64) -> Result<ValueId, TensorError> {
        let tx = self.value(x);
        let f = T::from_f64(factor);
        let data: Vec<T> = tx.data().iter().map(|&v| v * f).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("scale", value, Op::Scale { x, factor })
    }

    /// `a [.., M, K] x b [K, N] -> [.., M, N]`; leading axes of `a` are batch.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() < 2 || tb.shape().len() != 2 {
            return Err(TensorError::BadRank { op: "matmul", need: 2, shape: ta.shape().to_vec() });
        }
        let rank = ta.shape().len();
        let (m, k) = (ta.shape()[rank - 2], ta.shape()[rank - 1]);
        let (kb, n) = (tb.shape()[0], tb.shape()[1]);
        if k != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let batch = ta.numel() / (m * k);
        let mut out = vec![T::ZERO; batch * m * n];
        for bi in 0..batch {
            gemm_block(
                &mut out[bi * m * n..(bi + 1) * m * n],
                &ta.data()[bi * m * k..(bi + 1) * m * k],
                tb.data(),
                m,
                k,
                n,
                false,
                false,
            );
        }
        let mut shape = ta.shape().to_vec();
        shape[rank - 2] = m;
        shape[rank - 1] = n;
        let value = Tensor::new(shape, out)?;
        self.push("matmul", value, Op::Matmul { a, b })
    }

    /// Batched `a [B, M, K] x b [B, K, N] -> [B, M, N]`.
    pub fn bmm(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ([bsz, m, k], [bb, kb, n]) = (rank3(ta, "bmm")?, rank3(tb, "bmm")?);
        if bsz != bb || k != kb {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![T::ZERO; bsz * m * n];
        for bi in 0..bsz {
            gemm_block(
                &mut out[bi * m * n..(bi + 1) * m * n],
                &ta.data()[bi * m * k..(bi + 1) * m * k],
                &tb.data()[bi * k * n..(bi + 1) * k * n],
                m,
                k,
                n,
                false,
                false,
            );
        }
        let value = Tensor::new(vec![bsz, m, n], out)?;
        self.push("bmm", value, Op::Bmm { a, b })
    }

    /// Batched `a [B, M, K] x b^T [B, N, K] -> [B, M, N]` (query-key products).
    pub fn bmm_nt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ([bsz, m, k], [bb, n, kb]) = (rank3(ta, "bmm_nt")?, rank3(tb, "bmm_nt")?);
        if bsz != bb || k != kb {
            return Err(TensorError::ShapeMismatch {
                op: "bmm_nt",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![T::ZERO; bsz * m * n];
        for bi in 0..bsz {
            gemm_block(
                &mut out[bi * m * n..(bi + 1) * m * n],
                &ta.data()[bi * m * k..(bi + 1) * m * k],
                &tb.data()[bi * n * k..(bi + 1) * n * k],
                m,
                k,
                n,
                false,
                true,
            );
        }
        let value = Tensor::new(vec![bsz, m, n], out)?;
        self.push("bmm_nt", value, Op::BmmNt { a, b })
    }

    /// Exp-normalization over the last axis with max-subtraction stability.
    pub fn softmax_last(&mut self, x: ValueId) -> Result<ValueId, TensorError> {
        let tx = self.value(x);
        let n = *tx.shape().last().ok_or(TensorError::BadRank {
            op: "softmax_last",
            need: 1,
            shape: tx.shape().to_vec(),
        })?;
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            let mut max = row[0];
            for &v in row.iter() {
                max = max.maximum(v);
            }
            let mut sum = T::ZERO;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("softmax_last", value, Op::SoftmaxLast { x })
    }

    /// Per-token standardization over the last axis, then affine `gamma, beta`.
    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    ) -> Result<ValueId, TensorError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = *tx.shape().last().ok_or(TensorError::BadRank {
            op: "layer_norm",
            need: 1,
            shape: tx.shape().to_vec(),
        })?;
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: tg.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (gd, bd) = (tg.data(), tb.data());
        let inv_d = T::from_f64(1.0 / d as f64);
        let epsv = T::from_f64(eps);
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let inv_std = T::ONE / (var + epsv).sqrt();
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv_std * gd[i] + bd[i];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("layer_norm", value, Op::LayerNorm { x, gamma, beta, eps })
    }

    /// Cross-correlation `x [B, Ci, H, W] * w [Co, Ci, kh, kw] + bias [Co]`.
    pub fn conv2d(
        &mut self,
        x: ValueId,
        weight: ValueId,
        bias: ValueId,
        padding: Padding,
    ) -> Result<ValueId, TensorError> {
        let (tx, tw, tb) = (self.value(x), self.value(weight), self.value(bias));
        let [bsz, ci, h, w] = rank4(tx, "conv2d")?;
        let [co, ciw, kh, kw] = rank4(tw, "conv2d")?;
        if ci != ciw || tb.shape() != [co] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        let (ph, pw) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(TensorError::EvenSamePadding { kh, kw });
                }
                ((kh - 1) / 2, (kw - 1) / 2)
            }
            Padding::Valid => (0, 0),
        };
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        let oh = h + 2 * ph - kh + 1;
        let ow = w + 2 * pw - kw + 1;
        let mut out = vec![T::ZERO; bsz * co * oh * ow];
        conv2d_fwd(
            &mut out,
            tx.data(),
            tw.data(),
            tb.data(),
            [bsz, ci, h, w],
            [co, kh, kw],
            [ph, pw],
            [oh, ow],
        );
        let value = Tensor::new(vec![bsz, co, oh, ow], out)?;
        self.push("conv2d", value, Op::Conv2d { x, weight, bias, padding })
    }

    pub fn leaky_relu(&mut self, x: ValueId, slope: f64) -> Result<ValueId, TensorError> {
        let tx = self.value(x);
        let s = T::from_f64(slope);
        let data: Vec<T> = tx
            .data()
            .iter()
            .map(|&v| if v >= T::ZERO { v } else { v * s })
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("leaky_relu", value, Op::LeakyRelu { x, slope })
    }

    /// `[B, C*r^2, H, W] -> [B, C, rH, rW]`:
    /// `out(b, c, r*h+i, r*w+j) = in(b, c*r^2 + i*r + j, h, w)`.
    pub fn pixel_shuffle(&mut self, x: ValueId, factor: usize) -> Result<ValueId, TensorError> {
        let tx = self.value(x);
        let [bsz, cr2, h, w] = rank4(tx, "pixel_shuffle")?;
        let r2 = factor * factor;
        if cr2 % r2 != 0 {
            return Err(TensorError::NotDivisible { channels: cr2, factor });
        }
        let c = cr2 / r2;
        let mut out = vec![T::ZERO; tx.numel()];
        pixel_shuffle_map(tx.data(), &mut out, [bsz, c, h, w], factor, false);
        let value = Tensor::new(vec![bsz, c, h * factor, w * factor], out)?;
        self.push("pixel_shuffle", value, Op::PixelShuffle { x, factor })
    }

    /// Mean absolute difference; a scalar node.
    pub fn l1_loss(&mut self, pred: ValueId, target: ValueId) -> Result<ValueId, TensorError> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "l1_loss",
                lhs: tp.shape().to_vec(),
                rhs: tt.shape().to_vec(),
            });
        }
        let n = T::from_f64(tp.numel() as f64);
        let total: T = tp.data().iter().zip(tt.data()).map(|(&p, &t)| (p - t).abs()).sum();
        let value = Tensor::scalar(total / n);
        self.push("l1_loss", value, Op::L1Loss { pred, target })
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId, TensorError> {
        let value = self.value(x).reshaped(shape)?;
        self.push("reshape", value, Op::Reshape { x })
    }

    pub fn permute(&mut self, x: ValueId, axes: Vec<usize>) -> Result<ValueId, TensorError> {
        let tx = self.value(x);
        let rank = tx.shape().len();
        let mut seen = vec![false; rank];
        let valid = axes.len() == rank && axes.iter().all(|&a| a < rank && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(TensorError::BadAxes { axes, rank });
        }
        let (data, shape) = permute_fwd(tx.data(), tx.shape(), &axes);
        let value = Tensor::new(shape, data)?;
        self.push("permute", value, Op::Permute { x, axes })
    }

    /// Sum of all elements; a scalar node.
    pub fn sum(&mut self, x: ValueId) -> Result<ValueId, TensorError> {
        let total: T = self.value(x).data().iter().copied().sum();
        let value = Tensor::scalar(total);
        self.push("sum", value, Op::Sum { x })
    }

    /// Reverse pass from a scalar loss; visits each node exactly once.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<T>, TensorError> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: loss_value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![T::ONE]);

        for id in (0..=loss).rev() {
            let out_grad = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(id, &out_grad, &mut grads);
            // Constants never report a gradient.
            let keep = !matches!(self.nodes[id].op, Op::Leaf { requires_grad: false });
            if keep {
                grads[id] = Some(out_grad);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, id: ValueId, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let acc = acc_buf::<T>;
        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                for (&src, dst) in g.iter().zip(acc(grads, *a, g.len())) {
                    *dst += src;
                }
                for (&src, dst) in g.iter().zip(acc(grads, *b, g.len())) {
                    *dst += src;
                }
            }
            Op::Mul(a, b) => {
                let bd = self.value(*b).data().to_vec();
                for (i, dst) in acc(grads, *a, g.len()).iter_mut().enumerate() {
                    *dst += g[i] * bd[i];
                }
                let ad = self.value(*a).data().to_vec();
                for (i, dst) in acc(grads, *b, g.len()).iter_mut().enumerate() {
                    *dst += g[i] * ad[i];
                }
            }
            Op::AddBias { x, bias } => {
                for (&src, dst) in g.iter().zip(acc(grads, *x, g.len())) {
                    *dst += src;
                }
                let d = self.value(*bias).numel();
                let gb = acc(grads, *bias, d);
                for (i, &src) in g.iter().enumerate() {
                    gb[i % d] += src;
                }
            }
            Op::Scale { x, factor } => {
                let f = T::from_f64(*factor);
                for (&src, dst) in g.iter().zip(acc(grads, *x, g.len())) {
                    *dst += src * f;
                }
            }
            Op::Matmul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let rank = ta.shape().len();
                let (m, k) = (ta.shape()[rank - 2], ta.shape()[rank - 1]);
                let n = tb.shape()[1];
                let batch = ta.numel() / (m * k);
                {
                    let ga = acc(grads, *a, ta.numel());
                    for bi in 0..batch {
                        // dA = dC * B^T
                        gemm_block(
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            tb.data(),
                            m,
                            n,
                            k,
                            false,
                            true,
                        );
                    }
                }
                let gb = acc(grads, *b, tb.numel());
                for bi in 0..batch {
                    // dB += A^T * dC, accumulated over the batch
                    gemm_block(
                        gb,
                        &ta.data()[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        k,
                        m,
                        n,
                        true,
                        false,
                    );
                }
            }
            Op::Bmm { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bsz, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = tb.shape()[2];
                {
                    let ga = acc(grads, *a, ta.numel());
                    for bi in 0..bsz {
                        gemm_block(
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &tb.data()[bi * k * n..(bi + 1) * k * n],
                            m,
                            n,
                            k,
                            false,
                            true,
                        );
                    }
                }
                let gb = acc(grads, *b, tb.numel());
                for bi in 0..bsz {
                    gemm_block(
                        &mut gb[bi * k * n..(bi + 1) * k * n],
                        &ta.data()[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        k,
                        m,
                        n,
                        true,
                        false,
                    );
                }
            }
            Op::BmmNt { a, b } => {
                // C = A * B^T with A [B,M,K], B [B,N,K]:
                // dA = dC * B, dB = dC^T * A.
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bsz, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = tb.shape()[1];
                {
                    let ga = acc(grads, *a, ta.numel());
                    for bi in 0..bsz {
                        gemm_block(
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &tb.data()[bi * n * k..(bi + 1) * n * k],
                            m,
                            n,
                            k,
                            false,
                            false,
                        );
                    }
                }
                let gb = acc(grads, *b, tb.numel());
                for bi in 0..bsz {
                    gemm_block(
                        &mut gb[bi * n * k..(bi + 1) * n * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &ta.data()[bi * m * k..(bi + 1) * m * k],
                        n,
                        m,
                        k,
                        true,
                        false,
                    );
                }
            }
            Op::SoftmaxLast { x } => {
                let y = self.value(id).data();
                let n = *self.value(id).shape().last().unwrap();
                let gx = acc(grads, *x, y.len());
                for (row, (yrow, grow)) in y.chunks_exact(n).zip(g.chunks_exact(n)).enumerate() {
                    let dot: T = yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum();
                    let out = &mut gx[row * n..(row + 1) * n];
                    for i in 0..n {
                        out[i] += yrow[i] * (grow[i] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let tx = self.value(*x);
                let d = *tx.shape().last().unwrap();
                let rows = tx.numel() / d;
                let gd = self.value(*gamma).data().to_vec();
                let inv_d = T::from_f64(1.0 / d as f64);
                let epsv = T::from_f64(*eps);
                let xd = tx.data();
                // gamma/beta first so the x buffer borrow is exclusive after.
                {
                    let ggamma = acc(grads, *gamma, d);
                    for r in 0..rows {
                        let xrow = &xd[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mean = xrow.iter().copied().sum::<T>() * inv_d;
                        let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                        let inv_std = T::ONE / (var + epsv).sqrt();
                        for i in 0..d {
                            ggamma[i] += grow[i] * (xrow[i] - mean) * inv_std;
                        }
                    }
                }
                {
                    let gbeta = acc(grads, *beta, d);
                    for r in 0..rows {
                        let grow = &g[r * d..(r + 1) * d];
                        for i in 0..d {
                            gbeta[i] += grow[i];
                        }
                    }
                }
                let gx = acc(grads, *x, tx.numel());
                for r in 0..rows {
                    let xrow = &xd[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let mean = xrow.iter().copied().sum::<T>() * inv_d;
                    let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                    let inv_std = T::ONE / (var + epsv).sqrt();
                    let mut mean_dg = T::ZERO;
                    let mut mean_dgx = T::ZERO;
                    for i in 0..d {
                        let dg = grow[i] * gd[i];
                        let xh = (xrow[i] - mean) * inv_std;
                        mean_dg += dg;
                        mean_dgx += dg * xh;
                    }
                    mean_dg = mean_dg * inv_d;
                    mean_dgx = mean_dgx * inv_d;
                    let out = &mut gx[r * d..(r + 1) * d];
                    for i in 0..d {
                        let dg = grow[i] * gd[i];
                        let xh = (xrow[i] - mean) * inv_std;
                        out[i] += (dg - mean_dg - xh * mean_dgx) * inv_std;
                    }
                }
            }
            Op::Conv2d { x, weight, bias, padding } => {
                let (tx, tw) = (self.value(*x), self.value(*weight));
                let [bsz, ci, h, w] = rank4(tx, "conv2d").unwrap();
                let [co, _, kh, kw] = rank4(tw, "conv2d").unwrap();
                let (ph, pw) = match padding {
                    Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
                    Padding::Valid => (0, 0),
                };
                let oh = h + 2 * ph - kh + 1;
                let ow = w + 2 * pw - kw + 1;
                {
                    let gb = acc(grads, *bias, co);
                    for bi in 0..bsz {
                        for o in 0..co {
                            let base = ((bi * co + o) * oh) * ow;
                            gb[o] += g[base..base + oh * ow].iter().copied().sum();
                        }
                    }
                }
                {
                    let gw = acc(grads, *weight, tw.numel());
                    conv2d_bwd_weight(gw, tx.data(), g, [bsz, ci, h, w], [co, kh, kw], [ph, pw], [oh, ow]);
                }
                let gx = acc(grads, *x, tx.numel());
                conv2d_bwd_input(gx, tw.data(), g, [bsz, ci, h, w], [co, kh, kw], [ph, pw], [oh, ow]);
            }
            Op::LeakyRelu { x, slope } => {
                let s = T::from_f64(*slope);
                let xd = self.value(*x).data();
                let gx = acc(grads, *x, xd.len());
                for i in 0..xd.len() {
                    // derivative at exactly 0 is defined as 1
                    let gate = if xd[i] >= T::ZERO { T::ONE } else { s };
                    gx[i] += g[i] * gate;
                }
            }
            Op::PixelShuffle { x, factor } => {
                let tx = self.value(*x);
                let [bsz, cr2, h, w] = rank4(tx, "pixel_shuffle").unwrap();
                let c = cr2 / (factor * factor);
                let gx = acc(grads, *x, tx.numel());
                pixel_shuffle_map(g, gx, [bsz, c, h, w], *factor, true);
            }
            Op::L1Loss { pred, target } => {
                let (tp, tt) = (self.value(*pred), self.value(*target));
                let inv_n = T::from_f64(1.0 / tp.numel() as f64);
                let seed = g[0] * inv_n;
                let (pd, td) = (tp.data(), tt.data());
                {
                    let gp = acc(grads, *pred, pd.len());
                    for i in 0..pd.len() {
                        gp[i] += seed * sign(pd[i] - td[i]);
                    }
                }
                let gt = acc(grads, *target, td.len());
                for i in 0..td.len() {
                    gt[i] += -(seed * sign(pd[i] - td[i]));
                }
            }
            Op::Reshape { x } => {
                for (&src, dst) in g.iter().zip(acc(grads, *x, g.len())) {
                    *dst += src;
                }
            }
            Op::Permute { x, axes } => {
                let out_shape = self.value(id).shape();
                let mut inverse = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (gperm, _) = permute_fwd(g, out_shape, &inverse);
                for (&src, dst) in gperm.iter().zip(acc(grads, *x, gperm.len())) {
                    *dst += src;
                }
            }
            Op::Sum { x } => {
                let seed = g[0];
                let numel = self.value(*x).numel();
                for dst in acc(grads, *x, numel) {
                    *dst += seed;
                }
            }
        }
    }
}

/// Gradient buffers keyed by tensor id, produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to node `id`, if any path reached it.
    pub fn get(&self, id: ValueId) -> Option<&[T]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Dense gradient; zeros for nodes the loss does not depend on.
    pub fn dense(&self, id: ValueId, numel: usize) -> Vec<T> {
        match self.get(id) {
            Some(g) => g.to_vec(),
            None => vec![T::ZERO; numel],
        }
    }
}

fn acc_buf<T: Scalar>(grads: &mut [Option<Vec<T>>], target: ValueId, numel: usize) -> &mut [T] {
    grads[target].get_or_insert_with(|| vec![T::ZERO; numel]).as_mut_slice()
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::ZERO {
        T::ONE
    } else if v < T::ZERO {
        -T::ONE
    } else {
        T::ZERO
    }
}

fn rank3<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 3], TensorError> {
    match t.shape() {
        &[a, b, c] => Ok([a, b, c]),
        _ => Err(TensorError::BadRank { op, need: 3, shape: t.shape().to_vec() }),
    }
}

fn rank4<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 4], TensorError> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(TensorError::BadRank { op, need: 4, shape: t.shape().to_vec() }),
    }
}

/// `c += op(a) * op(b)` on row-major blocks: `a` is `(m, k)` (or `(k, m)`
/// stored transposed when `ta`), `b` is `(k, n)` (or `(n, k)` when `tb`).
fn gemm_block<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, ta: bool, tb: bool) {
    for i in 0..m {
        for p in 0..k {
            let av = if ta { a[p * m + i] } else { a[i * k + p] };
            let crow = &mut c[i * n..(i + 1) * n];
            if tb {
                for (j, cv) in crow.iter_mut().enumerate() {
                    *cv += av * b[j * k + p];
                }
            } else {
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_fwd<T: Scalar>(
    out: &mut [T],
    x: &[T],
    w: &[T],
    bias: &[T],
    [bsz, ci, h, wd]: [usize; 4],
    [co, kh, kw]: [usize; 3],
    [ph, pw]: [usize; 2],
    [oh, ow]: [usize; 2],
) {
    for b in 0..bsz {
        for o in 0..co {
            let out_base = (b * co + o) * oh * ow;
            out[out_base..out_base + oh * ow].fill(bias[o]);
            for c in 0..ci {
                let x_base = (b * ci + c) * h * wd;
                for i in 0..kh {
                    let y_lo = ph.saturating_sub(i);
                    let y_hi = (h + ph - i).min(oh);
                    for j in 0..kw {
                        let wv = w[((o * ci + c) * kh + i) * kw + j];
                        let x_lo = pw.saturating_sub(j);
                        let x_hi = (wd + pw - j).min(ow);
                        for y in y_lo..y_hi {
                            let sy = y + i - ph;
                            let in_row = x_base + sy * wd + j;
                            let out_row = out_base + y * ow;
                            for xx in x_lo..x_hi {
                                out[out_row + xx] += wv * x[in_row + xx - pw];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_bwd_weight<T: Scalar>(
    gw: &mut [T],
    x: &[T],
    g: &[T],
    [bsz, ci, h, wd]: [usize; 4],
    [co, kh, kw]: [usize; 3],
    [ph, pw]: [usize; 2],
    [oh, ow]: [usize; 2],
) {
    for b in 0..bsz {
        for o in 0..co {
            let g_base = (b * co + o) * oh * ow;
            for c in 0..ci {
                let x_base = (b * ci + c) * h * wd;
                for i in 0..kh {
                    let y_lo = ph.saturating_sub(i);
                    let y_hi = (h + ph - i).min(oh);
                    for j in 0..kw {
                        let x_lo = pw.saturating_sub(j);
                        let x_hi = (wd + pw - j).min(ow);
                        let mut acc = T::ZERO;
                        for y in y_lo..y_hi {
                            let sy = y + i - ph;
                            let in_row = x_base + sy * wd + j;
                            let g_row = g_base + y * ow;
                            for xx in x_lo..x_hi {
                                acc += g[g_row + xx] * x[in_row + xx - pw];
                            }
                        }
                        gw[((o * ci + c) * kh + i) * kw + j] += acc;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_bwd_input<T: Scalar>(
    gx: &mut [T],
    w: &[T],
    g: &[T],
    [bsz, ci, h, wd]: [usize; 4],
    [co, kh, kw]: [usize; 3],
    [ph, pw]: [usize; 2],
    [oh, ow]: [usize; 2],
) {
    for b in 0..bsz {
        for o in 0..co {
            let g_base = (b * co + o) * oh * ow;
            for c in 0..ci {
                let x_base = (b * ci + c) * h * wd;
                for i in 0..kh {
                    let y_lo = ph.saturating_sub(i);
                    let y_hi = (h + ph - i).min(oh);
                    for j in 0..kw {
                        let wv = w[((o * ci + c) * kh + i) * kw + j];
                        let x_lo = pw.saturating_sub(j);
                        let x_hi = (wd + pw - j).min(ow);
                        for y in y_lo..y_hi {
                            let sy = y + i - ph;
                            let in_row = x_base + sy * wd + j;
                            let g_row = g_base + y * ow;
                            for xx in x_lo..x_hi {
                                gx[in_row + xx - pw] += g[g_row + xx] * wv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward (`inverse = false`) or transposed (`inverse = true`) depth-to-space
/// index map; `[bsz, c, h, w]` are the *output-side* channel/spatial extents.
fn pixel_shuffle_map<T: Scalar>(src: &[T], dst: &mut [T], [bsz, c, h, w]: [usize; 4], r: usize, inverse: bool) {
    let r2 = r * r;
    for b in 0..bsz {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let in_ch = ch * r2 + i * r + j;
                    for y in 0..h {
                        let in_row = ((b * c * r2 + in_ch) * h + y) * w;
                        let out_row = ((b * c + ch) * (h * r) + y * r + i) * (w * r) + j;
                        for x in 0..w {
                            let in_idx = in_row + x;
                            let out_idx = out_row + x * r;
                            if inverse {
                                dst[in_idx] += src[out_idx];
                            } else {
                                dst[out_idx] = src[in_idx];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn permute_fwd<T: Scalar>(x: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let mapped: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.len();
    let mut out = vec![T::ZERO; n];
    if rank == 0 {
        out.copy_from_slice(x);
        return (out, out_shape);
    }
    let mut coords = vec![0usize; rank];
    let mut ii = 0usize;
    for o in out.iter_mut() {
        *o = x[ii];
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < out_shape[d] {
                ii += mapped[d];
                break;
            }
            coords[d] = 0;
            ii -= (out_shape[d] - 1) * mapped[d];
        }
    }
    (out, out_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        Tensor::from_fn(shape.to_vec(), |_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 2000) as f64 / 1000.0 - 1.0
        })
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.leaf(pseudo(&[3, 4], 1));
        let eye = Tensor::from_fn(vec![4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        let b = tape.constant(eye);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), tape.value(a).data());
    }

    #[test]
    fn matmul_small_oracle() {
        let mut tape = Tape::new();
        let a = tape.leaf(tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(tensor(&[2, 1], &[5.0, 6.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_extent_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(pseudo(&[2, 3], 1));
        let b = tape.leaf(pseudo(&[4, 2], 2));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn batched_matmul_matches_per_slice() {
        let mut tape = Tape::new();
        let a = tape.leaf(pseudo(&[2, 3, 4], 5));
        let b = tape.leaf(pseudo(&[4, 2], 6));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 3, 2]);
        for bi in 0..2 {
            let mut t2 = Tape::new();
            let slice = Tensor::new(
                vec![3, 4],
                tape.value(a).data()[bi * 12..(bi + 1) * 12].to_vec(),
            )
            .unwrap();
            let a2 = t2.leaf(slice);
            let b2 = t2.leaf(tape.value(b).clone());
            let c2 = t2.matmul(a2, b2).unwrap();
            assert_eq!(&tape.value(c).data()[bi * 6..(bi + 1) * 6], t2.value(c2).data());
        }
    }

    #[test]
    fn bmm_nt_is_explicit_dot_products() {
        let mut tape = Tape::new();
        let q = tape.leaf(pseudo(&[2, 3, 4], 11));
        let k = tape.leaf(pseudo(&[2, 5, 4], 12));
        let s = tape.bmm_nt(q, k).unwrap();
        let (qd, kd) = (tape.value(q).data().to_vec(), tape.value(k).data().to_vec());
        for b in 0..2 {
            for i in 0..3 {
                for j in 0..5 {
                    let mut dot = 0.0;
                    for d in 0..4 {
                        dot += qd[(b * 3 + i) * 4 + d] * kd[(b * 5 + j) * 4 + d];
                    }
                    let got = tape.value(s).data()[(b * 3 + i) * 5 + j];
                    assert!((got - dot).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn softmax_uniform_and_shift_invariance() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(&[1, 4], &[3.0, 3.0, 3.0, 3.0]));
        let y = tape.softmax_last(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let a = tape.leaf(tensor(&[2], &[0.4, -1.7]));
        let b = tape.leaf(tensor(&[2], &[0.4 + 123.0, -1.7 + 123.0]));
        let ya = tape.softmax_last(a).unwrap();
        let yb = tape.softmax_last(b).unwrap();
        for (p, q) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
            assert!((p - q).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_log_two() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(&[2], &[0.0, std::f64::consts::LN_2]));
        let y = tape.softmax_last(x).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((out[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_stable_at_large_magnitude() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(&[2, 3], &[1e4, -1e4, 0.0, 9999.0, 10000.0, 9998.0]));
        let y = tape.softmax_last(x).unwrap();
        for row in tape.value(y).data().chunks_exact(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn layer_norm_constant_token_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(&[1, 4], &[0.7, 0.7, 0.7, 0.7]));
        let gamma = tape.leaf(tensor(&[4], &[1.0; 4]));
        let beta = tape.leaf(tensor(&[4], &[0.0; 4]));
        let y = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
        for &v in tape.value(y).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn layer_norm_two_point_token() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(&[1, 2], &[-1.0, 1.0]));
        let gamma = tape.leaf(tensor(&[2], &[1.0, 1.0]));
        let beta = tape.leaf(tensor(&[2], &[0.0, 0.0]));
        let y = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
        let expect = 1.0 / (1.0 + 1e-5f64).sqrt();
        let out = tape.value(y).data();
        assert!((out[0] + expect).abs() < 1e-12);
        assert!((out[1] - expect).abs() < 1e-12);
        assert!((out[1] - 0.999995).abs() < 1e-6);
    }

    #[test]
    fn conv_identity_kernels() {
        let mut tape = Tape::new();
        let x = tape.leaf(pseudo(&[1, 1, 4, 5], 3));
        // 1x1 kernel of value 1
        let w1 = tape.leaf(tensor(&[1, 1, 1, 1], &[1.0]));
        let b0 = tape.leaf(tensor(&[1], &[0.0]));
        let y1 = tape.conv2d(x, w1, b0, Padding::Same).unwrap();
        assert_eq!(tape.value(y1).data(), tape.value(x).data());
        // 3x3 delta kernel at center
        let mut delta = vec![0.0; 9];
        delta[4] = 1.0;
        let w3 = tape.leaf(tensor(&[1, 1, 3, 3], &delta));
        let y3 = tape.conv2d(x, w3, b0, Padding::Same).unwrap();
        assert_eq!(tape.value(y3).data(), tape.value(x).data());
    }

    #[test]
    fn conv_matches_six_loop_oracle() {
        let mut tape = Tape::new();
        let x = tape.leaf(pseudo(&[1, 2, 5, 5], 17));
        let w = tape.leaf(pseudo(&[3, 2, 3, 3], 18));
        let b = tape.leaf(tensor(&[3], &[0.1, -0.2, 0.3]));
        let y = tape.conv2d(x, w, b, Padding::Same).unwrap();
        let (xd, wd, bd) = (
            tape.value(x).data().to_vec(),
            tape.value(w).data().to_vec(),
            tape.value(b).data().to_vec(),
        );
        let yd = tape.value(y).data();
        for o in 0..3usize {
            for y0 in 0..5usize {
                for x0 in 0..5usize {
                    let mut acc = bd[o];
                    for c in 0..2usize {
                        for i in 0..3usize {
                            for j in 0..3usize {
                                let sy = y0 as isize + i as isize - 1;
                                let sx = x0 as isize + j as isize - 1;
                                if (0..5).contains(&sy) && (0..5).contains(&sx) {
                                    acc += xd[(c * 5 + sy as usize) * 5 + sx as usize]
                                        * wd[((o * 2 + c) * 3 + i) * 3 + j];
                                }
                            }
                        }
                    }
                    let got = yd[(o * 5 + y0) * 5 + x0];
                    assert!((got - acc).abs() <= 1e-6, "({o},{y0},{x0}): {got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn conv_valid_shrinks() {
        let mut tape = Tape::new();
        let x = tape.leaf(pseudo(&[1, 1, 4, 4], 9));
        let w = tape.leaf(pseudo(&[2, 1, 2, 2], 10));
        let b = tape.leaf(tensor(&[2], &[0.0, 0.0]));
        let y = tape.conv2d(x, w, b, Padding::Valid).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 3, 3]);
        assert!(matches!(
            tape.conv2d(x, w, b, Padding::Same),
            Err(TensorError::EvenSamePadding { .. })
        ));
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(&[3], &[3.0, -1.0, 0.0]));
        let y = tape.leaky_relu(x, 0.1).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -0.1, 0.0]);
    }

    #[test]
    fn pixel_shuffle_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(pseudo(&[2, 4, 3, 3], 7));
        let same = tape.pixel_shuffle(x, 1).unwrap();
        assert_eq!(tape.value(same).data(), tape.value(x).data());

        let x2 = tape.leaf(Tensor::from_fn(vec![1, 4, 2, 2], |i| i as f64));
        let y = tape.pixel_shuffle(x2, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 4, 4]);
        let xd = tape.value(x2).data().to_vec();
        let yd = tape.value(y).data();
        for h in 0..2 {
            for w in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let src = xd[((i * 2 + j) * 2 + h) * 2 + w];
                        let dst = yd[(2 * h + i) * 4 + (2 * w + j)];
                        assert_eq!(src, dst);
                    }
                }
            }
        }
    }

    #[test]
    fn pixel_shuffle_preserves_multiset() {
        let mut tape = Tape::new();
        let x = tape.leaf(pseudo(&[2, 8, 3, 4], 21));
        let y = tape.pixel_shuffle(x, 2).unwrap();
        let mut a: Vec<u64> = tape.value(x).data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = tape.value(y).data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn pixel_shuffle_divisibility_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(pseudo(&[1, 6, 2, 2], 2));
        assert!(matches!(tape.pixel_shuffle(x, 2), Err(TensorError::NotDivisible { .. })));
    }

    #[test]
    fn l1_loss_values() {
        let mut tape = Tape::new();
        let p = tape.leaf(pseudo(&[3, 3], 4));
        let same = tape.l1_loss(p, p).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);

        let a = tape.leaf(tensor(&[4], &[2.0, 3.0, 4.0, 5.0]));
        let b = tape.leaf(tensor(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let one = tape.l1_loss(a, b).unwrap();
        assert_eq!(tape.value(one).item(), 1.0);
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(pseudo(&[2, 3], 8));
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn disconnected_leaf_gets_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(pseudo(&[2, 2], 1));
        let unused = tape.leaf(pseudo(&[2, 2], 2));
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.dense(unused, 4), vec![0.0; 4]);
    }

    #[test]
    fn double_consumption_accumulates() {
        // sum(x + x) must produce the same leaf gradient as sum(2 * x).
        let mut t1 = Tape::new();
        let x1 = t1.leaf(pseudo(&[3, 2], 33));
        let both = t1.add(x1, x1).unwrap();
        let s1 = t1.sum(both).unwrap();
        let g1 = t1.backward(s1).unwrap();

        let mut t2 = Tape::new();
        let x2 = t2.leaf(pseudo(&[3, 2], 33));
        let scaled = t2.scale(x2, 2.0).unwrap();
        let s2 = t2.sum(scaled).unwrap();
        let g2 = t2.backward(s2).unwrap();

        assert_eq!(g1.get(x1).unwrap(), g2.get(x2).unwrap());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(pseudo(&[2, 2], 1));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn l1_gradient_entries_quantized() {
        let mut tape = Tape::new();
        let p = tape.leaf(pseudo(&[4, 4], 40));
        let t = tape.leaf(pseudo(&[4, 4], 41));
        let loss = tape.l1_loss(p, t).unwrap();
        let grads = tape.backward(loss).unwrap();
        let n = 16.0;
        for &g in grads.get(p).unwrap() {
            let ok = (g - 1.0 / n).abs() < 1e-12 || (g + 1.0 / n).abs() < 1e-12 || g == 0.0;
            assert!(ok, "unexpected l1 gradient entry {g}");
        }
    }

    #[test]
    fn permute_round_trip() {
        let mut tape = Tape::new();
        let x = tape.leaf(pseudo(&[2, 3, 4, 5], 50));
        let p = tape.permute(x, vec![2, 0, 3, 1]).unwrap();
        assert_eq!(tape.value(p).shape(), &[4, 2, 5, 3]);
        let back = tape.permute(p, vec![1, 3, 0, 2]).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(x).data());
    }

    #[test]
    fn non_finite_diagnostic_trips() {
        let mut tape = Tape::new();
        tape.set_finite_checks(true);
        let x = tape.leaf(tensor(&[2], &[1e308, 1e308]));
        let doubled = tape.add(x, x);
        assert!(matches!(doubled, Err(TensorError::NonFinite { op: "add" })));
    }
}
