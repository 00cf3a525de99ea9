//! Central finite-difference oracle for the engine's backward rules.
//!
//! Every check rebuilds the forward pass from scratch through a closure, so
//! the numeric side stays independent of the recorded tape it validates.
//! All checks run at 64-bit with step `h = 1e-4`.

use super::{Padding, Tape, Tensor, ValueId};

pub const FD_STEP: f64 = 1e-4;

/// Relative error with an absolute floor so near-zero gradients compare
/// absolutely instead of exploding the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub tolerance: f64,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<26} max rel err {:.3e} (tol {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.tolerance
        )
    }
}

/// Compares analytic gradients of `build`'s scalar loss against central
/// differences for every element of every input.
pub fn check_gradients(
    name: &str,
    inputs: &[Tensor<f64>],
    tolerance: f64,
    build: impl Fn(&mut Tape<f64>, &[ValueId]) -> ValueId,
) -> CheckResult {
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let ids: Vec<ValueId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &ids);
    let grads = tape.backward(loss).expect("loss is scalar by construction");

    let mut max_rel_err = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.dense(ids[i], input.numel());
        for e in 0..input.numel() {
            let mut perturbed: Vec<Tensor<f64>> = inputs.to_vec();
            let mut plus = input.data().to_vec();
            plus[e] += FD_STEP;
            perturbed[i] = Tensor::new(input.shape().to_vec(), plus).unwrap();
            let f_plus = eval(&perturbed);

            let mut minus = input.data().to_vec();
            minus[e] -= FD_STEP;
            perturbed[i] = Tensor::new(input.shape().to_vec(), minus).unwrap();
            let f_minus = eval(&perturbed);

            let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
            max_rel_err = max_rel_err.max(relative_error(analytic[e], numeric));
        }
    }
    CheckResult { name: name.to_string(), tolerance, max_rel_err }
}

/// Deterministic pseudo-random tensor for check fixtures.
pub fn fixture(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    Tensor::from_fn(shape.to_vec(), |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state % 2000) as f64 / 1000.0 - 1.0
    })
}

/// Like [`fixture`] but with magnitudes bounded away from zero, for ops with
/// kinks (leaky ReLU gate, L1 sign).
fn fixture_off_zero(shape: &[usize], seed: u64, min_abs: f64) -> Tensor<f64> {
    let base = fixture(shape, seed);
    Tensor::from_fn(shape.to_vec(), |i| {
        let v = base.data()[i];
        if v.abs() >= min_abs {
            v
        } else if v >= 0.0 {
            v + min_abs
        } else {
            v - min_abs
        }
    })
}

/// Weighted-sum readout: `sum(y * r)` with a fixed pseudo-random cotangent,
/// so backward rules are exercised with non-uniform output gradients.
fn readout(tape: &mut Tape<f64>, y: ValueId, seed: u64) -> ValueId {
    let shape = tape.value(y).shape().to_vec();
    let r = tape.constant(fixture(&shape, seed));
    let weighted = tape.mul(y, r).unwrap();
    tape.sum(weighted).unwrap()
}

/// The per-operation finite-difference suite. Smooth ops are held to 1e-6,
/// convolution to 1e-5, kinked ops to 1e-6 away from their kinks.
pub fn op_suite(seed: u64) -> Vec<CheckResult> {
    let mut results = Vec::new();

    results.push(check_gradients(
        "matmul",
        &[fixture(&[3, 4], seed), fixture(&[4, 2], seed + 1)],
        1e-6,
        |t, ids| {
            let y = t.matmul(ids[0], ids[1]).unwrap();
            readout(t, y, 100)
        },
    ));

    results.push(check_gradients(
        "matmul_batched",
        &[fixture(&[2, 3, 4], seed + 2), fixture(&[4, 3], seed + 3)],
        1e-6,
        |t, ids| {
            let y = t.matmul(ids[0], ids[1]).unwrap();
            readout(t, y, 101)
        },
    ));

    results.push(check_gradients(
        "bmm",
        &[fixture(&[2, 3, 4], seed + 4), fixture(&[2, 4, 5], seed + 5)],
        1e-6,
        |t, ids| {
            let y = t.bmm(ids[0], ids[1]).unwrap();
            readout(t, y, 102)
        },
    ));

    results.push(check_gradients(
        "bmm_nt",
        &[fixture(&[2, 3, 4], seed + 6), fixture(&[2, 5, 4], seed + 7)],
        1e-6,
        |t, ids| {
            let y = t.bmm_nt(ids[0], ids[1]).unwrap();
            readout(t, y, 103)
        },
    ));

    results.push(check_gradients(
        "softmax_last",
        &[fixture(&[3, 5], seed + 8)],
        1e-6,
        |t, ids| {
            let y = t.softmax_last(ids[0]).unwrap();
            readout(t, y, 104)
        },
    ));

    results.push(check_gradients(
        "layer_norm",
        &[
            fixture(&[4, 6], seed + 9),
            fixture(&[6], seed + 10),
            fixture(&[6], seed + 11),
        ],
        1e-6,
        |t, ids| {
            let y = t.layer_norm(ids[0], ids[1], ids[2], 1e-5).unwrap();
            readout(t, y, 105)
        },
    ));

    results.push(check_gradients(
        "conv2d_same",
        &[
            fixture(&[1, 2, 5, 5], seed + 12),
            fixture(&[3, 2, 3, 3], seed + 13),
            fixture(&[3], seed + 14),
        ],
        1e-5,
        |t, ids| {
            let y = t.conv2d(ids[0], ids[1], ids[2], Padding::Same).unwrap();
            readout(t, y, 106)
        },
    ));

    results.push(check_gradients(
        "conv2d_valid_2x2",
        &[
            fixture(&[2, 2, 4, 4], seed + 15),
            fixture(&[3, 2, 2, 2], seed + 16),
            fixture(&[3], seed + 17),
        ],
        1e-5,
        |t, ids| {
            let y = t.conv2d(ids[0], ids[1], ids[2], Padding::Valid).unwrap();
            readout(t, y, 107)
        },
    ));

    results.push(check_gradients(
        "conv2d_1x1",
        &[
            fixture(&[2, 3, 4, 4], seed + 18),
            fixture(&[2, 3, 1, 1], seed + 19),
            fixture(&[2], seed + 20),
        ],
        1e-5,
        |t, ids| {
            let y = t.conv2d(ids[0], ids[1], ids[2], Padding::Same).unwrap();
            readout(t, y, 108)
        },
    ));

    results.push(check_gradients(
        "leaky_relu",
        &[fixture_off_zero(&[4, 5], seed + 21, 0.05)],
        1e-6,
        |t, ids| {
            let y = t.leaky_relu(ids[0], 0.1).unwrap();
            readout(t, y, 109)
        },
    ));

    results.push(check_gradients(
        "pixel_shuffle",
        &[fixture(&[1, 8, 3, 3], seed + 22)],
        1e-6,
        |t, ids| {
            let y = t.pixel_shuffle(ids[0], 2).unwrap();
            readout(t, y, 110)
        },
    ));

    // Ties have measure zero but are excluded outright: the fixtures differ
    // by at least 0.05 elementwise, far beyond the FD step.
    let pred = fixture_off_zero(&[4, 4], seed + 23, 0.5);
    let target = fixture(&[4, 4], seed + 24);
    let target = Tensor::from_fn(vec![4, 4], |i| target.data()[i] * 0.3);
    results.push(check_gradients("l1_loss", &[pred, target], 1e-6, |t, ids| {
        t.l1_loss(ids[0], ids[1]).unwrap()
    }));

    results.push(check_gradients(
        "add_bias",
        &[fixture(&[3, 4], seed + 25), fixture(&[4], seed + 26)],
        1e-6,
        |t, ids| {
            let y = t.add_bias(ids[0], ids[1]).unwrap();
            readout(t, y, 111)
        },
    ));

    results.push(check_gradients(
        "reshape_permute",
        &[fixture(&[2, 3, 4], seed + 27)],
        1e-6,
        |t, ids| {
            let p = t.permute(ids[0], vec![2, 0, 1]).unwrap();
            let r = t.reshape(p, vec![4, 6]).unwrap();
            readout(t, r, 112)
        },
    ));

    results.push(check_gradients(
        "residual_reuse",
        &[fixture(&[3, 3], seed + 28), fixture(&[3, 3], seed + 29)],
        1e-6,
        |t, ids| {
            // the same tensor feeds two paths; gradients must accumulate
            let prod = t.matmul(ids[0], ids[1]).unwrap();
            let both = t.add(prod, ids[0]).unwrap();
            readout(t, both, 113)
        },
    ));

    results
}
