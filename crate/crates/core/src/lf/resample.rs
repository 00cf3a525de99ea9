//! Separable bicubic resampling with the benchmark `imresize` convention:
//! cubic kernel `a = -0.5`, kernel widened by `1/scale` when downscaling
//! (antialiasing), per-tap weight normalization, clamp-to-edge replication.

use super::{LfError, LightField};

/// A dense single-channel 2-D array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width, "plane data length mismatch");
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Cubic point sampling (no antialiasing) at a fractional position,
    /// clamp-to-edge outside the plane.
    pub fn sample_cubic(&self, y: f64, x: f64) -> f32 {
        let y0 = y.floor() as isize;
        let x0 = x.floor() as isize;
        let mut acc = 0.0f64;
        for i in -1..=2 {
            let wy = cubic_kernel(y - (y0 + i) as f64);
            if wy == 0.0 {
                continue;
            }
            let yy = (y0 + i).clamp(0, self.height as isize - 1) as usize;
            for j in -1..=2 {
                let wx = cubic_kernel(x - (x0 + j) as f64);
                if wx == 0.0 {
                    continue;
                }
                let xx = (x0 + j).clamp(0, self.width as isize - 1) as usize;
                acc += wy * wx * self.get(yy, xx) as f64;
            }
        }
        acc as f32
    }
}

/// Keys' cubic convolution kernel with `a = -0.5` (Catmull-Rom).
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// Per-output-pixel taps along one axis: first source index plus weights.
struct AxisTaps {
    starts: Vec<isize>,
    weights: Vec<Vec<f64>>,
}

fn axis_taps(out_len: usize, scale: f64) -> AxisTaps {
    // Downscaling widens the kernel by 1/scale; weights are renormalized so
    // each output pixel is a convex-ish combination summing to exactly 1.
    let kernel_scale = if scale < 1.0 { scale } else { 1.0 };
    let kernel_width = 4.0 / kernel_scale;
    let taps = kernel_width.ceil() as usize + 2;
    let mut starts = Vec::with_capacity(out_len);
    let mut weights = Vec::with_capacity(out_len);
    for x in 0..out_len {
        let u = (x as f64 + 0.5) / scale - 0.5;
        let left = (u - kernel_width / 2.0).floor() as isize;
        let mut w: Vec<f64> = (0..taps)
            .map(|k| cubic_kernel((u - (left + k as isize) as f64) * kernel_scale))
            .collect();
        let sum: f64 = w.iter().sum();
        for wk in &mut w {
            *wk /= sum;
        }
        starts.push(left);
        weights.push(w);
    }
    AxisTaps { starts, weights }
}

/// Resizes a plane to exact output dimensions with per-axis scales.
pub fn resize_plane(src: &Plane, out_h: usize, out_w: usize, scale_h: f64, scale_w: f64) -> Plane {
    let row_taps = axis_taps(out_w, scale_w);
    let col_taps = axis_taps(out_h, scale_h);

    // Horizontal pass.
    let mut tmp = vec![0.0f64; src.height * out_w];
    for y in 0..src.height {
        for x in 0..out_w {
            let start = row_taps.starts[x];
            let mut acc = 0.0f64;
            for (k, wk) in row_taps.weights[x].iter().enumerate() {
                let sx = (start + k as isize).clamp(0, src.width as isize - 1) as usize;
                acc += wk * src.get(y, sx) as f64;
            }
            tmp[y * out_w + x] = acc;
        }
    }

    // Vertical pass.
    let mut out = vec![0.0f32; out_h * out_w];
    for y in 0..out_h {
        let start = col_taps.starts[y];
        for x in 0..out_w {
            let mut acc = 0.0f64;
            for (k, wk) in col_taps.weights[y].iter().enumerate() {
                let sy = (start + k as isize).clamp(0, src.height as isize - 1) as usize;
                acc += wk * tmp[sy * out_w + x];
            }
            out[y * out_w + x] = acc as f32;
        }
    }
    Plane::new(out_h, out_w, out)
}

/// Bicubic resize by a positive scale factor; output extents `ceil(len * scale)`.
pub fn bicubic_resize(src: &Plane, scale: f64) -> Result<Plane, LfError> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(LfError::NonPositiveScale(scale));
    }
    let out_h = (src.height as f64 * scale).ceil() as usize;
    let out_w = (src.width as f64 * scale).ceil() as usize;
    Ok(resize_plane(src, out_h.max(1), out_w.max(1), scale, scale))
}

/// Resizes every view of a light field independently (per view, per channel).
pub fn resize_lf(lf: &LightField, scale: f64) -> Result<LightField, LfError> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(LfError::NonPositiveScale(scale));
    }
    let (us, vs, hs, ws) = lf.extents();
    let cs = lf.channels();
    let out_h = ((hs as f64 * scale).ceil() as usize).max(1);
    let out_w = ((ws as f64 * scale).ceil() as usize).max(1);
    let mut data = vec![0.0f32; us * vs * out_h * out_w * cs];
    for u in 0..us {
        for v in 0..vs {
            for c in 0..cs {
                let resized = resize_plane(&lf.view_plane(u, v, c), out_h, out_w, scale, scale);
                for h in 0..out_h {
                    for w in 0..out_w {
                        let dst = ((((u * vs + v) * out_h + h) * out_w + w) * cs) + c;
                        data[dst] = resized.get(h, w);
                    }
                }
            }
        }
    }
    LightField::new(us, vs, out_h, out_w, cs, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values_at_half_phases() {
        // Cubic a=-0.5 at offsets +-0.5 and +-1.5.
        assert_eq!(cubic_kernel(0.5), 0.5625);
        assert_eq!(cubic_kernel(-0.5), 0.5625);
        assert_eq!(cubic_kernel(1.5), -0.0625);
        assert_eq!(cubic_kernel(-1.5), -0.0625);
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
    }

    #[test]
    fn upscale_phase_half_weights() {
        // Output pixel 1 at scale 1.5 sits at source coordinate 0.5: the live
        // taps are the classic quadruple for the a=-0.5 kernel.
        let taps = axis_taps(12, 1.5);
        assert_eq!(taps.starts[1], -2);
        assert_eq!(taps.weights[1], vec![0.0, -0.0625, 0.5625, 0.5625, -0.0625, 0.0]);
        for w in &taps.weights {
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_plane_preserved_any_scale() {
        let src = Plane::from_fn(7, 9, |_, _| 0.37);
        for scale in [0.25, 0.5, 2.0, 4.0, 1.5, 0.75] {
            let out = bicubic_resize(&src, scale).unwrap();
            for &v in out.data() {
                assert!((v - 0.37).abs() < 1e-6, "scale {scale}: got {v}");
            }
        }
    }

    #[test]
    fn downscale_matches_naive_widened_kernel_oracle() {
        // Independent direct evaluation of the full 2-D widened-kernel sum at
        // every output site, with per-axis normalization and edge clamping.
        let src = Plane::from_fn(8, 8, |y, x| {
            (((y * 131 + x * 29 + 7) % 83) as f32) / 83.0
        });
        let scale = 0.5;
        let out = bicubic_resize(&src, scale).unwrap();
        assert_eq!((out.height(), out.width()), (4, 4));
        let kw = 4.0 / scale;
        let taps = kw.ceil() as isize + 2;
        for oy in 0..4usize {
            for ox in 0..4usize {
                let uy = (oy as f64 + 0.5) / scale - 0.5;
                let ux = (ox as f64 + 0.5) / scale - 0.5;
                let ly = (uy - kw / 2.0).floor() as isize;
                let lx = (ux - kw / 2.0).floor() as isize;
                let mut num = 0.0f64;
                let mut wy_sum = 0.0f64;
                let mut wx_sum = 0.0f64;
                for k in 0..taps {
                    wy_sum += cubic_kernel((uy - (ly + k) as f64) * scale);
                    wx_sum += cubic_kernel((ux - (lx + k) as f64) * scale);
                }
                for i in 0..taps {
                    let wy = cubic_kernel((uy - (ly + i) as f64) * scale) / wy_sum;
                    let sy = (ly + i).clamp(0, 7) as usize;
                    for j in 0..taps {
                        let wx = cubic_kernel((ux - (lx + j) as f64) * scale) / wx_sum;
                        let sx = (lx + j).clamp(0, 7) as usize;
                        num += wy * wx * src.get(sy, sx) as f64;
                    }
                }
                let got = out.get(oy, ox) as f64;
                assert!(
                    (got - num).abs() <= 1e-6,
                    "site ({oy},{ox}): impl {got} vs oracle {num}"
                );
            }
        }
    }

    #[test]
    fn resize_is_linear() {
        let x = Plane::from_fn(9, 9, |y, x| ((y * 13 + x * 7) % 31) as f32 / 31.0);
        let y = Plane::from_fn(9, 9, |r, c| ((r * 5 + c * 11) % 23) as f32 / 23.0);
        let (a, b) = (0.6f32, -1.3f32);
        let combo = Plane::from_fn(9, 9, |r, c| a * x.get(r, c) + b * y.get(r, c));
        for scale in [0.5, 2.0] {
            let lhs = bicubic_resize(&combo, scale).unwrap();
            let rx = bicubic_resize(&x, scale).unwrap();
            let ry = bicubic_resize(&y, scale).unwrap();
            for i in 0..lhs.data().len() {
                let rhs = a * rx.data()[i] + b * ry.data()[i];
                assert!((lhs.data()[i] - rhs).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn non_positive_scale_errors() {
        let src = Plane::from_fn(4, 4, |_, _| 0.0);
        assert!(matches!(bicubic_resize(&src, 0.0), Err(LfError::NonPositiveScale(_))));
        assert!(matches!(bicubic_resize(&src, -2.0), Err(LfError::NonPositiveScale(_))));
    }
}
