//! 4D light-field containers and the geometric operations on them.
//!
//! A light field is stored as a dense `(U, V, H, W, C)` array in row-major
//! order: `u` and `v` index the angular grid of sub-aperture images (SAIs),
//! `h` and `w` the spatial pixels of each view, `c` the color channels.

mod io;
mod resample;

pub use io::{load_lf, save_lf, save_views_png};
pub use resample::{bicubic_resize, cubic_kernel, resize_lf, resize_plane, Plane};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LfError {
    #[error("extents must all be >= 1, got ({u}, {v}, {h}, {w}, {c})")]
    BadExtents { u: usize, v: usize, h: usize, w: usize, c: usize },
    #[error("data length {got} does not match extents product {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("non-finite intensity at flat index {index}")]
    NonFinite { index: usize },
    #[error("EPI volume extents {got:?} inconsistent with source extents {expected:?}")]
    EpiShapeMismatch { expected: (usize, usize, usize, usize), got: (usize, usize, usize) },
    #[error("shear {s} leaves an empty valid region for extents ({h}, {w})")]
    EmptyValidRegion { s: i32, h: usize, w: usize },
    #[error("texture {th}x{tw} too small for {need_h}x{need_w} windows at disparity {d}")]
    TextureTooSmall { th: usize, tw: usize, need_h: usize, need_w: usize, d: f64 },
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("crop ({h0}, {w0}) + ({nh}, {nw}) exceeds spatial extents ({h}, {w})")]
    CropOutOfBounds { h0: usize, w0: usize, nh: usize, nw: usize, h: usize, w: usize },
    #[error("expected {expected} channels, got {got}")]
    WrongChannelCount { expected: usize, got: usize },
    #[error("90-degree rotation requires a square angular grid, got {u}x{v}")]
    RotationNeedsSquareAngular { u: usize, v: usize },
    #[error("missing view file {path}")]
    MissingView { path: std::path::PathBuf },
    #[error("view {path}: dimensions {got:?} differ from first view {expected:?}")]
    ViewDimensionMismatch { path: std::path::PathBuf, expected: (usize, usize, usize), got: (usize, usize, usize) },
    #[error("{path}: bad magic, not a LF4D file")]
    BadMagic { path: std::path::PathBuf },
    #[error("{path}: unsupported LF4D version {got}")]
    BadVersion { path: std::path::PathBuf, got: u16 },
    #[error("{path}: truncated payload, expected {expected} bytes after header, got {got}")]
    Truncated { path: std::path::PathBuf, expected: usize, got: usize },
    #[error("{path}: {msg}")]
    MetaParse { path: std::path::PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: std::path::PathBuf, source: image::ImageError },
}

/// Which spatial-angular pairing an EPI volume groups by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpiOrientation {
    /// Groups of constant `(u, h)`; tokens run over `(v, w)`.
    Horizontal,
    /// Groups of constant `(v, w)`; tokens run over `(u, h)`.
    Vertical,
}

/// Dense 4D light field `(U, V, H, W, C)`, intensities nominally in `[0, 1]`.
///
/// Values are clamped to `[0, 1]` on ingestion from image files, never during
/// math: operations such as super-resolution may produce out-of-range values
/// and the container keeps them as long as they are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LightField {
    u_views: usize,
    v_views: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl LightField {
    pub fn new(
        u_views: usize,
        v_views: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, LfError> {
        if u_views == 0 || v_views == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(LfError::BadExtents { u: u_views, v: v_views, h: height, w: width, c: channels });
        }
        let expected = u_views * v_views * height * width * channels;
        if data.len() != expected {
            return Err(LfError::DataLength { expected, got: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(LfError::NonFinite { index });
        }
        Ok(Self { u_views, v_views, height, width, channels, data })
    }

    /// Builds a light field by evaluating `f(u, v, h, w, c)` at every site.
    pub fn from_fn(
        u_views: usize,
        v_views: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize) -> f32,
    ) -> Result<Self, LfError> {
        let mut data = Vec::with_capacity(u_views * v_views * height * width * channels);
        for u in 0..u_views {
            for v in 0..v_views {
                for h in 0..height {
                    for w in 0..width {
                        for c in 0..channels {
                            data.push(f(u, v, h, w, c));
                        }
                    }
                }
            }
        }
        Self::new(u_views, v_views, height, width, channels, data)
    }

    pub fn u_views(&self) -> usize {
        self.u_views
    }

    pub fn v_views(&self) -> usize {
        self.v_views
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Angular and spatial extents as `(U, V, H, W)`.
    pub fn extents(&self) -> (usize, usize, usize, usize) {
        (self.u_views, self.v_views, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, h: usize, w: usize, c: usize) -> usize {
        ((((u * self.v_views + v) * self.height + h) * self.width + w) * self.channels) + c
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, h: usize, w: usize, c: usize) -> f32 {
        self.data[self.index(u, v, h, w, c)]
    }

    /// Angular center `((U-1)/2, (V-1)/2)`; half-integer for even extents.
    pub fn angular_center(&self) -> (f64, f64) {
        ((self.u_views as f64 - 1.0) / 2.0, (self.v_views as f64 - 1.0) / 2.0)
    }

    /// One channel plane of one view as a `Plane`.
    pub fn view_plane(&self, u: usize, v: usize, c: usize) -> Plane {
        let mut data = Vec::with_capacity(self.height * self.width);
        for h in 0..self.height {
            for w in 0..self.width {
                data.push(self.get(u, v, h, w, c));
            }
        }
        Plane::new(self.height, self.width, data)
    }

    /// Central crop helper used by shearing and the sheared-evaluation harness.
    pub fn crop_spatial(&self, h0: usize, w0: usize, nh: usize, nw: usize) -> Result<LightField, LfError> {
        if h0 + nh > self.height || w0 + nw > self.width || nh == 0 || nw == 0 {
            return Err(LfError::CropOutOfBounds { h0, w0, nh, nw, h: self.height, w: self.width });
        }
        LightField::from_fn(self.u_views, self.v_views, nh, nw, self.channels, |u, v, h, w, c| {
            self.get(u, v, h0 + h, w0 + w, c)
        })
    }

    /// Swaps `u <-> v` and `h <-> w` simultaneously (the LF transpose).
    pub fn transpose_axes(&self) -> LightField {
        LightField::from_fn(self.v_views, self.u_views, self.width, self.height, self.channels, |u, v, h, w, c| {
            self.get(v, u, w, h, c)
        })
        .expect("transpose preserves validity")
    }
}

/// A light field re-grouped along one epipolar direction.
///
/// Shape is `(G, A, S, C)`: horizontal volumes are `(U*H, V, W, C)` with
/// group `g = u*H + h`, vertical volumes are `(V*W, U, H, C)` with group
/// `g = v*W + w`. The token axis of the Transformer is `(A, S)` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct EpiVolume {
    orientation: EpiOrientation,
    groups: usize,
    angular: usize,
    seq: usize,
    channels: usize,
    source_extents: (usize, usize, usize, usize),
    data: Vec<f32>,
}

impl EpiVolume {
    pub fn orientation(&self) -> EpiOrientation {
        self.orientation
    }

    /// Volume shape as `(G, A, S, C)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.groups, self.angular, self.seq, self.channels)
    }

    pub fn source_extents(&self) -> (usize, usize, usize, usize) {
        self.source_extents
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, g: usize, a: usize, s: usize, c: usize) -> usize {
        (((g * self.angular + a) * self.seq + s) * self.channels) + c
    }

    #[inline]
    pub fn get(&self, g: usize, a: usize, s: usize, c: usize) -> f32 {
        self.data[self.index(g, a, s, c)]
    }
}

/// Re-groups a light field into EPI form. A pure permutation of elements.
pub fn to_epi(lf: &LightField, orientation: EpiOrientation) -> EpiVolume {
    let (us, vs, hs, ws) = lf.extents();
    let cs = lf.channels;
    let (groups, angular, seq) = match orientation {
        EpiOrientation::Horizontal => (us * hs, vs, ws),
        EpiOrientation::Vertical => (vs * ws, us, hs),
    };
    let mut data = vec![0.0f32; groups * angular * seq * cs];
    match orientation {
        EpiOrientation::Horizontal => {
            // g = u*H + h, token (a, s) = (v, w)
            for u in 0..us {
                for h in 0..hs {
                    let g = u * hs + h;
                    for v in 0..vs {
                        for w in 0..ws {
                            let dst = ((g * vs + v) * ws + w) * cs;
                            let src = lf.index(u, v, h, w, 0);
                            data[dst..dst + cs].copy_from_slice(&lf.data[src..src + cs]);
                        }
                    }
                }
            }
        }
        EpiOrientation::Vertical => {
            // g = v*W + w, token (a, s) = (u, h)
            for v in 0..vs {
                for w in 0..ws {
                    let g = v * ws + w;
                    for u in 0..us {
                        for h in 0..hs {
                            let dst = ((g * us + u) * hs + h) * cs;
                            let src = lf.index(u, v, h, w, 0);
                            data[dst..dst + cs].copy_from_slice(&lf.data[src..src + cs]);
                        }
                    }
                }
            }
        }
    }
    EpiVolume {
        orientation,
        groups,
        angular,
        seq,
        channels: cs,
        source_extents: (us, vs, hs, ws),
        data,
    }
}

/// Exact inverse of [`to_epi`].
pub fn from_epi(vol: &EpiVolume) -> Result<LightField, LfError> {
    let (us, vs, hs, ws) = vol.source_extents;
    let cs = vol.channels;
    let expected = match vol.orientation {
        EpiOrientation::Horizontal => (us * hs, vs, ws),
        EpiOrientation::Vertical => (vs * ws, us, hs),
    };
    if expected != (vol.groups, vol.angular, vol.seq) {
        return Err(LfError::EpiShapeMismatch {
            expected: vol.source_extents,
            got: (vol.groups, vol.angular, vol.seq),
        });
    }
    let mut data = vec![0.0f32; us * vs * hs * ws * cs];
    let lf_index = |u: usize, v: usize, h: usize, w: usize| (((u * vs + v) * hs + h) * ws + w) * cs;
    match vol.orientation {
        EpiOrientation::Horizontal => {
            for u in 0..us {
                for h in 0..hs {
                    let g = u * hs + h;
                    for v in 0..vs {
                        for w in 0..ws {
                            let src = ((g * vs + v) * ws + w) * cs;
                            let dst = lf_index(u, v, h, w);
                            data[dst..dst + cs].copy_from_slice(&vol.data[src..src + cs]);
                        }
                    }
                }
            }
        }
        EpiOrientation::Vertical => {
            for v in 0..vs {
                for w in 0..ws {
                    let g = v * ws + w;
                    for u in 0..us {
                        for h in 0..hs {
                            let src = ((g * us + u) * hs + h) * cs;
                            let dst = lf_index(u, v, h, w);
                            data[dst..dst + cs].copy_from_slice(&vol.data[src..src + cs]);
                        }
                    }
                }
            }
        }
    }
    LightField::new(us, vs, hs, ws, cs, data)
}

/// Integer shear value applied around the angular center.
///
/// Shearing adds a constant `s` to the disparity of every scene point:
/// view `(u, v)` is shifted by `(s*(u - u_c), s*(v - v_c))` pixels and the
/// result is cropped to the central region that is valid for every view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShearSpec {
    pub s: i32,
}

impl ShearSpec {
    pub fn new(s: i32) -> Self {
        Self { s }
    }

    /// Spatial margins `(margin_h, margin_w)` consumed by the valid-region crop.
    pub fn margins(&self, u_views: usize, v_views: usize) -> (usize, usize) {
        let s = self.s.unsigned_abs() as f64;
        let mh = (s * (u_views as f64 - 1.0) / 2.0).ceil() as usize;
        let mw = (s * (v_views as f64 - 1.0) / 2.0).ceil() as usize;
        (mh, mw)
    }
}

/// Shears a light field by `spec.s` pixels of disparity per unit angular offset.
///
/// `out(u, v, h, w) = lf(u, v, h + s*(u - u_c), w + s*(v - v_c))`, restricted
/// to the central spatial region sampled by every view. Integer shifts are
/// copied bit-exactly; half-integer shifts (even angular extents with odd `s`)
/// fall back to cubic interpolation.
pub fn shear(lf: &LightField, spec: &ShearSpec) -> Result<LightField, LfError> {
    let (us, vs, hs, ws) = lf.extents();
    let (mh, mw) = spec.margins(us, vs);
    if 2 * mh >= hs || 2 * mw >= ws {
        return Err(LfError::EmptyValidRegion { s: spec.s, h: hs, w: ws });
    }
    let (uc, vc) = lf.angular_center();
    let out_h = hs - 2 * mh;
    let out_w = ws - 2 * mw;
    let cs = lf.channels;
    let mut data = vec![0.0f32; us * vs * out_h * out_w * cs];
    let mut dst = 0usize;
    for u in 0..us {
        let dh = spec.s as f64 * (u as f64 - uc);
        for v in 0..vs {
            let dw = spec.s as f64 * (v as f64 - vc);
            let integral = dh.fract() == 0.0 && dw.fract() == 0.0;
            for h in 0..out_h {
                for w in 0..out_w {
                    let sy = h as f64 + mh as f64 + dh;
                    let sx = w as f64 + mw as f64 + dw;
                    for c in 0..cs {
                        let val = if integral {
                            lf.get(u, v, sy as usize, sx as usize, c)
                        } else {
                            sample_view_cubic(lf, u, v, c, sy, sx)
                        };
                        data[dst] = val;
                        dst += 1;
                    }
                }
            }
        }
    }
    LightField::new(us, vs, out_h, out_w, cs, data)
}

/// Cubic interpolation of one view at a fractional position, clamp-to-edge.
fn sample_view_cubic(lf: &LightField, u: usize, v: usize, c: usize, y: f64, x: f64) -> f32 {
    let hs = lf.height() as isize;
    let ws = lf.width() as isize;
    let y0 = y.floor() as isize;
    let x0 = x.floor() as isize;
    let mut acc = 0.0f64;
    for i in -1..=2 {
        let wy = cubic_kernel(y - (y0 + i) as f64);
        if wy == 0.0 {
            continue;
        }
        let yy = (y0 + i).clamp(0, hs - 1) as usize;
        for j in -1..=2 {
            let wx = cubic_kernel(x - (x0 + j) as f64);
            if wx == 0.0 {
                continue;
            }
            let xx = (x0 + j).clamp(0, ws - 1) as usize;
            acc += wy * wx * lf.get(u, v, yy, xx, c) as f64;
        }
    }
    acc as f32
}

/// Synthesizes a constant-disparity light field from a flat texture.
///
/// `lf(u, v, h, w) = texture(h0 + h + d*(u - u_c), w0 + w + d*(v - v_c))`
/// with the window centered in the texture (`h0 = (th - H) / 2`). Every EPI
/// of the result is a set of lines whose slope is determined by `d`. Integer
/// effective shifts are copied exactly; fractional ones use cubic sampling.
pub fn synth_lf(
    texture: &Plane,
    disparity: f64,
    extents: (usize, usize, usize, usize),
) -> Result<LightField, LfError> {
    let (us, vs, hs, ws) = extents;
    if us == 0 || vs == 0 || hs == 0 || ws == 0 {
        return Err(LfError::BadExtents { u: us, v: vs, h: hs, w: ws, c: 1 });
    }
    let (th, tw) = (texture.height(), texture.width());
    let uc = (us as f64 - 1.0) / 2.0;
    let vc = (vs as f64 - 1.0) / 2.0;
    let max_dh = (disparity * uc).abs();
    let max_dw = (disparity * vc).abs();
    // Fractional sampling needs a 2-pixel cubic support margin on each side.
    let fractional = (0..us).any(|u| (disparity * (u as f64 - uc)).fract() != 0.0)
        || (0..vs).any(|v| (disparity * (v as f64 - vc)).fract() != 0.0);
    let guard = if fractional { 2.0 } else { 0.0 };
    let need_h = hs + 2 * (max_dh + guard).ceil() as usize;
    let need_w = ws + 2 * (max_dw + guard).ceil() as usize;
    if need_h > th || need_w > tw {
        return Err(LfError::TextureTooSmall { th, tw, need_h, need_w, d: disparity });
    }
    let h0 = (th - hs) / 2;
    let w0 = (tw - ws) / 2;
    LightField::from_fn(us, vs, hs, ws, 1, |u, v, h, w, _| {
        let y = h0 as f64 + h as f64 + disparity * (u as f64 - uc);
        let x = w0 as f64 + w as f64 + disparity * (v as f64 - vc);
        if y.fract() == 0.0 && x.fract() == 0.0 {
            texture.get(y as usize, x as usize)
        } else {
            texture.sample_cubic(y, x)
        }
    })
}

/// ITU-R BT.601 luma: `Y = 0.299 R + 0.587 G + 0.114 B`, clamped to `[0, 1]`.
pub fn rgb_to_y(lf: &LightField) -> Result<LightField, LfError> {
    if lf.channels != 3 {
        return Err(LfError::WrongChannelCount { expected: 3, got: lf.channels });
    }
    LightField::from_fn(lf.u_views, lf.v_views, lf.height, lf.width, 1, |u, v, h, w, _| {
        let r = lf.get(u, v, h, w, 0);
        let g = lf.get(u, v, h, w, 1);
        let b = lf.get(u, v, h, w, 2);
        (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0)
    })
}

/// Converts to the single channel metrics are computed on: BT.601 luma for
/// RGB fields, the field itself when already single-channel.
pub fn to_luma(lf: &LightField) -> Result<LightField, LfError> {
    match lf.channels {
        1 => Ok(lf.clone()),
        3 => rgb_to_y(lf),
        c => Err(LfError::WrongChannelCount { expected: 3, got: c }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_lf(us: usize, vs: usize, hs: usize, ws: usize, cs: usize) -> LightField {
        let mut k = 0u32;
        LightField::from_fn(us, vs, hs, ws, cs, |_, _, _, _, _| {
            k += 1;
            (k % 251) as f32 / 251.0
        })
        .unwrap()
    }

    fn checker_texture(th: usize, tw: usize) -> Plane {
        let mut data = Vec::with_capacity(th * tw);
        for y in 0..th {
            for x in 0..tw {
                let v = ((y * 31 + x * 17 + (y * x) % 7) % 97) as f32 / 97.0;
                data.push(v);
            }
        }
        Plane::new(th, tw, data)
    }

    #[test]
    fn new_rejects_wrong_length() {
        let err = LightField::new(2, 2, 2, 2, 1, vec![0.0; 15]).unwrap_err();
        assert!(matches!(err, LfError::DataLength { expected: 16, got: 15 }));
    }

    #[test]
    fn new_rejects_non_finite() {
        let mut data = vec![0.0f32; 16];
        data[7] = f32::NAN;
        let err = LightField::new(2, 2, 2, 2, 1, data).unwrap_err();
        assert!(matches!(err, LfError::NonFinite { index: 7 }));
    }

    #[test]
    fn epi_shape_vertical() {
        let lf = ramp_lf(2, 3, 4, 5, 1);
        let vol = to_epi(&lf, EpiOrientation::Vertical);
        assert_eq!(vol.shape(), (15, 2, 4, 1));
    }

    #[test]
    fn epi_round_trip_is_identity() {
        let lf = ramp_lf(2, 3, 4, 5, 3);
        for orientation in [EpiOrientation::Horizontal, EpiOrientation::Vertical] {
            let back = from_epi(&to_epi(&lf, orientation)).unwrap();
            assert_eq!(back, lf);
        }
    }

    #[test]
    fn epi_is_permutation() {
        let lf = ramp_lf(3, 2, 5, 4, 1);
        let vol = to_epi(&lf, EpiOrientation::Horizontal);
        let mut a: Vec<u32> = lf.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = vol.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn from_epi_rejects_inconsistent_extents() {
        let lf = ramp_lf(2, 3, 4, 5, 1);
        let mut vol = to_epi(&lf, EpiOrientation::Vertical);
        vol.source_extents = (2, 3, 4, 4);
        assert!(matches!(from_epi(&vol), Err(LfError::EpiShapeMismatch { .. })));
    }

    #[test]
    fn vertical_epi_rows_shift_with_synthetic_disparity() {
        // With per-view shift d=1, the vertical-EPI row at angular index u
        // equals the row at u+1 translated by 1 pixel in h.
        let tex = checker_texture(40, 40);
        let lf = synth_lf(&tex, 1.0, (3, 3, 8, 8)).unwrap();
        let vol = to_epi(&lf, EpiOrientation::Vertical);
        let (groups, angular, seq, _) = vol.shape();
        for g in 0..groups {
            for u in 0..angular - 1 {
                for h in 0..seq - 1 {
                    // lf(u, ., h + 1, .) == lf(u + 1, ., h, .) since the
                    // window slides one pixel per angular step.
                    assert_eq!(vol.get(g, u, h + 1, 0), vol.get(g, u + 1, h, 0));
                }
            }
        }
    }

    #[test]
    fn shear_zero_is_identity() {
        let lf = ramp_lf(3, 3, 6, 6, 1);
        let out = shear(&lf, &ShearSpec::new(0)).unwrap();
        assert_eq!(out, lf);
    }

    #[test]
    fn shear_matches_resynthesized_disparity() {
        let tex = checker_texture(64, 64);
        for d in -1..=1 {
            for s in -2..=2 {
                let lf = synth_lf(&tex, d as f64, (3, 3, 16, 16)).unwrap();
                let sheared = shear(&lf, &ShearSpec::new(s)).unwrap();
                let spec = ShearSpec::new(s);
                let (mh, mw) = spec.margins(3, 3);
                let direct = synth_lf(&tex, (d + s) as f64, (3, 3, 16, 16))
                    .unwrap()
                    .crop_spatial(mh, mw, 16 - 2 * mh, 16 - 2 * mw)
                    .unwrap();
                assert_eq!(sheared, direct, "d={d} s={s}");
            }
        }
    }

    #[test]
    fn shear_inverse_restores_interior() {
        let lf = ramp_lf(3, 3, 20, 20, 1);
        let fwd = shear(&lf, &ShearSpec::new(2)).unwrap();
        let back = shear(&fwd, &ShearSpec::new(-2)).unwrap();
        let spec = ShearSpec::new(2);
        let (mh, mw) = spec.margins(3, 3);
        let interior = lf
            .crop_spatial(2 * mh, 2 * mw, 20 - 4 * mh, 20 - 4 * mw)
            .unwrap();
        assert_eq!(back, interior);
    }

    #[test]
    fn shear_empty_region_errors() {
        let lf = ramp_lf(3, 3, 6, 6, 1);
        assert!(matches!(
            shear(&lf, &ShearSpec::new(4)),
            Err(LfError::EmptyValidRegion { .. })
        ));
    }

    #[test]
    fn synth_zero_disparity_views_identical() {
        let tex = checker_texture(32, 32);
        let lf = synth_lf(&tex, 0.0, (3, 3, 8, 8)).unwrap();
        let center = lf.view_plane(1, 1, 0);
        for u in 0..3 {
            for v in 0..3 {
                assert_eq!(lf.view_plane(u, v, 0), center);
            }
        }
    }

    #[test]
    fn synth_unit_disparity_shifts_one_pixel() {
        let tex = checker_texture(40, 40);
        let lf = synth_lf(&tex, 1.0, (3, 3, 10, 10)).unwrap();
        // view (uc, vc+1) equals view (uc, vc) translated by exactly 1 pixel in w
        for h in 0..10 {
            for w in 0..9 {
                assert_eq!(lf.get(1, 2, h, w, 0), lf.get(1, 1, h, w + 1, 0));
            }
        }
    }

    #[test]
    fn synth_central_view_independent_of_disparity() {
        let tex = checker_texture(48, 48);
        let a = synth_lf(&tex, 0.0, (3, 3, 8, 8)).unwrap();
        let b = synth_lf(&tex, 2.0, (3, 3, 8, 8)).unwrap();
        assert_eq!(a.view_plane(1, 1, 0), b.view_plane(1, 1, 0));
    }

    #[test]
    fn synth_texture_too_small() {
        let tex = checker_texture(10, 10);
        assert!(matches!(
            synth_lf(&tex, 3.0, (3, 3, 8, 8)),
            Err(LfError::TextureTooSmall { .. })
        ));
    }

    #[test]
    fn luma_coefficients() {
        let white = LightField::from_fn(1, 1, 1, 1, 3, |_, _, _, _, _| 1.0).unwrap();
        assert_eq!(rgb_to_y(&white).unwrap().data()[0], 1.0);
        let black = LightField::from_fn(1, 1, 1, 1, 3, |_, _, _, _, _| 0.0).unwrap();
        assert_eq!(rgb_to_y(&black).unwrap().data()[0], 0.0);
        let red = LightField::from_fn(1, 1, 1, 1, 3, |_, _, _, _, c| if c == 0 { 1.0 } else { 0.0 }).unwrap();
        assert!((rgb_to_y(&red).unwrap().data()[0] - 0.299).abs() < 1e-7);
    }

    #[test]
    fn luma_rejects_wrong_channels() {
        let lf = ramp_lf(1, 1, 2, 2, 1);
        assert!(matches!(rgb_to_y(&lf), Err(LfError::WrongChannelCount { .. })));
    }

    #[test]
    fn transpose_is_involution() {
        let lf = ramp_lf(2, 3, 4, 5, 2);
        assert_eq!(lf.transpose_axes().transpose_axes(), lf);
    }
}
