//! PSNR/SSIM evaluation with two-level aggregation, plus the disparity
//! robustness studies: metrics are computed per sub-aperture image, averaged
//! into a per-scene score, and per-scene scores are averaged into the
//! dataset score.

mod attention;
mod sweep;

pub use attention::{attn_dump, save_heatmap_png, AttentionDump};
pub use sweep::{shear_sweep, write_sweep_csv, SweepRow};

use std::path::Path;

use thiserror::Error;

use crate::lf::{resize_lf, to_luma, LfError, LightField, Plane};
use crate::net::{epit_forward, EpitConfig, EpitWeights, NetError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric inputs differ in shape: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("image {h}x{w} smaller than the {win}x{win} SSIM window")]
    WindowTooLarge { h: usize, w: usize, win: usize },
    #[error("scene {h}x{w} too small to evaluate with shave {shave} at scale {alpha}")]
    SceneTooSmall { h: usize, w: usize, shave: usize, alpha: usize },
    #[error("attention query group {group} out of range {groups}")]
    GroupOutOfRange { group: usize, groups: usize },
    #[error(transparent)]
    Lf(#[from] LfError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: std::path::PathBuf, source: image::ImageError },
}

/// PSNR values above this are written as 100 dB in CSV output.
pub const PSNR_CSV_CAP: f64 = 100.0;

/// `10 log10(peak^2 / MSE)`; +infinity when the images are identical.
pub fn psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::ShapeMismatch { lhs: vec![a.len()], rhs: vec![b.len()] });
    }
    let mut sum = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        sum += d * d;
    }
    let mse = sum / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// dynamic range 1, averaged over window positions fully inside the image.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64, EvalError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(EvalError::ShapeMismatch {
            lhs: vec![a.height(), a.width()],
            rhs: vec![b.height(), b.width()],
        });
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(EvalError::WindowTooLarge { h, w, win: SSIM_WINDOW });
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let mut mu_a = 0.0f64;
            let mut mu_b = 0.0f64;
            let mut aa = 0.0f64;
            let mut bb = 0.0f64;
            let mut ab = 0.0f64;
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let wt = window[wy * SSIM_WINDOW + wx];
                    let va = a.get(y0 + wy, x0 + wx) as f64;
                    let vb = b.get(y0 + wy, x0 + wx) as f64;
                    mu_a += wt * va;
                    mu_b += wt * vb;
                    aa += wt * va * va;
                    bb += wt * vb * vb;
                    ab += wt * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let score = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += score;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Anything that maps an LR light field to an SR one.
pub trait SrModel: Sync {
    fn super_resolve(&self, lr: &LightField) -> Result<LightField, EvalError>;
    fn alpha(&self) -> usize;
    fn id(&self) -> String;
}

pub struct EpitModel {
    pub weights: EpitWeights<Tensor<f32>>,
    pub config: EpitConfig,
}

impl SrModel for EpitModel {
    fn super_resolve(&self, lr: &LightField) -> Result<LightField, EvalError> {
        Ok(epit_forward(lr, &self.weights, &self.config)?)
    }

    fn alpha(&self) -> usize {
        self.config.alpha
    }

    fn id(&self) -> String {
        format!("epit-{}x", self.config.alpha)
    }
}

/// Bicubic upsampling as the identity baseline model.
pub struct BicubicModel {
    pub alpha: usize,
}

impl SrModel for BicubicModel {
    fn super_resolve(&self, lr: &LightField) -> Result<LightField, EvalError> {
        Ok(resize_lf(lr, self.alpha as f64)?)
    }

    fn alpha(&self) -> usize {
        self.alpha
    }

    fn id(&self) -> String {
        format!("bicubic-{}x", self.alpha)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Border pixels excluded from metrics on each side.
    pub shave: usize,
    /// Compute metrics on RGB channels instead of BT.601 luma.
    pub rgb_metrics: bool,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { shave: 0, rgb_metrics: false, threads: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewMetric {
    pub u: usize,
    pub v: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneReport {
    pub per_view: Vec<ViewMetric>,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub scenes: Vec<(String, SceneReport)>,
    pub psnr: f64,
    pub ssim: f64,
    pub model_id: String,
    pub alpha: usize,
}

/// Crops spatial extents down to multiples of `alpha` so the LR/SR round
/// trip reproduces the ground-truth extents exactly.
pub fn modcrop(lf: &LightField, alpha: usize) -> Result<LightField, EvalError> {
    let (_, _, h, w) = lf.extents();
    let nh = (h / alpha) * alpha;
    let nw = (w / alpha) * alpha;
    if nh == 0 || nw == 0 {
        return Err(EvalError::SceneTooSmall { h, w, shave: 0, alpha });
    }
    if (nh, nw) == (h, w) {
        return Ok(lf.clone());
    }
    Ok(lf.crop_spatial(0, 0, nh, nw)?)
}

/// Evaluates one scene: generate LR by bicubic `1/alpha`, super-resolve,
/// and compare per view against the ground truth on the metric channel.
pub fn evaluate_scene(
    model: &dyn SrModel,
    hr: &LightField,
    opts: &EvalOptions,
) -> Result<SceneReport, EvalError> {
    let alpha = model.alpha();
    let hr = modcrop(hr, alpha)?;
    let lr = resize_lf(&hr, 1.0 / alpha as f64)?;
    let sr = model.super_resolve(&lr)?;
    metric_pair(&sr, &hr, opts)
}

/// Metrics between an SR result and its ground truth.
pub fn metric_pair(sr: &LightField, hr: &LightField, opts: &EvalOptions) -> Result<SceneReport, EvalError> {
    if sr.extents() != hr.extents() {
        let (a, b, c, d) = sr.extents();
        let (e, f, g, h) = hr.extents();
        return Err(EvalError::ShapeMismatch { lhs: vec![a, b, c, d], rhs: vec![e, f, g, h] });
    }
    let (sr_m, hr_m) = if opts.rgb_metrics {
        (sr.clone(), hr.clone())
    } else {
        (to_luma(sr)?, to_luma(hr)?)
    };
    let (us, vs, h, w) = hr_m.extents();
    if h <= 2 * opts.shave || w <= 2 * opts.shave {
        return Err(EvalError::SceneTooSmall { h, w, shave: opts.shave, alpha: 1 });
    }
    let mut per_view = Vec::with_capacity(us * vs);
    for u in 0..us {
        for v in 0..vs {
            let mut psnr_sum = 0.0;
            let mut ssim_sum = 0.0;
            for c in 0..hr_m.channels() {
                let a = shaved_plane(&sr_m, u, v, c, opts.shave);
                let b = shaved_plane(&hr_m, u, v, c, opts.shave);
                psnr_sum += psnr(a.data(), b.data(), 1.0)?;
                ssim_sum += ssim(&a, &b)?;
            }
            let channels = hr_m.channels() as f64;
            per_view.push(ViewMetric {
                u,
                v,
                psnr: psnr_sum / channels,
                ssim: ssim_sum / channels,
            });
        }
    }
    let n = per_view.len() as f64;
    let psnr_mean = per_view.iter().map(|m| m.psnr).sum::<f64>() / n;
    let ssim_mean = per_view.iter().map(|m| m.ssim).sum::<f64>() / n;
    Ok(SceneReport { per_view, psnr: psnr_mean, ssim: ssim_mean })
}

fn shaved_plane(lf: &LightField, u: usize, v: usize, c: usize, shave: usize) -> Plane {
    let full = lf.view_plane(u, v, c);
    if shave == 0 {
        return full;
    }
    let h = full.height() - 2 * shave;
    let w = full.width() - 2 * shave;
    Plane::from_fn(h, w, |y, x| full.get(y + shave, x + shave))
}

/// Evaluates every scene (optionally on a worker pool; scene order in the
/// report is the input order regardless of threading) and aggregates with
/// the two-level mean.
pub fn evaluate_dataset(
    model: &dyn SrModel,
    scenes: &[(String, LightField)],
    opts: &EvalOptions,
) -> Result<MetricReport, EvalError> {
    let reports = parallel_map(scenes, opts.threads, &|(_, hr)| evaluate_scene(model, hr, opts));
    let mut out = Vec::with_capacity(scenes.len());
    for ((name, _), report) in scenes.iter().zip(reports) {
        out.push((name.clone(), report?));
    }
    let (psnr, ssim) = aggregate(&out);
    Ok(MetricReport { scenes: out, psnr, ssim, model_id: model.id(), alpha: model.alpha() })
}

/// Dataset score: arithmetic mean of per-scene scores.
pub fn aggregate(scenes: &[(String, SceneReport)]) -> (f64, f64) {
    let n = scenes.len() as f64;
    let psnr = scenes.iter().map(|(_, s)| s.psnr).sum::<f64>() / n;
    let ssim = scenes.iter().map(|(_, s)| s.ssim).sum::<f64>() / n;
    (psnr, ssim)
}

/// Index-stable parallel map on a bounded pool of scoped threads.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: &(impl Fn(&T) -> R + Sync),
) -> Vec<R> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let mut results: Vec<Option<R>> = Vec::with_capacity(items.len());
    results.resize_with(items.len(), || None);
    std::thread::scope(|scope| {
        for (item_chunk, result_chunk) in items.chunks(chunk).zip(results.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (item, slot) in item_chunk.iter().zip(result_chunk.iter_mut()) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Writes `scene,u,v,psnr,ssim` rows, PSNR capped at 100 dB.
pub fn write_metrics_csv(path: &Path, report: &MetricReport, config_hash: &str) -> Result<(), EvalError> {
    let mut text = format!("# config={config_hash}\nscene,u,v,psnr,ssim\n");
    for (name, scene) in &report.scenes {
        for m in &scene.per_view {
            text.push_str(&format!(
                "{},{},{},{:.4},{:.6}\n",
                name,
                m.u,
                m.v,
                m.psnr.min(PSNR_CSV_CAP),
                m.ssim
            ));
        }
    }
    std::fs::write(path, text).map_err(|e| EvalError::Io { path: path.to_path_buf(), source: e })
}

/// Writes the `u,v,psnr` per-perspective grid of one scene.
pub fn write_grid_csv(path: &Path, scene: &SceneReport, config_hash: &str) -> Result<(), EvalError> {
    let mut text = format!("# config={config_hash}\nu,v,psnr\n");
    for m in &scene.per_view {
        text.push_str(&format!("{},{},{:.4}\n", m.u, m.v, m.psnr.min(PSNR_CSV_CAP)));
    }
    std::fs::write(path, text).map_err(|e| EvalError::Io { path: path.to_path_buf(), source: e })
}

/// Per-view PSNR laid out by angular coordinate (the perspective grid).
pub fn perspective_grid(
    model: &dyn SrModel,
    hr: &LightField,
    opts: &EvalOptions,
) -> Result<SceneReport, EvalError> {
    evaluate_scene(model, hr, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy_pair(n: usize, seed: u64) -> (Vec<f32>, Vec<f32>) {
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            ((state % 1000) as f32) / 1000.0
        };
        let a: Vec<f32> = (0..n).map(|_| next()).collect();
        let b: Vec<f32> = (0..n).map(|_| next()).collect();
        (a, b)
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = vec![0.25f32; 64];
        assert!(psnr(&a, &a, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn psnr_closed_form() {
        // constant difference 0.1 -> MSE 0.01 -> 20 dB
        let a = vec![0.5f32; 100];
        let b = vec![0.6f32; 100];
        let db = psnr(&a, &b, 1.0).unwrap();
        assert!((db - 20.0).abs() < 1e-9, "{db}");
    }

    #[test]
    fn psnr_matches_direct_summation_oracle() {
        let (a, b) = noisy_pair(1024, 77);
        let got = psnr(&a, &b, 1.0).unwrap();
        // independent: accumulate in reverse order at f64
        let mut sum = 0.0f64;
        for i in (0..a.len()).rev() {
            let d = a[i] as f64 - b[i] as f64;
            sum += d * d;
        }
        let expect = -10.0 * (sum / 1024.0).log10();
        assert!((got - expect).abs() <= 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn psnr_is_symmetric() {
        let (a, b) = noisy_pair(256, 3);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn ssim_identical_is_one() {
        let p = Plane::from_fn(16, 16, |y, x| ((y * 13 + x * 7) % 29) as f32 / 29.0);
        assert_eq!(ssim(&p, &p).unwrap(), 1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let p = Plane::from_fn(8, 8, |_, _| 0.5);
        assert!(matches!(ssim(&p, &p), Err(EvalError::WindowTooLarge { .. })));
    }

    #[test]
    fn ssim_matches_sliding_window_oracle() {
        let (av, bv) = noisy_pair(32 * 32, 55);
        let a = Plane::new(32, 32, av);
        let b = Plane::new(32, 32, bv);
        let got = ssim(&a, &b).unwrap();

        // independent oracle: separate gaussian construction and loops
        let mut win = vec![0.0f64; 121];
        let mut wsum = 0.0;
        for i in 0..121 {
            let (y, x) = (i / 11, i % 11);
            let v = (-(((y as f64 - 5.0).powi(2) + (x as f64 - 5.0).powi(2)) / 4.5)).exp();
            win[i] = v;
            wsum += v;
        }
        let c1 = 0.0001;
        let c2 = 0.0009;
        let mut acc = 0.0f64;
        let mut positions = 0;
        for y0 in 0..22 {
            for x0 in 0..22 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..121 {
                    let wt = win[i] / wsum;
                    let va = a.get(y0 + i / 11, x0 + i % 11) as f64;
                    let vb = b.get(y0 + i / 11, x0 + i % 11) as f64;
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * (sab - ma * mb) + c2))
                    / ((ma * ma + mb * mb + c1) * ((saa - ma * ma) + (sbb - mb * mb) + c2));
                positions += 1;
            }
        }
        let expect = acc / positions as f64;
        assert!((got - expect).abs() <= 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let (av, bv) = noisy_pair(32 * 32, 91);
        let a = Plane::new(32, 32, av);
        let b = Plane::new(32, 32, bv);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn aggregation_is_two_nested_means() {
        let view = |p: f64| ViewMetric { u: 0, v: 0, psnr: p, ssim: 0.9 };
        let scene_a = SceneReport { per_view: vec![view(30.0)], psnr: 30.0, ssim: 0.9 };
        let scene_b = SceneReport { per_view: vec![view(34.0)], psnr: 34.0, ssim: 0.9 };
        let scenes = vec![("a".to_string(), scene_a), ("b".to_string(), scene_b)];
        let (psnr, ssim) = aggregate(&scenes);
        assert_eq!(psnr, 32.0);
        assert!((ssim - 0.9).abs() < 1e-12);

        // permuting scene order leaves the dataset score unchanged
        let mut reversed = scenes.clone();
        reversed.reverse();
        assert_eq!(aggregate(&reversed).0, 32.0);
    }

    #[test]
    fn bicubic_baseline_runs_through_the_harness() {
        let tex = Plane::from_fn(96, 96, |y, x| (((y * 31 + x * 17 + y * x) % 83) as f32) / 83.0);
        let hr = crate::lf::synth_lf(&tex, 1.0, (3, 3, 32, 32)).unwrap();
        let model = BicubicModel { alpha: 2 };
        let report = evaluate_scene(&model, &hr, &EvalOptions::default()).unwrap();
        assert_eq!(report.per_view.len(), 9);
        assert!(report.psnr > 15.0 && report.psnr < 100.0, "psnr {}", report.psnr);
        assert!(report.ssim > 0.3 && report.ssim <= 1.0, "ssim {}", report.ssim);
        // per-scene is the mean of per-view entries
        let mean = report.per_view.iter().map(|m| m.psnr).sum::<f64>() / 9.0;
        assert!((report.psnr - mean).abs() < 1e-12);
    }

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<usize> = (0..23).collect();
        let doubled = parallel_map(&items, 4, &|&x| x * 2);
        assert_eq!(doubled, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
