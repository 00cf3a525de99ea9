//! Shear-robustness sweep: re-evaluate the model after adding a constant
//! disparity offset to every scene.
//!
//! The HR scene is sheared and cropped to its valid region *before* LR
//! generation, so LR and HR stay aligned; cropping after downsampling would
//! differ at the borders.

use std::path::Path;

use super::{aggregate, evaluate_scene, EvalError, EvalOptions, SrModel, PSNR_CSV_CAP};
use crate::lf::{shear, LightField, ShearSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub shear: i32,
    pub psnr: f64,
    pub ssim: f64,
}

/// One row per shear value: shear every HR scene, crop to the valid region,
/// regenerate LR, evaluate, aggregate over scenes.
pub fn shear_sweep(
    model: &dyn SrModel,
    scenes: &[(String, LightField)],
    shear_values: &[i32],
    opts: &EvalOptions,
) -> Result<Vec<SweepRow>, EvalError> {
    let mut rows = Vec::with_capacity(shear_values.len());
    for &s in shear_values {
        let spec = ShearSpec::new(s);
        let mut sheared = Vec::with_capacity(scenes.len());
        for (name, hr) in scenes {
            sheared.push((name.clone(), shear(hr, &spec)?));
        }
        let reports = super::parallel_map(&sheared, opts.threads, &|(_, hr)| {
            evaluate_scene(model, hr, opts)
        });
        let mut scored = Vec::with_capacity(sheared.len());
        for ((name, _), report) in sheared.iter().zip(reports) {
            scored.push((name.clone(), report?));
        }
        let (psnr, ssim) = aggregate(&scored);
        rows.push(SweepRow { shear: s, psnr, ssim });
    }
    Ok(rows)
}

/// Writes `shear,psnr,ssim` rows.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow], config_hash: &str) -> Result<(), EvalError> {
    let mut text = format!("# config={config_hash}\nshear,psnr,ssim\n");
    for row in rows {
        text.push_str(&format!(
            "{},{:.4},{:.6}\n",
            row.shear,
            row.psnr.min(PSNR_CSV_CAP),
            row.ssim
        ));
    }
    std::fs::write(path, text).map_err(|e| EvalError::Io { path: path.to_path_buf(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::BicubicModel;
    use crate::lf::{synth_lf, Plane};

    fn scene(d: f64) -> LightField {
        let tex = Plane::from_fn(128, 128, |y, x| {
            (((y * 29 + x * 13 + (y * x) % 11) % 71) as f32) / 71.0
        });
        synth_lf(&tex, d, (3, 3, 48, 48)).unwrap()
    }

    #[test]
    fn one_row_per_shear_value() {
        let scenes = vec![("s".to_string(), scene(0.0))];
        let model = BicubicModel { alpha: 2 };
        let rows = shear_sweep(&model, &scenes, &[-2, -1, 0, 1, 2], &EvalOptions::default()).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows.iter().map(|r| r.shear).collect::<Vec<_>>(), vec![-2, -1, 0, 1, 2]);
    }

    #[test]
    fn zero_shear_row_equals_plain_evaluation() {
        let scenes = vec![("s".to_string(), scene(1.0))];
        let model = BicubicModel { alpha: 2 };
        let rows = shear_sweep(&model, &scenes, &[0], &EvalOptions::default()).unwrap();
        let direct = evaluate_scene(&model, &scenes[0].1, &EvalOptions::default()).unwrap();
        assert_eq!(rows[0].psnr, direct.psnr);
        assert_eq!(rows[0].ssim, direct.ssim);
    }

    #[test]
    fn sweep_equals_resynthesized_disparity() {
        // Shearing a synthetic scene of disparity d by s and evaluating must
        // match evaluating an unsheared scene of disparity d+s on the same
        // crop, because both pipelines see identical pixels.
        let model = BicubicModel { alpha: 2 };
        let opts = EvalOptions::default();
        for (d, s) in [(0.0, 1), (1.0, 1), (0.0, -2), (-1.0, 2)] {
            let base = scene(d);
            let rows = shear_sweep(
                &model,
                &[("s".to_string(), base)],
                &[s],
                &opts,
            )
            .unwrap();
            let spec = ShearSpec::new(s);
            let (mh, mw) = spec.margins(3, 3);
            let resynth = scene(d + s as f64)
                .crop_spatial(mh, mw, 48 - 2 * mh, 48 - 2 * mw)
                .unwrap();
            let direct = evaluate_scene(&model, &resynth, &opts).unwrap();
            assert!(
                (rows[0].psnr - direct.psnr).abs() <= 1e-6,
                "d={d} s={s}: {} vs {}",
                rows[0].psnr,
                direct.psnr
            );
        }
    }
}
