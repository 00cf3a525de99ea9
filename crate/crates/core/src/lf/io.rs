//! Light-field file I/O.
//!
//! Two on-disk forms:
//! - flat binary tensor: magic `LF4D`, version `u16 = 1`, five little-endian
//!   `u32` extents `(U, V, H, W, C)`, then `U*V*H*W*C` little-endian `f32`
//!   values in row-major `(u, v, h, w, c)` order;
//! - view directory: an `lf.meta` file with `U=<n>` / `V=<n>` lines plus
//!   zero-indexed `view_{u}_{v}.png` images, 8-bit values mapped to `[0, 1]`
//!   by division with 255.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{LfError, LightField};

const MAGIC: [u8; 4] = *b"LF4D";
const VERSION: u16 = 1;

fn io_err(path: &Path, source: std::io::Error) -> LfError {
    LfError::Io { path: path.to_path_buf(), source }
}

/// Writes the flat binary tensor format.
pub fn save_lf(lf: &LightField, path: &Path) -> Result<(), LfError> {
    let mut buf = Vec::with_capacity(4 + 2 + 20 + lf.data().len() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for extent in [lf.u_views(), lf.v_views(), lf.height(), lf.width(), lf.channels()] {
        buf.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for v in lf.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))
}

/// Loads either on-disk form: a directory is read as a view directory,
/// anything else as the binary tensor format.
pub fn load_lf(path: &Path) -> Result<LightField, LfError> {
    if path.is_dir() {
        load_view_dir(path)
    } else {
        load_binary(path)
    }
}

fn load_binary(path: &Path) -> Result<LightField, LfError> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    if bytes.len() < 26 || bytes[..4] != MAGIC {
        return Err(LfError::BadMagic { path: path.to_path_buf() });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(LfError::BadVersion { path: path.to_path_buf(), got: version });
    }
    let mut extents = [0usize; 5];
    for (i, e) in extents.iter_mut().enumerate() {
        let off = 6 + 4 * i;
        *e = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    }
    let [u, v, h, w, c] = extents;
    let count = u * v * h * w * c;
    let payload = &bytes[26..];
    if payload.len() != count * 4 {
        return Err(LfError::Truncated {
            path: path.to_path_buf(),
            expected: count * 4,
            got: payload.len(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    LightField::new(u, v, h, w, c, data)
}

fn load_view_dir(dir: &Path) -> Result<LightField, LfError> {
    let meta_path = dir.join("lf.meta");
    let meta = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let mut u_views = None;
    let mut v_views = None;
    for line in meta.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| LfError::MetaParse {
            path: meta_path.clone(),
            msg: format!("expected key=value, got `{line}`"),
        })?;
        let parsed: usize = value.trim().parse().map_err(|_| LfError::MetaParse {
            path: meta_path.clone(),
            msg: format!("invalid count `{value}` for {key}"),
        })?;
        match key.trim() {
            "U" => u_views = Some(parsed),
            "V" => v_views = Some(parsed),
            other => {
                return Err(LfError::MetaParse {
                    path: meta_path.clone(),
                    msg: format!("unknown key `{other}`"),
                })
            }
        }
    }
    let (us, vs) = match (u_views, v_views) {
        (Some(u), Some(v)) if u >= 1 && v >= 1 => (u, v),
        _ => {
            return Err(LfError::MetaParse {
                path: meta_path,
                msg: "meta must declare U=<n> and V=<n>, both >= 1".into(),
            })
        }
    };

    let mut data = Vec::new();
    let mut dims: Option<(usize, usize, usize)> = None;
    for u in 0..us {
        for v in 0..vs {
            let view_path = dir.join(format!("view_{u}_{v}.png"));
            if !view_path.is_file() {
                return Err(LfError::MissingView { path: view_path });
            }
            let img = image::open(&view_path)
                .map_err(|e| LfError::Image { path: view_path.clone(), source: e })?;
            let (pixels, h, w, c) = match img {
                image::DynamicImage::ImageLuma8(g) => {
                    let (w, h) = (g.width() as usize, g.height() as usize);
                    (g.into_raw(), h, w, 1)
                }
                other => {
                    let rgb = other.to_rgb8();
                    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                    (rgb.into_raw(), h, w, 3)
                }
            };
            match dims {
                None => dims = Some((h, w, c)),
                Some(expected) if expected != (h, w, c) => {
                    return Err(LfError::ViewDimensionMismatch {
                        path: view_path,
                        expected,
                        got: (h, w, c),
                    })
                }
                _ => {}
            }
            data.extend(pixels.iter().map(|&p| p as f32 / 255.0));
        }
    }
    let (h, w, c) = dims.expect("extents >= 1 imply at least one view");
    LightField::new(us, vs, h, w, c, data)
}

/// Writes a view directory: `lf.meta` plus one 8-bit PNG per view, values
/// clamped to `[0, 1]` and quantized by `round(v * 255)`.
pub fn save_views_png(lf: &LightField, dir: &Path) -> Result<(), LfError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let meta_path = dir.join("lf.meta");
    fs::write(&meta_path, format!("U={}\nV={}\n", lf.u_views(), lf.v_views()))
        .map_err(|e| io_err(&meta_path, e))?;
    let quantize = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for u in 0..lf.u_views() {
        for v in 0..lf.v_views() {
            let view_path = dir.join(format!("view_{u}_{v}.png"));
            let (h, w) = (lf.height() as u32, lf.width() as u32);
            let result = match lf.channels() {
                1 => {
                    let mut img = image::GrayImage::new(w, h);
                    for y in 0..h {
                        for x in 0..w {
                            let g = quantize(lf.get(u, v, y as usize, x as usize, 0));
                            img.put_pixel(x, y, image::Luma([g]));
                        }
                    }
                    img.save(&view_path)
                }
                3 => {
                    let mut img = image::RgbImage::new(w, h);
                    for y in 0..h {
                        for x in 0..w {
                            let px = image::Rgb([
                                quantize(lf.get(u, v, y as usize, x as usize, 0)),
                                quantize(lf.get(u, v, y as usize, x as usize, 1)),
                                quantize(lf.get(u, v, y as usize, x as usize, 2)),
                            ]);
                            img.put_pixel(x, y, px);
                        }
                    }
                    img.save(&view_path)
                }
                c => return Err(LfError::WrongChannelCount { expected: 1, got: c }),
            };
            result.map_err(|e| LfError::Image { path: view_path, source: e })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_lf() -> LightField {
        LightField::from_fn(2, 2, 3, 4, 1, |u, v, h, w, _| {
            ((u * 7 + v * 13 + h * 3 + w) % 11) as f32 / 11.0
        })
        .unwrap()
    }

    #[test]
    fn binary_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("test.lf4d");
        let lf = sample_lf();
        save_lf(&lf, &path).unwrap();
        let back = load_lf(&path).unwrap();
        assert_eq!(back, lf);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.lf4d");
        fs::write(&path, b"NOPE\x01\x00junkjunkjunkjunkjunkjunk").unwrap();
        assert!(matches!(load_lf(&path), Err(LfError::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.lf4d");
        let lf = sample_lf();
        save_lf(&lf, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_lf(&path), Err(LfError::Truncated { .. })));
    }

    #[test]
    fn view_dir_round_trip_and_missing_view() {
        let dir = tempdir().unwrap();
        let lf = sample_lf();
        save_views_png(&lf, dir.path()).unwrap();
        let back = load_lf(dir.path()).unwrap();
        assert_eq!(back.extents(), lf.extents());
        // 8-bit quantization is the only loss permitted.
        for (a, b) in back.data().iter().zip(lf.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        fs::remove_file(dir.path().join("view_0_1.png")).unwrap();
        assert!(matches!(load_lf(dir.path()), Err(LfError::MissingView { .. })));
    }

    #[test]
    fn eight_bit_255_maps_to_one() {
        let dir = tempdir().unwrap();
        let lf = LightField::from_fn(1, 1, 2, 2, 1, |_, _, _, _, _| 1.0).unwrap();
        save_views_png(&lf, dir.path()).unwrap();
        let back = load_lf(dir.path()).unwrap();
        assert!(back.data().iter().all(|&v| v == 1.0));
    }
}
