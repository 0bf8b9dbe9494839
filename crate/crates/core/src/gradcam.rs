//! Grad-CAM heatmaps over the last conv block and PPM overlays.
//!
//! The source activations are the `64×8×8` output of the third conv block
//! (post-ReLU, post-pool), i.e. the tensor flattened into fc1. Channel
//! weights are spatially averaged gradients of the target logit; the
//! weighted sum is rectified, bilinearly upsampled to 64×64 and divided by
//! its maximum.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::model::NUM_CLASSES;
use crate::nn::CnnModel;
use crate::tensor::{Scalar, Tensor};

pub const MAP_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCamMap {
    /// `64×64` row-major, values in `[0, 1]`.
    pub heat: Vec<f32>,
    /// Rectified weighted activation map before upsampling, `8×8`.
    pub raw: Vec<f64>,
    /// Per-channel weights α_k.
    pub channel_weights: Vec<f64>,
    pub target_class: usize,
}

impl GradCamMap {
    pub fn max(&self) -> f32 {
        self.heat.iter().fold(0.0, |m, &v| m.max(v))
    }
}

pub fn gradcam<T: Scalar>(model: &CnnModel<T>, image: &Tensor<T>, target_class: usize) -> Result<GradCamMap> {
    if target_class >= NUM_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "target class {target_class} outside 0..{NUM_CLASSES}"
        )));
    }
    let (_, trace) = model.forward(image)?;
    let mut onehot = [T::zero(); NUM_CLASSES];
    onehot[target_class] = T::one();
    let grad = model.feature_gradient(&trace, &onehot)?;
    let acts = &trace.pool3;
    let (channels, h, w) = (acts.shape()[0], acts.shape()[1], acts.shape()[2]);
    let plane = h * w;

    let channel_weights: Vec<f64> = grad
        .data()
        .chunks_exact(plane)
        .map(|g| g.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64)
        .collect();
    let mut raw = vec![0.0f64; plane];
    for (k, &alpha) in channel_weights.iter().enumerate() {
        for (r, a) in raw.iter_mut().zip(&acts.data()[k * plane..(k + 1) * plane]) {
            *r += alpha * a.as_f64();
        }
    }
    debug_assert_eq!(channel_weights.len(), channels);
    raw.iter_mut().for_each(|r| *r = r.max(0.0));

    let up = upsample_bilinear(&raw, h, w, MAP_SIZE, MAP_SIZE);
    let max = up.iter().fold(0.0f64, |m, &v| m.max(v));
    let heat = if max > 0.0 {
        up.iter().map(|&v| (v / max) as f32).collect()
    } else {
        vec![0.0; MAP_SIZE * MAP_SIZE]
    };
    Ok(GradCamMap {
        heat,
        raw,
        channel_weights,
        target_class,
    })
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Corner-aligned bilinear resize: output corners coincide with input
/// corners, so every input cell value appears exactly in the output and no
/// interpolated value exceeds the input maximum.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, out_h, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, out_w, w);
            let top = lerp(src[y0 * w + x0], src[y0 * w + x1], fx);
            let bottom = lerp(src[y1 * w + x0], src[y1 * w + x1], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    out
}

/// Grey pixel in every channel, red raised toward 255 by `0.5 · heat`.
pub fn blend(gray: u8, heat: f32) -> [u8; 3] {
    let g = gray as f32;
    let red = (g + 0.5 * heat.clamp(0.0, 1.0) * (255.0 - g)).round() as u8;
    [red, gray, gray]
}

pub fn overlay_pixels(frame: &[u8], map: &GradCamMap) -> Result<Vec<u8>> {
    if frame.len() != MAP_SIZE * MAP_SIZE || map.heat.len() != MAP_SIZE * MAP_SIZE {
        return Err(Error::InvalidShape(format!(
            "overlay needs {MAP_SIZE}×{MAP_SIZE} frame and map, got {} and {}",
            frame.len(),
            map.heat.len()
        )));
    }
    Ok(frame.iter().zip(&map.heat).flat_map(|(&g, &h)| blend(g, h)).collect())
}

/// Writes a binary PPM (P6) overlay of `map` on the 8-bit grey `frame`.
pub fn emit_overlay(frame: &[u8], map: &GradCamMap, path: &Path) -> Result<()> {
    let rgb = overlay_pixels(frame, map)?;
    write_ppm(path, MAP_SIZE, MAP_SIZE, &rgb)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(rgb);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a binary PPM with maxval 255. Returns `(width, height, rgb)`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |r: &str| Error::format(path, r.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PPM header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h * 3 {
        return Err(bad("pixel data length does not match header"));
    }
    Ok((w, h, data.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image<T: Scalar>(seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[1, 64, 64], |_| T::from_f64(rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn zero_fc2_gives_zero_map() {
        let mut model = CnnModel::<f32>::new(1);
        model.layers_mut().fc2.weight.fill(0.0);
        let map = gradcam(&model, &image(1), 1).unwrap();
        assert!(map.heat.iter().all(|&v| v == 0.0));
        assert_eq!(map.max(), 0.0);
    }

    #[test]
    fn heat_is_normalized() {
        for seed in 0..4 {
            let model = CnnModel::<f32>::new(seed);
            for class in 0..2 {
                let map = gradcam(&model, &image(seed + 10), class).unwrap();
                assert_eq!(map.heat.len(), 64 * 64);
                assert!(map.heat.iter().all(|&v| (0.0..=1.0).contains(&v)));
                assert!(map.max() == 0.0 || map.max() == 1.0);
                assert!(map.raw.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = CnnModel::<f32>::new(0);
        assert!(gradcam(&model, &Tensor::zeros(&[1, 32, 32]), 0).is_err());
        assert!(gradcam(&model, &image(0), 2).is_err());
    }

    #[test]
    fn channel_weights_match_finite_differences() {
        let model = CnnModel::<f64>::new(21);
        let img = image::<f64>(22);
        let target = 1;
        let map = gradcam(&model, &img, target).unwrap();
        let (_, trace) = model.forward(&img).unwrap();
        let l = model.layers();
        let head_logit = |feat: &Tensor<f64>| -> f64 {
            let flat = feat.clone().reshape(&[4096]).unwrap();
            let hidden = crate::nn::layers::relu(&crate::nn::layers::dense_forward(&flat, &l.fc1).unwrap());
            crate::nn::layers::dense_forward(&hidden, &l.fc2).unwrap().data()[target]
        };
        let eps = 1e-6;
        for k in 0..64 {
            let mut plus = trace.pool3.clone();
            let mut minus = trace.pool3.clone();
            for i in 0..64 {
                plus.data_mut()[k * 64 + i] += eps;
                minus.data_mut()[k * 64 + i] -= eps;
            }
            let fd = (head_logit(&plus) - head_logit(&minus)) / (2.0 * eps * 64.0);
            let a = map.channel_weights[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-9);
            assert!(rel < 1e-3, "channel {k}: analytic {a} vs fd {fd}");
        }
    }

    #[test]
    fn doubling_fc2_scales_raw_but_not_heat() {
        let model = CnnModel::<f32>::new(5);
        let mut doubled = model.clone();
        doubled
            .layers_mut()
            .fc2
            .weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w *= 2.0);
        let img = image(6);
        let a = gradcam(&model, &img, 1).unwrap();
        let b = gradcam(&doubled, &img, 1).unwrap();
        for (x, y) in a.raw.iter().zip(&b.raw) {
            assert_eq!(2.0 * x, *y);
        }
        assert_eq!(a.heat, b.heat);
    }

    #[test]
    fn upsampling_keeps_argmax_inside_its_cell_footprint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let src: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
            let up = upsample_bilinear(&src, 8, 8, 64, 64);
            let cell = crate::tensor::Tensor::<f64>::new(&[64], src.clone()).unwrap().argmax();
            let pix = crate::tensor::Tensor::<f64>::new(&[4096], up).unwrap().argmax();
            let (cy, cx) = (cell / 8, cell % 8);
            let (py, px) = (pix / 64, pix % 64);
            // pixel p samples input coordinate p * 7 / 63 = p / 9
            assert!((py as f64 / 9.0 - cy as f64).abs() <= 0.5);
            assert!((px as f64 / 9.0 - cx as f64).abs() <= 0.5);
        }
    }

    #[test]
    fn overlay_blend_formula_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let frame: Vec<u8> = (0..4096).map(|i| (i % 256) as u8).collect();
        let zero = GradCamMap {
            heat: vec![0.0; 4096],
            raw: vec![0.0; 64],
            channel_weights: vec![0.0; 64],
            target_class: 1,
        };
        let path = dir.path().join("zero.ppm");
        emit_overlay(&frame, &zero, &path).unwrap();
        let (w, h, rgb) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (64, 64));
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            assert_eq!(px, [frame[i]; 3]);
        }

        let mut hot = zero.clone();
        hot.heat = (0..4096).map(|i| (i % 7) as f32 / 6.0).collect();
        let path = dir.path().join("hot.ppm");
        emit_overlay(&frame, &hot, &path).unwrap();
        let (_, _, rgb) = read_ppm(&path).unwrap();
        assert_eq!(rgb, overlay_pixels(&frame, &hot).unwrap());
        assert_eq!(blend(100, 1.0)[0], (0.5f32 * 100.0 + 0.5 * 255.0).round() as u8);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let map = GradCamMap {
            heat: vec![0.0; 4096],
            raw: vec![],
            channel_weights: vec![],
            target_class: 0,
        };
        let err = emit_overlay(&[0; 4096], &map, Path::new("/nonexistent/dir/x.ppm")).unwrap_err();
        assert!(err.is_io());
    }
}
