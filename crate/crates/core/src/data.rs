//! Dataset bundles on disk, stratified splitting, normalization and
//! training-time augmentation.
//!
//! A bundle directory holds `manifest.json` and `images.bin`, the latter being
//! `count × width × height` unsigned bytes in record order.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FRAME_SIZE: usize = 64;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_FILE: &str = "images.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub label: u8,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            scale: 255.0,
            mean: 0.5,
            std: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub source: String,
    #[serde(default)]
    pub normalization: Normalization,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub manifest: Manifest,
    pub images: Vec<u8>,
}

impl DatasetBundle {
    pub fn new(source: &str, width: usize, height: usize, records: Vec<Record>, images: Vec<u8>) -> Result<Self> {
        let bundle = Self {
            manifest: Manifest {
                width,
                height,
                count: records.len(),
                source: source.to_string(),
                normalization: Normalization::default(),
                records,
            },
            images,
        };
        bundle.validate(Path::new("<memory>"))?;
        Ok(bundle)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let images_path = dir.join(IMAGES_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
        let images = fs::read(&images_path).map_err(|e| Error::io(&images_path, e))?;
        let bundle = Self { manifest, images };
        bundle.validate(dir)?;
        Ok(bundle)
    }

    fn validate(&self, dir: &Path) -> Result<()> {
        let m = &self.manifest;
        if m.count != m.records.len() {
            return Err(Error::format(
                dir.join(MANIFEST_FILE),
                format!("count {} but {} records", m.count, m.records.len()),
            ));
        }
        let expected = m.count * m.width * m.height;
        if self.images.len() != expected {
            return Err(Error::format(
                dir.join(IMAGES_FILE),
                format!(
                    "{} bytes, expected {} × {} × {} = {expected}",
                    self.images.len(),
                    m.count,
                    m.width,
                    m.height
                ),
            ));
        }
        let mut seen = HashSet::with_capacity(m.records.len());
        for r in &m.records {
            if r.label > 1 {
                return Err(Error::format(
                    dir.join(MANIFEST_FILE),
                    format!("record `{}` has label {} (expected 0 or 1)", r.id, r.label),
                ));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::format(
                    dir.join(MANIFEST_FILE),
                    format!("duplicate record id `{}`", r.id),
                ));
            }
        }
        Ok(())
    }

    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_manifest(dir)?;
        let p = dir.join(IMAGES_FILE);
        fs::write(&p, &self.images).map_err(|e| Error::io(&p, e))
    }

    pub fn write_manifest(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST_FILE);
        fs::write(&p, self.manifest_json()).map_err(|e| Error::io(&p, e))
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.manifest.records
    }

    pub fn frame(&self, index: usize) -> &[u8] {
        let n = self.manifest.width * self.manifest.height;
        &self.images[index * n..(index + 1) * n]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.manifest.records.iter().position(|r| r.id == id)
    }

    pub fn split_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for r in &self.manifest.records {
            c[r.split as usize] += 1;
        }
        c
    }

    pub fn is_split(&self) -> bool {
        self.manifest.records.iter().any(|r| r.split != Split::Unassigned)
    }

    /// Errors unless frames are the 64×64 size the CNN consumes.
    pub fn require_cnn_frames(&self) -> Result<()> {
        if self.manifest.width != FRAME_SIZE || self.manifest.height != FRAME_SIZE {
            return Err(Error::InvalidShape(format!(
                "bundle frames are {}×{}, the CNN needs {FRAME_SIZE}×{FRAME_SIZE}",
                self.manifest.width, self.manifest.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.1,
            test: 0.3,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios {parts:?} must be in [0,1] and sum to 1"
            )));
        }
        Ok(())
    }
}

/// `⌊ratio · n⌋`, tolerant of the product landing a hair below an integer.
fn floor_share(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Assigns train/val/test per class: each class is shuffled with a ChaCha8
/// stream seeded from `seed` (class 0 first), then `⌊train·n⌋` go to train,
/// `⌊val·n⌋` to val and the remainder to test.
pub fn stratified_split(records: &mut [Record], ratios: SplitRatios, seed: u64) -> Result<()> {
    ratios.validate()?;
    if let Some(r) = records.iter().find(|r| r.split != Split::Unassigned) {
        return Err(Error::InvalidState(format!(
            "record `{}` is already assigned to {:?}",
            r.id, r.split
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in 0..=1u8 {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == label).collect();
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "class {label} has no records; cannot stratify"
            )));
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = floor_share(ratios.train, n);
        let n_val = floor_share(ratios.val, n);
        for (k, &i) in idx.iter().enumerate() {
            records[i].split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(())
}

/// Maps 8-bit pixels to `(p/255 − 0.5)/0.5 ∈ [−1, 1]` as a `1×64×64` tensor.
pub fn normalize(frame: &[u8]) -> Result<Tensor<f32>> {
    if frame.len() != FRAME_SIZE * FRAME_SIZE {
        return Err(Error::InvalidShape(format!(
            "frame has {} pixels, expected {FRAME_SIZE}×{FRAME_SIZE}",
            frame.len()
        )));
    }
    Tensor::new(
        &[1, FRAME_SIZE, FRAME_SIZE],
        frame.iter().map(|&p| (p as f32 / 255.0 - 0.5) / 0.5).collect(),
    )
}

/// Inverse of [`normalize`], rounded and clamped to `0..=255`.
pub fn denormalize(value: f32) -> u8 {
    ((value * 0.5 + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    pub max_translate_frac: f64,
    pub scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            max_rotation_deg: 10.0,
            max_translate_frac: 0.05,
            scale_range: (0.95, 1.05),
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            flip_prob: 0.0,
            max_rotation_deg: 0.0,
            max_translate_frac: 0.0,
            scale_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(0.0..=1.0).contains(&self.flip_prob)
            || self.max_rotation_deg < 0.0
            || self.max_translate_frac < 0.0
            || lo <= 0.0
            || hi < lo
        {
            return Err(Error::InvalidArgument(format!("bad augmentation config {self:?}")));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Random horizontal flip followed by one random affine map (rotation about
/// the centre, translation, isotropic scale) with bilinear sampling.
/// Samples falling outside the frame read as 0, the normalized mid-grey.
///
/// The RNG is always advanced by the same number of draws so a per-sample
/// stream yields the same transform regardless of configuration.
pub fn augment(image: &Tensor<f32>, config: &AugmentConfig, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    let (h, w) = match *image.shape() {
        [1, h, w] => (h, w),
        ref s => return Err(Error::InvalidShape(format!("augment expects 1×H×W, got {s:?}"))),
    };
    let flip = rng.gen::<f64>() < config.flip_prob;
    let angle = uniform(rng, -config.max_rotation_deg, config.max_rotation_deg).to_radians();
    let tx = uniform(rng, -config.max_translate_frac, config.max_translate_frac) * w as f64;
    let ty = uniform(rng, -config.max_translate_frac, config.max_translate_frac) * h as f64;
    let scale = uniform(rng, config.scale_range.0, config.scale_range.1);

    let src = image.data();
    let flipped: Vec<f32> = if flip {
        src.chunks_exact(w).flat_map(|row| row.iter().rev().copied()).collect()
    } else {
        src.to_vec()
    };
    if angle == 0.0 && tx == 0.0 && ty == 0.0 && scale == 1.0 {
        return Tensor::new(image.shape(), flipped);
    }

    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let at = |x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            flipped[y as usize * w + x as usize]
        }
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            // Inverse map: undo translation, rotation, then scale.
            let u = x as f64 - cx - tx;
            let v = y as f64 - cy - ty;
            let sx = (cos * u + sin * v) / scale + cx;
            let sy = (-sin * u + cos * v) / scale + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
            let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::new(image.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n0: usize, n1: usize) -> Vec<Record> {
        (0..n0 + n1)
            .map(|i| Record {
                id: format!("r{i:04}"),
                label: u8::from(i >= n0),
                split: Split::Unassigned,
            })
            .collect()
    }

    fn count(recs: &[Record], label: u8, split: Split) -> usize {
        recs.iter().filter(|r| r.label == label && r.split == split).count()
    }

    #[test]
    fn shenzhen_sized_split_follows_floor_arithmetic() {
        let mut recs = records(326, 336);
        stratified_split(&mut recs, SplitRatios::default(), 42).unwrap();
        assert_eq!(
            (count(&recs, 0, Split::Train), count(&recs, 1, Split::Train)),
            (195, 201)
        );
        assert_eq!((count(&recs, 0, Split::Val), count(&recs, 1, Split::Val)), (32, 33));
        assert_eq!((count(&recs, 0, Split::Test), count(&recs, 1, Split::Test)), (99, 102));
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let mut a = records(50, 70);
        let mut b = records(50, 70);
        let mut c = records(50, 70);
        stratified_split(&mut a, SplitRatios::default(), 7).unwrap();
        stratified_split(&mut b, SplitRatios::default(), 7).unwrap();
        stratified_split(&mut c, SplitRatios::default(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_class_cannot_be_stratified() {
        let mut recs = records(10, 0);
        assert!(matches!(
            stratified_split(&mut recs, SplitRatios::default(), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let mut recs = records(10, 10);
        let bad = SplitRatios {
            train: 0.6,
            val: 0.1,
            test: 0.2,
        };
        assert!(matches!(
            stratified_split(&mut recs, bad, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn already_split_records_are_refused() {
        let mut recs = records(10, 10);
        recs[3].split = Split::Test;
        assert!(matches!(
            stratified_split(&mut recs, SplitRatios::default(), 0),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn normalize_maps_endpoints_and_midpoint() {
        let mut frame = vec![128u8; 64 * 64];
        frame[0] = 0;
        frame[1] = 255;
        let t = normalize(&frame).unwrap();
        assert_eq!(t.shape(), &[1, 64, 64]);
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[2] - 0.003_921_6).abs() < 1e-6);
        assert!(normalize(&[0u8; 100]).is_err());
    }

    #[test]
    fn normalize_roundtrips_every_pixel_value() {
        let frame: Vec<u8> = (0..64 * 64).map(|i| (i % 256) as u8).collect();
        let t = normalize(&frame).unwrap();
        for (&p, &v) in frame.iter().zip(t.data()) {
            let back = (v * 0.5 + 0.5) * 255.0;
            assert!((back - p as f32).abs() < 1.0 / 255.0);
            assert_eq!(denormalize(v), p);
        }
    }

    fn ramp() -> Tensor<f32> {
        Tensor::from_fn(&[1, 64, 64], |i| ((i % 64) as f32 / 63.0) - (i / 64) as f32 / 128.0)
    }

    #[test]
    fn identity_augmentation_is_exact() {
        let img = ramp();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&img, &AugmentConfig::identity(), &mut rng).unwrap(), img);
    }

    #[test]
    fn flip_only_mirrors_columns_and_is_an_involution() {
        let img = ramp();
        let cfg = AugmentConfig {
            flip_prob: 1.0,
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let once = augment(&img, &cfg, &mut rng).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(once.data()[y * 64 + x], img.data()[y * 64 + 63 - x]);
            }
        }
        assert_eq!(augment(&once, &cfg, &mut rng).unwrap(), img);
    }

    #[test]
    fn augmentation_is_seed_deterministic_and_shape_preserving() {
        let img = ramp();
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), img.shape());
        assert!(a.is_finite());
        assert_ne!(a, img);
    }

    #[test]
    fn bundle_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let recs = records(2, 1);
        let images: Vec<u8> = (0..3 * 64 * 64).map(|i| (i % 251) as u8).collect();
        let bundle = DatasetBundle::new("unit", 64, 64, recs, images).unwrap();
        bundle.save(dir.path()).unwrap();
        let back = DatasetBundle::load(dir.path()).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(back.frame(2), bundle.frame(2));
    }

    #[test]
    fn empty_manifest_loads_as_empty_bundle() {
        let dir = tempfile::tempdir().unwrap();
        DatasetBundle::new("empty", 64, 64, vec![], vec![])
            .unwrap()
            .save(dir.path())
            .unwrap();
        let b = DatasetBundle::load(dir.path()).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn load_reports_size_and_label_problems() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = DatasetBundle::new("unit", 64, 64, records(1, 1), vec![0; 2 * 4096]).unwrap();
        bundle.save(dir.path()).unwrap();
        fs::write(dir.path().join(IMAGES_FILE), vec![0u8; 4096]).unwrap();
        let err = DatasetBundle::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("expected"), "{err}");

        let text = bundle.manifest_json().replacen("\"label\": 1", "\"label\": 2", 1);
        fs::write(dir.path().join(IMAGES_FILE), vec![0u8; 2 * 4096]).unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), text).unwrap();
        let err = DatasetBundle::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("label 2"), "{err}");

        let missing = tempfile::tempdir().unwrap();
        assert!(DatasetBundle::load(missing.path()).unwrap_err().is_io());
    }
}
