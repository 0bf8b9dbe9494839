//! Synthetic fixtures: chest-radiograph-like bundles and embedding sets with
//! a known class signal. Used by the test suites, the benchmarks and the
//! `synth` CLI command when the real datasets are not at hand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{DatasetBundle, Record, Split, FRAME_SIZE};
use crate::error::Result;
use crate::zeroshot::{EmbeddingSet, PromptSet};

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone, Copy)]
pub struct SynthBundleConfig {
    pub negatives: usize,
    pub positives: usize,
    /// Pixel noise standard deviation (0–255 scale).
    pub noise: f64,
    /// Peak brightness added by each lesion blob in positive images.
    pub lesion_gain: f64,
    pub seed: u64,
}

impl Default for SynthBundleConfig {
    fn default() -> Self {
        Self {
            negatives: 120,
            positives: 120,
            noise: 18.0,
            lesion_gain: 70.0,
            seed: 0,
        }
    }
}

/// Two dark lung fields on a brighter mediastinum/body, per-image jitter in
/// position and contrast; positives carry 1–3 bright opacities inside the
/// lung fields. Records are interleaved and left unassigned.
pub fn synthetic_bundle(cfg: &SynthBundleConfig) -> Result<DatasetBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.negatives + cfg.positives;
    let mut labels: Vec<u8> = std::iter::repeat_n(0, cfg.negatives)
        .chain(std::iter::repeat_n(1, cfg.positives))
        .collect();
    labels.shuffle(&mut rng);
    let mut images = Vec::with_capacity(n * FRAME_SIZE * FRAME_SIZE);
    let mut records = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        images.extend(synthetic_frame(&mut rng, label, cfg));
        records.push(Record {
            id: format!("syn-{i:05}"),
            label,
            split: Split::Unassigned,
        });
    }
    DatasetBundle::new("synthetic", FRAME_SIZE, FRAME_SIZE, records, images)
}

fn synthetic_frame(rng: &mut impl Rng, label: u8, cfg: &SynthBundleConfig) -> Vec<u8> {
    let s = FRAME_SIZE as f64;
    let body = rng.gen_range(150.0..190.0);
    let lung = body - rng.gen_range(70.0..100.0);
    let shift_x = rng.gen_range(-3.0..3.0);
    let shift_y = rng.gen_range(-3.0..3.0);
    let lungs = [
        (0.32 * s + shift_x, 0.5 * s + shift_y),
        (0.68 * s + shift_x, 0.5 * s + shift_y),
    ];
    let (rx, ry) = (0.13 * s, 0.3 * s);

    let blobs: Vec<(f64, f64, f64)> = if label == 1 {
        (0..rng.gen_range(1..=3))
            .map(|_| {
                let (cx, cy) = lungs[rng.gen_range(0..2)];
                (
                    cx + rng.gen_range(-0.6..0.6) * rx,
                    cy + rng.gen_range(-0.6..0.6) * ry,
                    rng.gen_range(3.0..6.0),
                )
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut out = Vec::with_capacity(FRAME_SIZE * FRAME_SIZE);
    for y in 0..FRAME_SIZE {
        for x in 0..FRAME_SIZE {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = body - 40.0 * ((yf - s / 2.0).abs() / s);
            for &(cx, cy) in &lungs {
                let d = ((xf - cx) / rx).powi(2) + ((yf - cy) / ry).powi(2);
                if d < 1.0 {
                    v = v.min(lung + (body - lung) * d * d);
                }
            }
            for &(bx, by, r) in &blobs {
                let d2 = (xf - bx).powi(2) + (yf - by).powi(2);
                v += cfg.lesion_gain * (-d2 / (2.0 * r * r)).exp();
            }
            v += cfg.noise * normal(rng);
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct SynthEmbeddingConfig {
    pub count: usize,
    pub dim: usize,
    pub positive_fraction: f64,
    /// Separation of the class means along the positive-prompt direction.
    pub signal: f64,
    /// Extra pull toward the negative prototype; makes argmax under-call positives.
    pub negative_bias: f64,
    pub logit_scale: f64,
    pub seed: u64,
}

impl Default for SynthEmbeddingConfig {
    fn default() -> Self {
        Self {
            count: 200,
            dim: 32,
            positive_fraction: 0.5,
            signal: 0.6,
            negative_bias: 0.4,
            logit_scale: 20.0,
            seed: 0,
        }
    }
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Five prompt rows per class scattered around two class directions, image
/// rows drawn around a shared anatomy direction plus a class-dependent
/// component.
pub fn synthetic_embeddings(cfg: &SynthEmbeddingConfig) -> EmbeddingSet {
    // Prompt directions depend only on the dimension so that validation and
    // test sets generated with different seeds share prototypes.
    let mut prompt_rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 ^ cfg.dim as u64);
    let dir_neg = random_unit(&mut prompt_rng, cfg.dim);
    let dir_pos = random_unit(&mut prompt_rng, cfg.dim);
    let anatomy = random_unit(&mut prompt_rng, cfg.dim);
    let mut prompt_rows = |dir: &[f64]| -> Vec<Vec<f64>> {
        (0..5)
            .map(|_| dir.iter().map(|&d| d + 0.15 * normal(&mut prompt_rng)).collect())
            .collect()
    };
    let rows0 = prompt_rows(&dir_neg);
    let rows1 = prompt_rows(&dir_pos);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ids = Vec::with_capacity(cfg.count);
    let mut labels = Vec::with_capacity(cfg.count);
    let mut vectors = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let label = u8::from(rng.gen::<f64>() < cfg.positive_fraction);
        let strength = cfg.signal * (label as f64 - 0.5) + 0.3 * normal(&mut rng);
        let v: Vec<f64> = (0..cfg.dim)
            .map(|k| {
                anatomy[k]
                    + strength * dir_pos[k]
                    + cfg.negative_bias * dir_neg[k]
                    + 0.25 * normal(&mut rng) / (cfg.dim as f64).sqrt()
            })
            .collect();
        ids.push(format!("emb-{i:05}"));
        labels.push(label);
        vectors.push(v);
    }
    EmbeddingSet {
        dim: cfg.dim,
        ids,
        labels,
        vectors,
        logit_scale: cfg.logit_scale,
        model_id: "synthetic".into(),
        prompts: PromptSet {
            prompts: [
                (1..=5).map(|k| format!("normal prompt {k}")).collect(),
                (1..=5).map(|k| format!("finding prompt {k}")).collect(),
            ],
            rows: [rows0, rows1],
        },
    }
}
