//! Zero-shot classification of precomputed image embeddings against class
//! text prototypes.
//!
//! On disk an embedding set is a directory with `embeddings.json`,
//! `vectors.bin` (`count × dim` f32 LE, row-major) and `prompt_vectors.bin`
//! (class-0 prompt rows followed by class-1 prompt rows).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Backend;
use crate::metrics::{Prediction, PredictionSet};

pub const EMBEDDINGS_FILE: &str = "embeddings.json";
pub const VECTORS_FILE: &str = "vectors.bin";
pub const PROMPT_VECTORS_FILE: &str = "prompt_vectors.bin";

fn default_logit_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLists {
    pub class0: Vec<String>,
    pub class1: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub dim: usize,
    pub count: usize,
    pub dtype: String,
    #[serde(default = "default_logit_scale")]
    pub logit_scale: f64,
    pub model_id: String,
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub prompts: PromptLists,
}

/// Prompt strings and their embedding rows, per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub prompts: [Vec<String>; 2],
    pub rows: [Vec<Vec<f64>>; 2],
}

impl PromptSet {
    pub fn prototypes(&self) -> Result<[Prototype; 2]> {
        Ok([build_prototype(0, &self.rows[0])?, build_prototype(1, &self.rows[1])?])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub vectors: Vec<Vec<f64>>,
    pub logit_scale: f64,
    pub model_id: String,
    pub prompts: PromptSet,
}

fn read_f32_rows(path: &Path, rows: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != rows * dim * 4 {
        return Err(Error::format(
            path,
            format!(
                "{} bytes, expected {rows} × {dim} × 4 = {}",
                bytes.len(),
                rows * dim * 4
            ),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite embedding value"));
    }
    Ok(if dim == 0 {
        vec![Vec::new(); rows]
    } else {
        values.chunks_exact(dim).map(<[f64]>::to_vec).collect()
    })
}

fn write_f32_rows<'a>(path: &Path, rows: impl IntoIterator<Item = &'a Vec<f64>>) -> Result<()> {
    let mut bytes = Vec::new();
    for row in rows {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl EmbeddingSet {
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(EMBEDDINGS_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: EmbeddingManifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
        let bad = |reason: String| Error::format(&mpath, reason);
        if m.dtype != "f32le" {
            return Err(bad(format!("unsupported dtype `{}`", m.dtype)));
        }
        if m.ids.len() != m.count || m.labels.len() != m.count {
            return Err(bad(format!(
                "count {} but {} ids and {} labels",
                m.count,
                m.ids.len(),
                m.labels.len()
            )));
        }
        if !(m.logit_scale > 0.0 && m.logit_scale.is_finite()) {
            return Err(bad(format!("logit_scale must be positive, got {}", m.logit_scale)));
        }
        if m.prompts.class0.is_empty() || m.prompts.class1.is_empty() {
            return Err(bad("each class needs at least one prompt".into()));
        }
        if let Some(l) = m.labels.iter().find(|&&l| l > 1) {
            return Err(bad(format!("label {l} outside {{0, 1}}")));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = m.ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(bad(format!("duplicate id `{dup}`")));
        }
        let vectors = read_f32_rows(&dir.join(VECTORS_FILE), m.count, m.dim)?;
        let n0 = m.prompts.class0.len();
        let n1 = m.prompts.class1.len();
        let mut prompt_rows = read_f32_rows(&dir.join(PROMPT_VECTORS_FILE), n0 + n1, m.dim)?;
        let rows1 = prompt_rows.split_off(n0);
        Ok(Self {
            dim: m.dim,
            ids: m.ids,
            labels: m.labels,
            vectors,
            logit_scale: m.logit_scale,
            model_id: m.model_id,
            prompts: PromptSet {
                prompts: [m.prompts.class0, m.prompts.class1],
                rows: [prompt_rows, rows1],
            },
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = EmbeddingManifest {
            dim: self.dim,
            count: self.ids.len(),
            dtype: "f32le".into(),
            logit_scale: self.logit_scale,
            model_id: self.model_id.clone(),
            ids: self.ids.clone(),
            labels: self.labels.clone(),
            prompts: PromptLists {
                class0: self.prompts.prompts[0].clone(),
                class1: self.prompts.prompts[1].clone(),
            },
        };
        let mpath = dir.join(EMBEDDINGS_FILE);
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        write_f32_rows(&dir.join(VECTORS_FILE), &self.vectors)?;
        write_f32_rows(
            &dir.join(PROMPT_VECTORS_FILE),
            self.prompts.rows[0].iter().chain(&self.prompts.rows[1]),
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Errors if any prompt row disagrees with the image embedding dimension.
    pub fn check_prompt_dims(&self) -> Result<()> {
        for (class, rows) in self.prompts.rows.iter().enumerate() {
            if let Some(r) = rows.iter().find(|r| r.len() != self.dim) {
                return Err(Error::InvalidShape(format!(
                    "class {class} prompt row has dim {}, images have {}",
                    r.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub label: u8,
    /// Unit L2 norm.
    pub vector: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean of `rows`, scaled to unit length.
pub fn build_prototype(label: u8, rows: &[Vec<f64>]) -> Result<Prototype> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("class {label} has no prompt rows")))?;
    let dim = first.len();
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::InvalidShape(format!(
            "prompt rows of class {label} mix dims {dim} and {}",
            r.len()
        )));
    }
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
    let n = norm(&mean);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegeneratePrototype { rows: rows.len() });
    }
    Ok(Prototype {
        label,
        vector: mean.into_iter().map(|m| m / n).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub sim_neg: f64,
    pub sim_pos: f64,
    pub p_pos: f64,
    /// 1 iff `sim_pos > sim_neg`; exact ties go to class 0.
    pub label: u8,
}

/// Cosine similarity to both prototypes, then `softmax(scale · [s_neg, s_pos])`.
pub fn classify(image: &[f64], prototypes: &[Prototype; 2], logit_scale: f64) -> Result<Classification> {
    let dim = prototypes[0].vector.len();
    if image.len() != dim || prototypes[1].vector.len() != dim {
        return Err(Error::InvalidShape(format!(
            "image dim {} vs prototype dims {} / {}",
            image.len(),
            dim,
            prototypes[1].vector.len()
        )));
    }
    let n = norm(image);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidInput {
            id: None,
            reason: "image embedding is the zero vector".into(),
        });
    }
    let sim_neg = dot(image, &prototypes[0].vector) / n;
    let sim_pos = dot(image, &prototypes[1].vector) / n;
    // Two-way softmax written as a logistic of the scaled margin.
    let p_pos = 1.0 / (1.0 + (-logit_scale * (sim_pos - sim_neg)).exp());
    Ok(Classification {
        sim_neg,
        sim_pos,
        p_pos,
        label: u8::from(sim_pos > sim_neg),
    })
}

pub fn score_set(set: &EmbeddingSet, prototypes: &[Prototype; 2], logit_scale: f64) -> Result<PredictionSet> {
    score_set_with(Backend::default(), set, prototypes, logit_scale)
}

pub fn score_set_with(
    backend: Backend,
    set: &EmbeddingSet,
    prototypes: &[Prototype; 2],
    logit_scale: f64,
) -> Result<PredictionSet> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let rows = backend.try_map(&idx, |&i| {
        let c = classify(&set.vectors[i], prototypes, logit_scale).map_err(|e| match e {
            Error::InvalidInput { reason, .. } => Error::InvalidInput {
                id: Some(set.ids[i].clone()),
                reason,
            },
            Error::InvalidShape(reason) => Error::InvalidInput {
                id: Some(set.ids[i].clone()),
                reason,
            },
            other => other,
        })?;
        Ok(Prediction {
            id: set.ids[i].clone(),
            p_pos: c.p_pos,
            predicted: c.label,
            truth: set.labels[i],
        })
    })?;
    Ok(PredictionSet::new(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthogonal() -> [Prototype; 2] {
        [
            build_prototype(0, &[vec![1.0, 0.0]]).unwrap(),
            build_prototype(1, &[vec![0.0, 1.0]]).unwrap(),
        ]
    }

    #[test]
    fn prototype_is_normalized_mean() {
        let p = build_prototype(1, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        for v in &p.vector {
            assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        }
        let p = build_prototype(0, &[vec![3.0, 4.0]]).unwrap();
        assert_eq!(p.vector, vec![0.6, 0.8]);
        assert!((norm(&p.vector) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn opposite_rows_are_degenerate() {
        assert!(matches!(
            build_prototype(0, &[vec![1.0, 0.0], vec![-1.0, 0.0]]),
            Err(Error::DegeneratePrototype { rows: 2 })
        ));
    }

    #[test]
    fn classify_hand_softmax() {
        let c = classify(&[0.0, 1.0], &orthogonal(), 1.0).unwrap();
        assert_eq!((c.sim_neg, c.sim_pos), (0.0, 1.0));
        let e = std::f64::consts::E;
        assert!((c.p_pos - e / (1.0 + e)).abs() < 1e-12);
        assert!((c.p_pos - 0.7311).abs() < 1e-4);
        assert_eq!(c.label, 1);
    }

    #[test]
    fn equidistant_image_is_a_tie_going_negative() {
        let c = classify(&[1.0, 1.0], &orthogonal(), 4.6).unwrap();
        assert_eq!(c.p_pos, 0.5);
        assert_eq!(c.label, 0);
    }

    #[test]
    fn larger_scale_sharpens_without_changing_label() {
        let img = [0.4, 0.6];
        let lo = classify(&img, &orthogonal(), 1.0).unwrap();
        let hi = classify(&img, &orthogonal(), 100.0).unwrap();
        assert!(hi.p_pos > lo.p_pos);
        assert!(hi.p_pos > 0.99);
        assert_eq!(lo.label, hi.label);
    }

    #[test]
    fn zero_image_is_rejected() {
        assert!(matches!(
            classify(&[0.0, 0.0], &orthogonal(), 1.0),
            Err(Error::InvalidInput { .. })
        ));
    }

    fn set_of(vectors: Vec<Vec<f64>>) -> EmbeddingSet {
        let n = vectors.len();
        EmbeddingSet {
            dim: 2,
            ids: (0..n).map(|i| format!("s{i}")).collect(),
            labels: (0..n).map(|i| (i % 2) as u8).collect(),
            vectors,
            logit_scale: 1.0,
            model_id: "unit".into(),
            prompts: PromptSet {
                prompts: [vec!["normal".into()], vec!["abnormal".into()]],
                rows: [vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            },
        }
    }

    #[test]
    fn score_set_preserves_order_and_attaches_ids_to_errors() {
        let empty = score_set(&set_of(vec![]), &orthogonal(), 1.0).unwrap();
        assert!(empty.is_empty());

        let one = score_set(&set_of(vec![vec![0.0, 1.0]]), &orthogonal(), 1.0).unwrap();
        assert_eq!(one.rows[0].predicted, 1);

        let err = score_set(&set_of(vec![vec![1.0, 0.0], vec![0.0, 0.0]]), &orthogonal(), 1.0).unwrap_err();
        assert!(err.to_string().contains("s1"), "{err}");
    }

    #[test]
    fn embedding_set_roundtrips_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let set = set_of(vec![vec![0.25, -1.5], vec![2.0, 0.5]]);
        set.save(dir.path()).unwrap();
        let back = EmbeddingSet::load(dir.path()).unwrap();
        assert_eq!(back, set);

        fs::write(dir.path().join(VECTORS_FILE), [0u8; 12]).unwrap();
        assert!(EmbeddingSet::load(dir.path()).is_err());
    }

    #[test]
    fn missing_logit_scale_defaults_to_one() {
        let dir = tempfile::tempdir().unwrap();
        set_of(vec![vec![1.0, 2.0]]).save(dir.path()).unwrap();
        let p = dir.path().join(EMBEDDINGS_FILE);
        let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        json.as_object_mut().unwrap().remove("logit_scale");
        fs::write(&p, json.to_string()).unwrap();
        assert_eq!(EmbeddingSet::load(dir.path()).unwrap().logit_scale, 1.0);
    }
}
