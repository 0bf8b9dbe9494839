use std::fs;
use std::path::{Path, PathBuf};

use cxr_core::calibrate::{calibrated_report, sweep};
use cxr_core::checkpoint::Checkpoint;
use cxr_core::data::{normalize, stratified_split, AugmentConfig, DatasetBundle, Split, SplitRatios};
use cxr_core::gradcam::{emit_overlay, gradcam as gradcam_map};
use cxr_core::metrics::{roc_csv, roc_curve, MetricsReport, PredictionSet};
use cxr_core::optim::AdamWConfig;
use cxr_core::synth::{synthetic_bundle, synthetic_embeddings, SynthBundleConfig, SynthEmbeddingConfig};
use cxr_core::train::{predict, train_with_progress, TrainConfig};
use cxr_core::zeroshot::{score_set, EmbeddingSet};
use cxr_core::{Backend, Error, Result};

use crate::{GradcamArgs, Mode, SynthCommand, TrainArgs, ZeroshotArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.xrb";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} `{}` does not exist",
            path.display()
        )))
    }
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json serializes");
    s.push('\n');
    s
}

fn report_json(report: &MetricsReport) -> String {
    pretty(&serde_json::to_value(report).expect("report serializes"))
}

fn summary(label: &str, r: &MetricsReport) {
    println!(
        "{label}: n={} acc={:.4} f1={:.4} auc={:.4} (threshold {})",
        r.n, r.acc, r.f1, r.roc_auc, r.threshold
    );
}

pub fn split(bundle_dir: &Path, ratios: &[f64], seed: u64) -> Result<()> {
    require_exists(bundle_dir, "bundle")?;
    let mut bundle = DatasetBundle::load(bundle_dir)?;
    if bundle.is_split() {
        return Err(Error::InvalidState(format!(
            "bundle `{}` already has split assignments; refusing to re-split",
            bundle_dir.display()
        )));
    }
    let ratios = SplitRatios {
        train: ratios[0],
        val: ratios[1],
        test: ratios[2],
    };
    stratified_split(&mut bundle.manifest.records, ratios, seed)?;
    bundle.write_manifest(bundle_dir)?;
    let [train, val, test, _] = bundle.split_counts();
    println!("split {} records: train {train}, val {val}, test {test}", bundle.len());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    require_exists(&a.bundle, "bundle")?;
    let bundle = DatasetBundle::load(&a.bundle)?;
    let optim = AdamWConfig {
        lr: a.lr,
        weight_decay: a.weight_decay,
        ..Default::default()
    };
    optim.validate()?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        optim,
        augment: if a.no_augment {
            AugmentConfig::identity()
        } else {
            AugmentConfig::default()
        },
        backend: Backend::default(),
    };
    let outcome = train_with_progress(&bundle, &config, |e| {
        eprintln!(
            "epoch {}/{}  train_loss {:.4}  val_auc {:.4}",
            e.epoch, config.epochs, e.train_loss, e.val_auc
        );
    })?;
    write(&a.out, TRAIN_LOG_FILE, outcome.log_csv())?;
    let path = write(&a.out, CHECKPOINT_FILE, outcome.best.to_bytes())?;
    println!(
        "best epoch {} (val AUC {:.4}) saved to {}",
        outcome.best.header.epoch,
        outcome.best.header.val_auc,
        path.display()
    );
    Ok(())
}

fn write_eval_outputs(out: &Path, suffix: &str, report: &MetricsReport, preds: &PredictionSet) -> Result<()> {
    write(out, &format!("report{suffix}.json"), report_json(report))?;
    write(out, &format!("predictions{suffix}.csv"), preds.to_csv())?;
    Ok(())
}

pub fn eval_cnn(checkpoint: &Path, bundle_dir: &Path, split: Split, out: &Path) -> Result<()> {
    require_exists(checkpoint, "checkpoint")?;
    require_exists(bundle_dir, "bundle")?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let bundle = DatasetBundle::load(bundle_dir)?;
    let idx = bundle.indices(split);
    if idx.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "split {split:?} of the bundle is empty"
        )));
    }
    let preds = predict(&ckpt.model, &bundle, &idx, Backend::default())?;
    let report = MetricsReport::from_predictions(&preds, 0.5)?;
    write_eval_outputs(out, "", &report, &preds)?;
    write(out, "roc.csv", roc_csv(&roc_curve(&preds.scores(), &preds.truths())?))?;
    summary("cnn", &report);
    Ok(())
}

fn load_embeddings(path: &Path, what: &str) -> Result<EmbeddingSet> {
    require_exists(path, what)?;
    let set = EmbeddingSet::load(path)?;
    set.check_prompt_dims()?;
    Ok(set)
}

pub fn zeroshot(a: &ZeroshotArgs) -> Result<()> {
    let grid = a.grid.grid();
    grid.validate()?;
    if a.mode == Mode::Calibrated && a.val_embeddings.is_none() {
        return Err(Error::InvalidArgument(
            "calibrated mode requires --val-embeddings".into(),
        ));
    }
    if let Some(s) = a.logit_scale {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("logit scale must be positive, got {s}")));
        }
    }
    let test = load_embeddings(&a.embeddings, "embeddings")?;
    let scale = a.logit_scale.unwrap_or(test.logit_scale);
    let prototypes = test.prompts.prototypes()?;

    let preds = score_set(&test, &prototypes, scale)?;
    let argmax = MetricsReport::from_predictions(&preds, 0.5)?;
    write_eval_outputs(&a.out, "_argmax", &argmax, &preds)?;
    write(
        &a.out,
        "roc.csv",
        roc_csv(&roc_curve(&preds.scores(), &preds.truths())?),
    )?;
    summary("argmax", &argmax);

    if let Some(val_path) = &a.val_embeddings {
        if a.mode == Mode::Calibrated {
            let val = load_embeddings(val_path, "validation embeddings")?;
            if val.dim != test.dim {
                return Err(Error::InvalidShape(format!(
                    "validation embeddings have dim {}, test embeddings {}",
                    val.dim, test.dim
                )));
            }
            let val_preds = score_set(&val, &prototypes, scale)?;
            let cal = sweep(&val_preds.scores(), &val_preds.truths(), &grid)?;
            write(
                &a.out,
                "calibration.json",
                pretty(&serde_json::to_value(&cal).expect("serializes")),
            )?;
            write(&a.out, "calibration_curve.csv", cal.curve_csv())?;
            let (report, relabeled) = calibrated_report(&preds, cal.tau_star)?;
            write_eval_outputs(&a.out, "_calibrated", &report, &relabeled)?;
            println!("tau* = {} (validation F1 {:.4})", cal.tau_star, cal.best_f1_val);
            summary("calibrated", &report);
        }
    }
    Ok(())
}

/// Keeps ids usable as file names.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn gradcam(a: &GradcamArgs) -> Result<()> {
    require_exists(&a.checkpoint, "checkpoint")?;
    require_exists(&a.bundle, "bundle")?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let bundle = DatasetBundle::load(&a.bundle)?;
    bundle.require_cnn_frames()?;
    let ids: Vec<&String> = a.ids.iter().filter(|s| !s.is_empty()).collect();
    let unknown: Vec<&str> = ids
        .iter()
        .filter(|id| bundle.index_of(id).is_none())
        .map(|s| s.as_str())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::InvalidArgument(format!("unknown ids: {}", unknown.join(", "))));
    }
    for id in ids {
        let frame = bundle.frame(bundle.index_of(id).expect("checked above"));
        let map = gradcam_map(&ckpt.model, &normalize(frame)?, a.target_class)?;
        fs::create_dir_all(&a.out).map_err(|e| Error::Io {
            path: a.out.clone(),
            source: e,
        })?;
        let path = a.out.join(format!("{}.ppm", file_stem(id)));
        emit_overlay(frame, &map, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn synth(cmd: &SynthCommand) -> Result<()> {
    match *cmd {
        SynthCommand::Bundle {
            negatives,
            positives,
            seed,
            ref out,
        } => {
            let b = synthetic_bundle(&SynthBundleConfig {
                negatives,
                positives,
                seed,
                ..Default::default()
            })?;
            b.save(out)?;
            println!("wrote {} records to {}", b.len(), out.display());
        }
        SynthCommand::Embeddings {
            count,
            dim,
            seed,
            ref out,
        } => {
            if dim == 0 {
                return Err(Error::InvalidArgument("dim must be at least 1".into()));
            }
            let e = synthetic_embeddings(&SynthEmbeddingConfig {
                count,
                dim,
                seed,
                ..Default::default()
            });
            e.save(out)?;
            println!("wrote {} embeddings to {}", e.len(), out.display());
        }
    }
    Ok(())
}
