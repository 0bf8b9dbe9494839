use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cxr_core::checkpoint::Checkpoint;
use cxr_core::data::{DatasetBundle, Record, Split};
use cxr_core::gradcam::read_ppm;
use cxr_core::nn::CnnModel;
use cxr_core::synth::{synthetic_embeddings, SynthEmbeddingConfig};
use tempfile::TempDir;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cxr-bench"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth_split_bundle(dir: &Path, n: usize) {
    let n = n.to_string();
    assert_eq!(
        code(&cli(&[
            "synth",
            "bundle",
            "--negatives",
            &n,
            "--positives",
            &n,
            "--out",
            p(dir)
        ])),
        0
    );
    assert_eq!(code(&cli(&["split", "--bundle", p(dir)])), 0);
}

fn fresh_checkpoint(path: &Path) {
    Checkpoint::new(CnnModel::new(0), 0, 0, 0.5, None).save(path).unwrap();
}

/// Class counts of the 662-image tuberculosis set: 326 normal, 336 abnormal.
fn tb_sized_bundle(dir: &Path) {
    let records: Vec<Record> = (0..662)
        .map(|i| Record {
            id: format!("CHNCXR_{i:04}_{}", u8::from(i >= 326)),
            label: u8::from(i >= 326),
            split: Split::Unassigned,
        })
        .collect();
    DatasetBundle::new("tb", 64, 64, records, vec![0; 662 * 64 * 64])
        .unwrap()
        .save(dir)
        .unwrap();
}

#[test]
fn split_gives_expected_sizes_and_refuses_resplit() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    tb_sized_bundle(&a);
    tb_sized_bundle(&b);
    for dir in [&a, &b] {
        let out = cli(&["split", "--bundle", p(dir), "--seed", "42"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let bundle = DatasetBundle::load(&a).unwrap();
    assert_eq!(bundle.split_counts(), [396, 65, 201, 0]);
    assert_eq!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );

    let again = cli(&["split", "--bundle", p(&a), "--seed", "42"]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("re-split"));
}

#[test]
fn train_refuses_zero_epochs() {
    let tmp = TempDir::new().unwrap();
    synth_split_bundle(&tmp.path().join("b"), 10);
    let out = cli(&[
        "train",
        "--bundle",
        p(&tmp.path().join("b")),
        "--epochs",
        "0",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("checkpoint.xrb").exists());
}

#[test]
fn diverging_training_exits_with_numeric_code() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    synth_split_bundle(&bundle, 10);
    let out = cli(&[
        "train",
        "--bundle",
        p(&bundle),
        "--epochs",
        "3",
        "--batch-size",
        "4",
        "--lr",
        "1e30",
        "--out",
        p(&tmp.path().join("run")),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn train_writes_log_and_loadable_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    let run = tmp.path().join("run");
    synth_split_bundle(&bundle, 12);
    let out = cli(&[
        "train",
        "--bundle",
        p(&bundle),
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--out",
        p(&run),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_auc");
    assert_eq!(lines.len(), 3);
    let ckpt = Checkpoint::load(&run.join("checkpoint.xrb")).unwrap();
    assert!((1..=2).contains(&ckpt.header.epoch));
}

#[test]
fn eval_of_untrained_checkpoint_is_near_chance() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    synth_split_bundle(&bundle, 60);
    let ckpt = tmp.path().join("fresh.xrb");
    fresh_checkpoint(&ckpt);
    let out_dir = tmp.path().join("eval");
    let out = cli(&[
        "eval-cnn",
        "--checkpoint",
        p(&ckpt),
        "--bundle",
        p(&bundle),
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let auc = report["roc_auc"].as_f64().unwrap();
    assert!((0.3..=0.7).contains(&auc), "untrained AUC {auc}");
    assert_eq!(report["n"], 36);
    let csv = fs::read_to_string(out_dir.join("predictions.csv")).unwrap();
    assert!(csv.starts_with("id,p1,pred,truth\n"));
    assert_eq!(csv.lines().count(), 37);
    assert!(fs::read_to_string(out_dir.join("roc.csv"))
        .unwrap()
        .starts_with("fpr,tpr,threshold\n"));
}

#[test]
fn eval_rejects_foreign_checkpoint_with_usage_code() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    synth_split_bundle(&bundle, 5);
    let bogus = tmp.path().join("bogus.xrb");
    fs::write(&bogus, b"XRB1\x02\x00\x00\x00{}").unwrap();
    let out = cli(&[
        "eval-cnn",
        "--checkpoint",
        p(&bogus),
        "--bundle",
        p(&bundle),
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(code(&out), 2);
    let missing = cli(&[
        "eval-cnn",
        "--checkpoint",
        "/nonexistent.xrb",
        "--bundle",
        p(&bundle),
        "--out",
        "x",
    ]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn unwritable_output_is_an_io_failure() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    synth_split_bundle(&bundle, 5);
    let ckpt = tmp.path().join("fresh.xrb");
    fresh_checkpoint(&ckpt);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let out = cli(&[
        "eval-cnn",
        "--checkpoint",
        p(&ckpt),
        "--bundle",
        p(&bundle),
        "--out",
        p(&blocker.join("sub")),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn gradcam_emits_one_p6_per_id_and_lists_unknown_ids() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    synth_split_bundle(&bundle, 3);
    let ckpt = tmp.path().join("fresh.xrb");
    fresh_checkpoint(&ckpt);
    let cam = tmp.path().join("cam");

    let one = cli(&[
        "gradcam",
        "--checkpoint",
        p(&ckpt),
        "--bundle",
        p(&bundle),
        "--ids",
        "syn-00002",
        "--out",
        p(&cam),
    ]);
    assert_eq!(code(&one), 0, "{}", stderr(&one));
    let files: Vec<_> = fs::read_dir(&cam).unwrap().collect();
    assert_eq!(files.len(), 1);
    let (w, h, rgb) = read_ppm(&cam.join("syn-00002.ppm")).unwrap();
    assert_eq!((w, h, rgb.len()), (64, 64, 64 * 64 * 3));

    let empty_dir = tmp.path().join("none");
    let none = cli(&[
        "gradcam",
        "--checkpoint",
        p(&ckpt),
        "--bundle",
        p(&bundle),
        "--ids",
        "",
        "--out",
        p(&empty_dir),
    ]);
    assert_eq!(code(&none), 0);
    assert!(!empty_dir.exists() || fs::read_dir(&empty_dir).unwrap().next().is_none());

    let bad = cli(&[
        "gradcam",
        "--checkpoint",
        p(&ckpt),
        "--bundle",
        p(&bundle),
        "--ids",
        "syn-00000,ghost,phantom",
        "--out",
        p(&tmp.path().join("bad")),
    ]);
    assert_eq!(code(&bad), 2);
    let msg = stderr(&bad);
    assert!(
        msg.contains("ghost") && msg.contains("phantom") && !msg.contains("syn-00000"),
        "{msg}"
    );
    assert!(!tmp.path().join("bad").exists());
}

fn embeddings(dir: &Path, seed: u64) {
    synthetic_embeddings(&SynthEmbeddingConfig {
        count: 120,
        seed,
        ..Default::default()
    })
    .save(dir)
    .unwrap();
}

#[test]
fn zeroshot_calibrated_emits_both_reports_with_identical_auc() {
    let tmp = TempDir::new().unwrap();
    let (test, val, out_dir) = (tmp.path().join("t"), tmp.path().join("v"), tmp.path().join("o"));
    embeddings(&test, 1);
    embeddings(&val, 2);
    let out = cli(&[
        "zeroshot",
        "--embeddings",
        p(&test),
        "--mode",
        "calibrated",
        "--val-embeddings",
        p(&val),
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let read =
        |n: &str| -> serde_json::Value { serde_json::from_str(&fs::read_to_string(out_dir.join(n)).unwrap()).unwrap() };
    let (argmax, cal, tau) = (
        read("report_argmax.json"),
        read("report_calibrated.json"),
        read("calibration.json"),
    );
    assert_eq!(argmax["roc_auc"], cal["roc_auc"]);
    assert_eq!(cal["threshold"], tau["tau_star"]);
    assert_eq!(argmax["threshold"], 0.5);
    for key in ["tau_star", "best_f1_val", "grid"] {
        assert!(tau.get(key).is_some(), "missing {key}");
    }
    let curve = fs::read_to_string(out_dir.join("calibration_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 962);
}

#[test]
fn zeroshot_argmax_needs_no_validation_set() {
    let tmp = TempDir::new().unwrap();
    let test = tmp.path().join("t");
    embeddings(&test, 1);
    let out = cli(&["zeroshot", "--embeddings", p(&test), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(tmp.path().join("o/report_argmax.json").exists());
    assert!(!tmp.path().join("o/calibration.json").exists());

    let needs_val = cli(&[
        "zeroshot",
        "--embeddings",
        p(&test),
        "--mode",
        "calibrated",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(code(&needs_val), 2);
}

#[test]
fn zeroshot_dim_mismatch_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let test = tmp.path().join("t");
    let mut set = synthetic_embeddings(&SynthEmbeddingConfig::default());
    for row in &mut set.prompts.rows[1] {
        row.push(0.0);
    }
    set.save(&test).unwrap();
    // The manifest records one `dim`, so longer prompt rows surface as a
    // prompt file of the wrong size.
    let out = cli(&["zeroshot", "--embeddings", p(&test), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synthetic_embeddings(&SynthEmbeddingConfig {
        dim: 16,
        ..Default::default()
    })
    .save(&a)
    .unwrap();
    synthetic_embeddings(&SynthEmbeddingConfig {
        dim: 8,
        ..Default::default()
    })
    .save(&b)
    .unwrap();
    let mixed = cli(&[
        "zeroshot",
        "--embeddings",
        p(&a),
        "--mode",
        "calibrated",
        "--val-embeddings",
        p(&b),
        "--out",
        p(&tmp.path().join("o2")),
    ]);
    assert_eq!(code(&mixed), 2, "{}", stderr(&mixed));
}

#[test]
fn bad_grid_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let test = tmp.path().join("t");
    embeddings(&test, 1);
    let out = cli(&[
        "zeroshot",
        "--embeddings",
        p(&test),
        "--grid-lo",
        "0.9",
        "--grid-hi",
        "0.1",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&cli(&["no-such-command"])), 2);
}
