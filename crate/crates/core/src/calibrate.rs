//! Decision-threshold calibration: pick the grid threshold that maximizes F1
//! on validation probabilities, then apply it to held-out predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Backend;
use crate::metrics::{Confusion, MetricsReport, PredictionSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self {
            lo: 0.02,
            hi: 0.98,
            step: 0.001,
        }
    }
}

/// Snaps grid arithmetic back onto the nearest 12-decimal value, so e.g. the
/// 331st point above 0.02 is exactly the double nearest 0.351.
fn snap(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

impl ThresholdGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < 1.0 && self.step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold grid needs 0 < lo < hi < 1 and step > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `lo, lo+step, …` up to `hi`; `hi` is appended if the step does not land on it.
    pub fn points(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        let mut pts: Vec<f64> = (0..=n).map(|i| snap(self.lo + i as f64 * self.step)).collect();
        if *pts.last().unwrap() < self.hi {
            if self.hi - pts.last().unwrap() < self.step * 1e-6 {
                pts.pop();
            }
            pts.push(self.hi);
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tau_star: f64,
    pub best_f1_val: f64,
    pub grid: ThresholdGrid,
    #[serde(skip)]
    pub curve: Vec<(f64, f64)>,
}

impl CalibrationResult {
    /// `threshold,f1` rows.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("threshold,f1\n");
        for (t, f) in &self.curve {
            s.push_str(&format!("{t:.3},{f:.6}\n"));
        }
        s
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold {tau} outside (0, 1)")))
    }
}

/// `1{p ≥ τ}`.
pub fn apply_threshold(probs: &[f64], tau: f64) -> Result<Vec<u8>> {
    check_tau(tau)?;
    Ok(probs.iter().map(|&p| u8::from(p >= tau)).collect())
}

pub fn sweep(probs: &[f64], labels: &[u8], grid: &ThresholdGrid) -> Result<CalibrationResult> {
    sweep_with(Backend::default(), probs, labels, grid)
}

/// Evaluates F1 at every grid threshold. `tau_star` is the smallest
/// threshold attaining the maximum.
pub fn sweep_with(backend: Backend, probs: &[f64], labels: &[u8], grid: &ThresholdGrid) -> Result<CalibrationResult> {
    if probs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::UndefinedCalibration(format!(
            "validation labels must contain both classes ({n_pos} of {} positive)",
            labels.len()
        )));
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::InvalidArgument("NaN probability".into()));
    }
    let points = grid.points()?;

    // Sorted probabilities with a running count of positives at or above each
    // position: TP(τ) and predicted-positive(τ) become one binary search.
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| probs[i]).collect();
    let mut pos_suffix = vec![0usize; sorted.len() + 1];
    for k in (0..sorted.len()).rev() {
        pos_suffix[k] = pos_suffix[k + 1] + usize::from(labels[order[k]] == 1);
    }
    let n = probs.len();
    let f1s = backend.map(&points, |&tau| {
        let first = sorted.partition_point(|&p| p < tau);
        let tp = pos_suffix[first];
        let predicted_pos = n - first;
        let c = Confusion {
            tp,
            fp: predicted_pos - tp,
            fn_: n_pos - tp,
            tn: first - (n_pos - tp),
        };
        c.f1()
    });

    let mut best = 0;
    for (i, &f) in f1s.iter().enumerate() {
        if f > f1s[best] {
            best = i;
        }
    }
    Ok(CalibrationResult {
        tau_star: points[best],
        best_f1_val: f1s[best],
        grid: *grid,
        curve: points.into_iter().zip(f1s).collect(),
    })
}

/// ACC/F1 with labels re-derived at `tau_star`; AUC from the untouched
/// probabilities.
pub fn calibrated_report(preds: &PredictionSet, tau_star: f64) -> Result<(MetricsReport, PredictionSet)> {
    let labels = apply_threshold(&preds.scores(), tau_star)?;
    let relabeled = preds.with_predictions(&labels);
    Ok((MetricsReport::from_predictions(&relabeled, tau_star)?, relabeled))
}
