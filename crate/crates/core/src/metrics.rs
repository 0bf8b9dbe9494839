//! Accuracy, binary F1 and rank-based ROC AUC.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    /// Probability of the positive class.
    pub p_pos: f64,
    pub predicted: u8,
    pub truth: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    pub rows: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(rows: Vec<Prediction>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.p_pos).collect()
    }

    pub fn truths(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.truth).collect()
    }

    pub fn predicted(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.predicted).collect()
    }

    /// Same probabilities and truths with replaced predicted labels.
    pub fn with_predictions(&self, predicted: &[u8]) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .zip(predicted)
                .map(|(r, &p)| Prediction {
                    predicted: p,
                    ..r.clone()
                })
                .collect(),
        }
    }

    /// `id,p1,pred,truth` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,p1,pred,truth\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.6},{},{}\n", r.id, r.p_pos, r.predicted, r.truth));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[u8], truth: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p == 1, t == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.n() as f64
    }

    /// `2TP / (2TP + FP + FN)`, 0 when the denominator is 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

fn nonempty(n: usize, what: &str) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidArgument(format!("{what} of an empty prediction set")))
    } else {
        Ok(())
    }
}

pub fn accuracy(preds: &PredictionSet) -> Result<f64> {
    nonempty(preds.len(), "accuracy")?;
    let correct = preds.rows.iter().filter(|r| r.predicted == r.truth).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// F1 for the class `positive`.
pub fn f1_binary(preds: &PredictionSet, positive: u8) -> Result<f64> {
    nonempty(preds.len(), "F1")?;
    let pred: Vec<u8> = preds.rows.iter().map(|r| u8::from(r.predicted == positive)).collect();
    let truth: Vec<u8> = preds.rows.iter().map(|r| u8::from(r.truth == positive)).collect();
    Ok(Confusion::from_labels(&pred, &truth).f1())
}

/// Mann–Whitney ROC AUC with average ranks for tied scores:
/// `(Σ ranks of positives − P(P+1)/2) / (P·N)`.
pub fn roc_auc(scores: &[f64], truths: &[u8]) -> Result<f64> {
    if scores.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores vs {} labels",
            scores.len(),
            truths.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = truths.iter().filter(|&&t| t == 1).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are 1-based; a tie group at sorted positions i..j gets (i+1+j)/2.
    // Sums of half-integers stay exact in f64 for any realistic n.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]) == Ordering::Equal {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let positives = order[i..j].iter().filter(|&&k| truths[k] == 1).count();
        pos_rank_sum += avg_rank * positives as f64;
        i = j;
    }
    let p = n_pos as f64;
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC curve with one point per distinct score (descending), starting at
/// `(0, 0, +inf)`.
pub fn roc_curve(scores: &[f64], truths: &[u8]) -> Result<Vec<RocPoint>> {
    let n_pos = truths.iter().filter(|&&t| t == 1).count();
    let n_neg = truths.len() - n_pos;
    if scores.len() != truths.len() || n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC curve needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truths[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: s,
        });
    }
    Ok(points)
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("fpr,tpr,threshold\n");
    for p in points {
        s.push_str(&format!("{:.6},{:.6},{}\n", p.fpr, p.tpr, p.threshold));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub f1: f64,
    pub roc_auc: f64,
    pub confusion: Confusion,
    pub n: usize,
    pub threshold: f64,
}

impl MetricsReport {
    /// ACC/F1 from the predicted labels already in `preds`; AUC from the
    /// raw probabilities.
    pub fn from_predictions(preds: &PredictionSet, threshold: f64) -> Result<Self> {
        nonempty(preds.len(), "report")?;
        let confusion = Confusion::from_labels(&preds.predicted(), &preds.truths());
        Ok(Self {
            acc: confusion.accuracy(),
            f1: confusion.f1(),
            roc_auc: roc_auc(&preds.scores(), &preds.truths())?,
            confusion,
            n: preds.len(),
            threshold,
        })
    }
}
