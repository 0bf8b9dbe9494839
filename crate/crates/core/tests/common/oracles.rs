//! Brute-force reference implementations used by the property and
//! acceptance suites. Deliberately naive: quadratic loops, no sorting.

#![allow(dead_code)]

/// ROC AUC by counting every (positive, negative) pair, ties as ½.
pub fn pair_auc(scores: &[f64], truths: &[u8]) -> f64 {
    let mut twice_wins = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if truths[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if truths[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                twice_wins += 2;
            } else if si == sj {
                twice_wins += 1;
            }
        }
    }
    twice_wins as f64 / 2.0 / pairs as f64
}

pub fn f1_at(probs: &[f64], labels: &[u8], tau: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= tau, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

pub struct BruteCalibration {
    pub best_f1: f64,
    /// Infimum of the smallest optimal threshold interval; `None` when the
    /// optimum is "everything positive" (any threshold at or below the minimum).
    pub lower: Option<f64>,
    /// Midpoint threshold achieving `best_f1`.
    pub midpoint: f64,
}

/// Evaluates F1 at a threshold below the minimum, at every midpoint between
/// consecutive distinct probabilities, and above the maximum.
pub fn brute_calibration(probs: &[f64], labels: &[u8]) -> BruteCalibration {
    let mut values: Vec<f64> = probs.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut candidates = vec![(values[0] - 1.0, None)];
    for w in values.windows(2) {
        candidates.push(((w[0] + w[1]) / 2.0, Some(w[0])));
    }
    candidates.push((values[values.len() - 1] + 1.0, values.last().copied()));
    let mut best = BruteCalibration {
        best_f1: -1.0,
        lower: None,
        midpoint: 0.0,
    };
    for (t, lower) in candidates {
        let f = f1_at(probs, labels, t);
        if f > best.best_f1 {
            best = BruteCalibration {
                best_f1: f,
                lower,
                midpoint: t,
            };
        }
    }
    best
}
