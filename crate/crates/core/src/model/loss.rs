use super::{LabelRow, NUM_TASKS};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]` before
/// taking logarithms.
pub const PROB_EPSILON: f64 = 1e-7;

pub(crate) fn bce_term(p: f64, y: bool) -> f64 {
    let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Binary cross-entropy summed over tasks and samples.
pub fn multilabel_bce(probs: &[[f64; NUM_TASKS]], labels: &[LabelRow]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows but {} label rows",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (p, y) in probs.iter().zip(labels) {
        for (pj, yj) in p.iter().zip(y) {
            if !pj.is_finite() {
                return Err(Error::Numeric("non-finite probability".into()));
            }
            total += bce_term(*pj, *yj);
        }
    }
    Ok(total)
}
