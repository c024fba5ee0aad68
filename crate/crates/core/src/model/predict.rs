use super::checkpoint::{ModelCheckpoint, Precision};
use super::loss::PROB_EPSILON;
use super::network::forward;
use super::params::Params;
use super::PredictionVector;
use crate::error::{Error, Result};
use crate::features::{encode, FeatureSequence, Vocabulary};
use crate::math::Real;
use crate::record::PatientRecord;

/// Dropout-free probabilities, clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]`.
pub fn predict_sequences<F: Real>(params: &Params<F>, sequences: &[FeatureSequence]) -> Result<Vec<PredictionVector>> {
    let probs = forward(params, sequences, None)?;
    Ok(probs
        .into_iter()
        .map(|row| {
            let mut out = [0.0; super::NUM_TASKS];
            for (o, p) in out.iter_mut().zip(row) {
                *o = p.to_f64().unwrap_or(f64::NAN).clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
            }
            out
        })
        .collect())
}

/// Encodes `records` against `vocab` and scores them with the checkpoint,
/// in the precision the checkpoint was trained in.
pub fn predict(
    checkpoint: &ModelCheckpoint,
    records: &[PatientRecord],
    vocab: &Vocabulary,
) -> Result<Vec<PredictionVector>> {
    if vocab.size() != checkpoint.meta.vocab_size || vocab.fingerprint() != checkpoint.meta.vocab_fingerprint {
        return Err(Error::VocabularyMismatch(format!(
            "checkpoint expects a vocabulary of size {} with fingerprint {}, got size {} with fingerprint {}",
            checkpoint.meta.vocab_size,
            checkpoint.meta.vocab_fingerprint,
            vocab.size(),
            vocab.fingerprint()
        )));
    }
    let sequences: Vec<FeatureSequence> = records.iter().map(|r| encode(r, vocab)).collect();
    match checkpoint.meta.precision {
        Precision::Single => predict_sequences(&checkpoint.params.cast::<f32>(), &sequences),
        Precision::Double => predict_sequences(&checkpoint.params, &sequences),
    }
}
