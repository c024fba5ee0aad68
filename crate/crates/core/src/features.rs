//! Hour-binned sparse encoding of the observation window.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::record::PatientRecord;

/// Index reserved for codes not seen in training.
pub const OOV_INDEX: u32 = 0;

/// Observation window and bin width, in hours.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub hours: f64,
    pub bin_hours: f64,
}

impl Default for Window {
    fn default() -> Self {
        Window {
            hours: 24.0,
            bin_hours: 1.0,
        }
    }
}

impl Window {
    pub fn num_bins(&self) -> usize {
        (self.hours / self.bin_hours).ceil() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub index: u32,
    pub mean: f64,
    pub std: f64,
}

/// Code → index map with per-code value statistics, built from the
/// training split only.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    entries: BTreeMap<String, VocabEntry>,
    lookup: HashMap<String, VocabEntry>,
    window: Window,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    oov_index: u32,
    size: usize,
    window: Window,
    codes: BTreeMap<String, VocabEntry>,
}

impl Vocabulary {
    /// Lexicographic index assignment starting at 1. Statistics come from
    /// valued events inside the window; constant or valueless codes get
    /// `std = 1`.
    pub fn build(train_records: &[PatientRecord], window: Window) -> Result<Self> {
        if train_records.is_empty() {
            return Err(Error::config("vocabulary", "training set is empty"));
        }
        // (count, sum, sum of squares) per code.
        let mut stats: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
        for record in train_records {
            for event in record.window(window.hours) {
                let slot = stats.entry(&event.code).or_default();
                if let Some(v) = event.value {
                    slot.0 += 1;
                    slot.1 += v;
                    slot.2 += v * v;
                }
            }
        }
        let entries = stats
            .into_iter()
            .enumerate()
            .map(|(i, (code, (n, sum, sq)))| {
                let (mean, std) = if n == 0 {
                    (0.0, 1.0)
                } else {
                    let mean = sum / n as f64;
                    let var = (sq / n as f64 - mean * mean).max(0.0);
                    let std = var.sqrt();
                    (mean, if std > 1e-9 * mean.abs().max(1.0) { std } else { 1.0 })
                };
                (
                    code.to_string(),
                    VocabEntry {
                        index: i as u32 + 1,
                        mean,
                        std,
                    },
                )
            })
            .collect();
        Ok(Self::from_entries(entries, window))
    }

    fn from_entries(entries: BTreeMap<String, VocabEntry>, window: Window) -> Self {
        let lookup = entries.iter().map(|(k, v)| (k.clone(), *v)).collect();
        Vocabulary {
            entries,
            lookup,
            window,
        }
    }

    /// Number of embedding rows: known codes plus the OOV row.
    pub fn size(&self) -> usize {
        self.entries.len() + 1
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn get(&self, code: &str) -> Option<&VocabEntry> {
        self.lookup.get(code)
    }

    pub fn entries(&self) -> &BTreeMap<String, VocabEntry> {
        &self.entries
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            oov_index: OOV_INDEX,
            size: self.size(),
            window: self.window,
            codes: self.entries.clone(),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text).map_err(|e| Error::json("vocabulary", e))?;
        let mut seen: Vec<u32> = file.codes.values().map(|e| e.index).collect();
        seen.sort_unstable();
        let contiguous = seen.iter().enumerate().all(|(i, idx)| *idx == i as u32 + 1);
        if file.oov_index != OOV_INDEX || file.size != file.codes.len() + 1 || !contiguous {
            return Err(Error::VocabularyMismatch(
                "indices must be contiguous from 1 with OOV at 0".into(),
            ));
        }
        Ok(Self::from_entries(file.codes, file.window))
    }

    /// SHA-256 of the serialized vocabulary; checkpoints record it.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Model input for one stay: per hourly bin, the active code indices with
/// normalized values (1.0 for valueless events).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureSequence {
    pub bins: Vec<Vec<(u32, f64)>>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.bins.iter().flatten().map(|(i, _)| *i).max()
    }
}

/// Encodes the observation window of `record` with `vocab`'s window.
///
/// Events at `t < hours` land in bin `floor(t / bin_hours)`. Each bin is
/// sorted by `(index, value)`, so same-bin event order does not matter.
/// Valued events with unknown codes fall back to the presence marker.
pub fn encode(record: &PatientRecord, vocab: &Vocabulary) -> FeatureSequence {
    let window = vocab.window;
    let num_bins = window.num_bins();
    let mut bins = vec![Vec::new(); num_bins];
    for event in record.window(window.hours) {
        let bin = ((event.t / window.bin_hours).floor() as usize).min(num_bins - 1);
        let entry = match vocab.get(&event.code) {
            Some(entry) => (
                entry.index,
                event.value.map_or(1.0, |v| (v - entry.mean) / entry.std),
            ),
            None => (OOV_INDEX, 1.0),
        };
        bins[bin].push(entry);
    }
    for bin in &mut bins {
        bin.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    }
    FeatureSequence { bins }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Event;
    use proptest::prelude::*;

    fn record(events: &[(f64, &str, Option<f64>)]) -> PatientRecord {
        PatientRecord {
            patient_id: "p".into(),
            in_time: 0.0,
            out_time: 72.0,
            death_time: None,
            events: events
                .iter()
                .map(|(t, c, v)| Event {
                    t: *t,
                    code: (*c).into(),
                    value: *v,
                })
                .collect(),
        }
    }

    #[test]
    fn lexicographic_indices_with_oov_zero() {
        let vocab = Vocabulary::build(&[record(&[(1.0, "b", None), (2.0, "a", None)])], Window::default()).unwrap();
        assert_eq!(vocab.get("a").unwrap().index, 1);
        assert_eq!(vocab.get("b").unwrap().index, 2);
        assert_eq!(vocab.size(), 3);
    }

    #[test]
    fn train_only_and_degenerate_variance() {
        let train = [record(&[(1.0, "hr", Some(5.0)), (2.0, "hr", Some(5.0)), (3.0, "sbp", Some(100.0)), (4.0, "sbp", Some(120.0))])];
        let vocab = Vocabulary::build(&train, Window::default()).unwrap();
        assert!(vocab.get("only_in_test").is_none());
        assert_eq!(vocab.get("hr").unwrap().std, 1.0);
        let sbp = vocab.get("sbp").unwrap();
        assert_eq!((sbp.mean, sbp.std), (110.0, 10.0));
        assert!(Vocabulary::build(&[], Window::default()).is_err());
    }

    #[test]
    fn window_binning_and_normalization() {
        let train = [record(&[(1.0, "sbp", Some(100.0)), (2.0, "sbp", Some(120.0))])];
        let vocab = Vocabulary::build(&train, Window::default()).unwrap();
        let r = record(&[
            (0.5, "sbp", Some(110.0)),
            (5.0, "unseen", None),
            (23.9, "sbp", Some(130.0)),
            (24.1, "sbp", Some(90.0)),
        ]);
        let seq = encode(&r, &vocab);
        assert_eq!(seq.len(), 24);
        assert_eq!(seq.bins[0], vec![(1, 0.0)]);
        assert_eq!(seq.bins[23], vec![(1, 2.0)]);
        assert_eq!(seq.bins[5], vec![(OOV_INDEX, 1.0)]);
        assert_eq!(seq.bins.iter().map(Vec::len).sum::<usize>(), 3);
    }

    #[test]
    fn json_round_trip_and_fingerprint() {
        let vocab = Vocabulary::build(&[record(&[(1.0, "x", Some(2.0)), (2.0, "y", None)])], Window::default()).unwrap();
        let back = Vocabulary::from_json(&vocab.to_json()).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.fingerprint(), vocab.fingerprint());
    }

    #[test]
    fn rebuilding_from_training_split_is_a_fixed_point() {
        let cfg = crate::cohort_sim::SimConfig { n_patients: 30, ..Default::default() };
        let (records, _) = crate::cohort_sim::generate_cohort(&cfg).unwrap();
        let a = Vocabulary::build(&records, Window::default()).unwrap();
        let b = Vocabulary::build(&records, Window::default()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn same_timestamp_order_is_irrelevant(values in proptest::collection::vec((0usize..4, -5.0f64..5.0), 1..12), t in 0.0f64..23.99) {
            let codes = ["a", "b", "c", "d"];
            let train = record(&codes.iter().map(|c| (1.0, *c, Some(1.0))).collect::<Vec<_>>());
            let vocab = Vocabulary::build(&[train], Window::default()).unwrap();
            let forward: Vec<(f64, &str, Option<f64>)> = values.iter().map(|(c, v)| (t, codes[*c], Some(*v))).collect();
            let mut backward = forward.clone();
            backward.reverse();
            prop_assert_eq!(encode(&record(&forward), &vocab), encode(&record(&backward), &vocab));
        }
    }
}
