//! File formats for cohorts, ground truth, labels and split membership.
//!
//! - cohort: JSON lines, one [`PatientRecord`] per line;
//! - ground truth: CSV `patient_id, p_<task> x14, y_<task> x14`;
//! - labels: CSV `patient_id, <task> x14` with 0/1 values;
//! - splits: CSV `patient_id, split`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::cohort_sim::{GroundTruth, Split};
use crate::error::{Error, Result};
use crate::labeling::LabelVector;
use crate::record::PatientRecord;
use crate::tasks::{task_names, NUM_TASKS};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn write_cohort(path: &Path, records: &[PatientRecord]) -> Result<()> {
    let mut out = create(path)?;
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| Error::json(path.display().to_string(), e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates a cohort file. Blank lines are skipped.
pub fn read_cohort(path: &Path) -> Result<Vec<PatientRecord>> {
    let reader = open(path)?;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_ground_truth(path: &Path, truth: &[GroundTruth]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let names = task_names();
    let header: Vec<String> = std::iter::once("patient_id".to_string())
        .chain(names.iter().map(|n| format!("p_{n}")))
        .chain(names.iter().map(|n| format!("y_{n}")))
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for g in truth {
        let row: Vec<String> = std::iter::once(g.patient_id.clone())
            .chain(g.probabilities.iter().map(|p| p.to_string()))
            .chain(g.labels.to_array().iter().map(|b| u8::from(*b).to_string()))
            .collect();
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message,
        };
        if row.len() != 1 + 2 * NUM_TASKS {
            return Err(bad(format!("expected {} columns", 1 + 2 * NUM_TASKS)));
        }
        let mut probabilities = [0.0; NUM_TASKS];
        let mut labels = [false; NUM_TASKS];
        for j in 0..NUM_TASKS {
            probabilities[j] = row[1 + j].parse().map_err(|e| bad(format!("{e}")))?;
            labels[j] = parse_bit(&row[1 + NUM_TASKS + j]).ok_or_else(|| bad("label is not 0/1".into()))?;
        }
        out.push(GroundTruth {
            patient_id: row[0].to_string(),
            probabilities,
            labels: LabelVector::from_array(labels),
        });
    }
    Ok(out)
}

fn parse_bit(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

pub fn write_labels(path: &Path, rows: &[(String, LabelVector)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let header: Vec<&str> = std::iter::once("patient_id").chain(task_names()).collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (id, labels) in rows {
        let row: Vec<String> = std::iter::once(id.clone())
            .chain(labels.to_array().iter().map(|b| u8::from(*b).to_string()))
            .collect();
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<(String, LabelVector)>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected: Vec<&str> = std::iter::once("patient_id").chain(task_names()).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "unexpected label header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let mut bits = [false; NUM_TASKS];
        for j in 0..NUM_TASKS {
            bits[j] = parse_bit(&row[1 + j]).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: "label is not 0/1".into(),
            })?;
        }
        out.push((row[0].to_string(), LabelVector::from_array(bits)));
    }
    Ok(out)
}

pub fn write_splits(path: &Path, rows: &[(String, Split)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["patient_id", "split"]).map_err(|e| csv_err(path, e))?;
    for (id, split) in rows {
        w.write_record([id.as_str(), split.name()]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_splits(path: &Path) -> Result<Vec<(String, Split)>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let split = row[1].parse().map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message,
        })?;
        out.push((row[0].to_string(), split));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort_sim::{generate_cohort, SimConfig};

    #[test]
    fn cohort_and_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = SimConfig {
            n_patients: 25,
            seed: 11,
            ..SimConfig::default()
        };
        let (records, truth) = generate_cohort(&config).unwrap();
        let cohort_path = dir.path().join("cohort.jsonl");
        write_cohort(&cohort_path, &records).unwrap();
        assert_eq!(read_cohort(&cohort_path).unwrap(), records);

        let truth_path = dir.path().join("truth.csv");
        write_ground_truth(&truth_path, &truth).unwrap();
        assert_eq!(read_ground_truth(&truth_path).unwrap(), truth);

        let rows: Vec<(String, LabelVector)> =
            truth.iter().map(|g| (g.patient_id.clone(), g.labels)).collect();
        let labels_path = dir.path().join("labels.csv");
        write_labels(&labels_path, &rows).unwrap();
        assert_eq!(read_labels(&labels_path).unwrap(), rows);
    }

    #[test]
    fn ingested_records_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.jsonl");
        std::fs::write(
            &path,
            r#"{"patient_id":"x","in_time":0,"out_time":60,"death_time":null,"events":[{"t":5,"code":"a","value":null},{"t":2,"code":"b","value":1.5}]}"#,
        )
        .unwrap();
        assert!(matches!(read_cohort(&path), Err(Error::DataIntegrity { .. })));
        std::fs::write(&path, "{\"patient_id\": 3}\n").unwrap();
        assert!(matches!(read_cohort(&path), Err(Error::Parse { line: 1, .. })));
    }
}
