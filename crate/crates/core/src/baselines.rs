//! Logistic-regression baselines on static severity summaries of the
//! observation window.
//!
//! Each variant designates a fixed list of codes. A record's feature for a
//! valued code is its worst value in hours `[0, 24)`; indicator codes give
//! 1 when present. Missing values are imputed with the training median and
//! every column is z-scored with training statistics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::{SeverityCode, Worst, SAPS_CODES, SOFA_CODES};
use crate::error::{Error, Result};
use crate::labeling::PREDICTION_HOURS;
use crate::math::{sigmoid, softplus};
use crate::model::{PredictionVector, PROB_EPSILON};
use crate::record::PatientRecord;
use crate::tasks::{Task, NUM_TASKS};

pub const DEFAULT_L2: f64 = 1e-3;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeverityVariant {
    SofaLike,
    SapsIiLike,
}

impl SeverityVariant {
    pub const ALL: [SeverityVariant; 2] = [SeverityVariant::SofaLike, SeverityVariant::SapsIiLike];

    pub fn codes(self) -> &'static [SeverityCode] {
        match self {
            SeverityVariant::SofaLike => &SOFA_CODES,
            SeverityVariant::SapsIiLike => &SAPS_CODES,
        }
    }

    pub fn len(self) -> usize {
        self.codes().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            SeverityVariant::SofaLike => "sofa_like",
            SeverityVariant::SapsIiLike => "saps_ii_like",
        }
    }
}

/// Worst value per designated code, `None` where a valued code is absent.
pub fn raw_severity(record: &PatientRecord, variant: SeverityVariant) -> Vec<Option<f64>> {
    let codes = variant.codes();
    let mut out: Vec<Option<f64>> = codes
        .iter()
        .map(|c| (c.worst == Worst::Presence).then_some(0.0))
        .collect();
    for event in record.window(PREDICTION_HOURS) {
        for (slot, c) in out.iter_mut().zip(codes) {
            if *event.code != *c.code {
                continue;
            }
            match c.worst {
                Worst::Presence => *slot = Some(1.0),
                Worst::Max | Worst::Min => {
                    if let Some(v) = event.value {
                        *slot = Some(match (*slot, c.worst) {
                            (None, _) => v,
                            (Some(w), Worst::Max) => w.max(v),
                            (Some(w), _) => w.min(v),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Training-split imputation and standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeverityScaler {
    pub variant: SeverityVariant,
    pub medians: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl SeverityScaler {
    pub fn fit(train: &[PatientRecord], variant: SeverityVariant) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::config("baselines", "training split is empty"));
        }
        let raw: Vec<Vec<Option<f64>>> = train.iter().map(|r| raw_severity(r, variant)).collect();
        let d = variant.len();
        let mut medians = Vec::with_capacity(d);
        let mut means = Vec::with_capacity(d);
        let mut stds = Vec::with_capacity(d);
        for k in 0..d {
            let mut present: Vec<f64> = raw.iter().filter_map(|row| row[k]).collect();
            let med = if present.is_empty() { 0.0 } else { median(&mut present) };
            let column: Vec<f64> = raw.iter().map(|row| row[k].unwrap_or(med)).collect();
            let mean = column.iter().sum::<f64>() / column.len() as f64;
            let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / column.len() as f64;
            let std = var.sqrt();
            medians.push(med);
            means.push(mean);
            stds.push(if std > 1e-12 { std } else { 1.0 });
        }
        Ok(SeverityScaler {
            variant,
            medians,
            means,
            stds,
        })
    }

    /// Imputed and z-scored features of one record.
    pub fn transform(&self, record: &PatientRecord) -> Vec<f64> {
        raw_severity(record, self.variant)
            .into_iter()
            .enumerate()
            .map(|(k, v)| (v.unwrap_or(self.medians[k]) - self.means[k]) / self.stds[k])
            .collect()
    }
}

pub fn extract_severity(record: &PatientRecord, scaler: &SeverityScaler) -> Vec<f64> {
    scaler.transform(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        LogisticModel {
            weights: vec![0.0; dim],
            intercept: 0.0,
        }
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

pub fn predict_logistic(model: &LogisticModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.weights.len() {
        return Err(Error::Shape(format!(
            "{} features for a model with {} weights",
            features.len(),
            model.weights.len()
        )));
    }
    Ok(sigmoid(model.score(features)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitTrace {
    /// Penalized objective after every accepted step, starting at the
    /// zero model.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Mean log-likelihood minus `l2 / 2 * |w|^2` (intercept unpenalized).
pub fn penalized_log_likelihood(model: &LogisticModel, x: &[Vec<f64>], y: &[bool], l2: f64) -> f64 {
    let ll: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let z = model.score(xi);
            if yi {
                -softplus(-z)
            } else {
                -softplus(z)
            }
        })
        .sum();
    ll / x.len() as f64 - 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

fn gradient(model: &LogisticModel, x: &[Vec<f64>], y: &[bool], l2: f64) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let r = f64::from(u8::from(yi)) - sigmoid(model.score(xi));
        gb += r;
        for (g, v) in gw.iter_mut().zip(xi) {
            *g += r * v;
        }
    }
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g = *g / n - l2 * w;
    }
    (gw, gb / n)
}

/// Full-batch gradient ascent with backtracking from the zero model.
///
/// Stops when the gradient norm falls below [`GRADIENT_TOLERANCE`] or after
/// [`MAX_ITERATIONS`] steps. Every accepted step satisfies the Armijo
/// condition, so the objective trace is non-decreasing.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], l2: f64, task: &str) -> Result<(LogisticModel, FitTrace)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!("{} feature rows, {} labels", x.len(), y.len())));
    }
    let dim = x[0].len();
    if x.iter().any(|row| row.len() != dim) {
        return Err(Error::Shape("feature rows have different lengths".into()));
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::DegenerateTask { task: task.to_string() });
    }
    let mut model = LogisticModel::zeros(dim);
    let mut value = penalized_log_likelihood(&model, x, y, l2);
    let mut trace = FitTrace {
        objective: vec![value],
        iterations: 0,
        converged: false,
    };
    let mut step = 1.0;
    for _ in 0..MAX_ITERATIONS {
        let (gw, gb) = gradient(&model, x, y, l2);
        let norm2 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if norm2.sqrt() < GRADIENT_TOLERANCE {
            trace.converged = true;
            break;
        }
        step *= 2.0;
        loop {
            let candidate = LogisticModel {
                weights: model.weights.iter().zip(&gw).map(|(w, g)| w + step * g).collect(),
                intercept: model.intercept + step * gb,
            };
            let v = penalized_log_likelihood(&candidate, x, y, l2);
            if v >= value + 0.5 * step * norm2 {
                model = candidate;
                value = v;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                trace.converged = true;
                return finish(model, trace);
            }
        }
        trace.objective.push(value);
        trace.iterations += 1;
    }
    finish(model, trace)
}

fn finish(model: LogisticModel, trace: FitTrace) -> Result<(LogisticModel, FitTrace)> {
    if !(model.intercept.is_finite() && model.weights.iter().all(|w| w.is_finite())) {
        return Err(Error::Numeric("logistic fit produced non-finite weights".into()));
    }
    Ok((model, trace))
}

/// Per-task fitted model, or the training prevalence for a task whose
/// training labels had a single class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskModel {
    Logistic { model: LogisticModel },
    Degenerate { prevalence: f64 },
}

/// One variant's scaler plus fourteen per-task models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub variant: SeverityVariant,
    pub scaler: SeverityScaler,
    pub l2_strength: f64,
    /// Keyed by task name, in task order.
    pub tasks: Vec<(String, TaskModel)>,
}

impl BaselineModel {
    /// Fits all tasks; per-task fits run concurrently and are independent.
    pub fn fit(
        train: &[PatientRecord],
        labels: &[[bool; NUM_TASKS]],
        variant: SeverityVariant,
        l2: f64,
    ) -> Result<Self> {
        if train.len() != labels.len() {
            return Err(Error::Shape(format!("{} records, {} label rows", train.len(), labels.len())));
        }
        let scaler = SeverityScaler::fit(train, variant)?;
        let x: Vec<Vec<f64>> = train.iter().map(|r| scaler.transform(r)).collect();
        let tasks = Task::ALL
            .par_iter()
            .map(|task| {
                let j = task.index();
                let y: Vec<bool> = labels.iter().map(|row| row[j]).collect();
                let fitted = match fit_logistic(&x, &y, l2, task.name()) {
                    Ok((model, _)) => TaskModel::Logistic { model },
                    Err(Error::DegenerateTask { task }) => {
                        log::warn!("{}: task {task} skipped, single-class training labels", variant.name());
                        TaskModel::Degenerate {
                            prevalence: y.iter().filter(|v| **v).count() as f64 / y.len() as f64,
                        }
                    }
                    Err(e) => return Err(e),
                };
                Ok((task.name().to_string(), fitted))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BaselineModel {
            variant,
            scaler,
            l2_strength: l2,
            tasks,
        })
    }

    /// Names of tasks that were skipped as degenerate.
    pub fn degenerate_tasks(&self) -> Vec<&str> {
        self.tasks
            .iter()
            .filter(|(_, m)| matches!(m, TaskModel::Degenerate { .. }))
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn predict(&self, record: &PatientRecord) -> Result<PredictionVector> {
        let x = self.scaler.transform(record);
        let mut out = [0.0; NUM_TASKS];
        for (o, (_, m)) in out.iter_mut().zip(&self.tasks) {
            let p = match m {
                TaskModel::Logistic { model } => predict_logistic(model, &x)?,
                TaskModel::Degenerate { prevalence } => *prevalence,
            };
            *o = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
        }
        Ok(out)
    }

    pub fn predict_all(&self, records: &[PatientRecord]) -> Result<Vec<PredictionVector>> {
        records.iter().map(|r| self.predict(r)).collect()
    }
}

/// Both baseline variants, persisted together as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSet {
    pub models: Vec<BaselineModel>,
}

impl BaselineSet {
    pub fn fit(train: &[PatientRecord], labels: &[[bool; NUM_TASKS]], l2: f64) -> Result<Self> {
        let models = SeverityVariant::ALL
            .iter()
            .map(|&v| BaselineModel::fit(train, labels, v, l2))
            .collect::<Result<Vec<_>>>()?;
        Ok(BaselineSet { models })
    }

    pub fn get(&self, variant: SeverityVariant) -> Option<&BaselineModel> {
        self.models.iter().find(|m| m.variant == variant)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("baselines", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Event;

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
    fn worst_value_rules() {
        let r = record(&[
            (1.0, "lab:bilirubin", Some(3.0)),
            (2.0, "lab:platelets", Some(150.0)),
            (3.0, "lab:bilirubin", Some(7.0)),
            (4.0, "lab:platelets", Some(90.0)),
            (30.0, "lab:bilirubin", Some(20.0)),
        ]);
        let raw = raw_severity(&r, SeverityVariant::SofaLike);
        assert_eq!(raw.len(), 6);
        assert_eq!(raw[1], Some(90.0));
        assert_eq!(raw[2], Some(7.0));
        assert_eq!(raw[0], None);
        assert_eq!(raw_severity(&r, SeverityVariant::SapsIiLike).len(), 17);
    }

    #[test]
    fn presence_indicators() {
        let r = record(&[(0.0, "dx:aids", None)]);
        let raw = raw_severity(&r, SeverityVariant::SapsIiLike);
        let k = SAPS_CODES.iter().position(|c| c.code == "dx:aids").unwrap();
        assert_eq!(raw[k], Some(1.0));
        let j = SAPS_CODES.iter().position(|c| c.code == "adm:unscheduled_surgical").unwrap();
        assert_eq!(raw[j], Some(0.0));
    }

    #[test]
    fn missing_codes_impute_to_zero_after_scaling() {
        let train = [
            record(&[(1.0, "lab:bilirubin", Some(1.0))]),
            record(&[(1.0, "lab:bilirubin", Some(3.0))]),
            record(&[]),
        ];
        let scaler = SeverityScaler::fit(&train, SeverityVariant::SofaLike).unwrap();
        assert_eq!(scaler.medians[2], 2.0);
        let x = scaler.transform(&record(&[]));
        assert_eq!(x[2], 0.0);
        // Column never observed: all-median, hence exactly zero.
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn extraction_ignores_event_order() {
        let a = record(&[(1.0, "lab:bilirubin", Some(3.0)), (1.0, "lab:bilirubin", Some(7.0))]);
        let b = record(&[(1.0, "lab:bilirubin", Some(7.0)), (1.0, "lab:bilirubin", Some(3.0))]);
        assert_eq!(
            raw_severity(&a, SeverityVariant::SofaLike),
            raw_severity(&b, SeverityVariant::SofaLike)
        );
    }

    #[test]
    fn prediction_basics() {
        let zero = LogisticModel::zeros(3);
        assert_eq!(predict_logistic(&zero, &[1.0, -2.0, 5.0]).unwrap(), 0.5);
        let big = LogisticModel {
            weights: vec![0.0; 2],
            intercept: 20.0,
        };
        assert!(predict_logistic(&big, &[0.0, 0.0]).unwrap() > 0.999);
        assert!(predict_logistic(&big, &[0.0]).is_err());
        let m = LogisticModel {
            weights: vec![0.3, -1.2],
            intercept: 0.1,
        };
        let shift = m.score(&[1.0, 2.5]) - m.score(&[1.0, 0.5]);
        assert!((shift - (-1.2 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            fit_logistic(&x, &[true, true], 1e-3, "mortality"),
            Err(Error::DegenerateTask { .. })
        ));
    }

    #[test]
    fn separable_data_is_classified_perfectly() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 10.0 - 2.0]).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let (m, trace) = fit_logistic(&x, &y, 1e-8, "t").unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(predict_logistic(&m, xi).unwrap() > 0.5, *yi);
        }
        assert!(trace.objective.windows(2).all(|w| w[1] >= w[0]));
    }
}
