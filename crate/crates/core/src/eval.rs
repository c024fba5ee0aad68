//! Ranking metrics, calibration, quantile analyses and report tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::stable_argsort;
use crate::model::{LabelRow, PredictionVector};
use crate::tasks::{Intervention, Task, NUM_INTERVENTIONS, NUM_TASKS};

fn check_aligned(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    Ok(())
}

/// Area under the ROC curve via the midrank statistic; ties count 1/2.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned(scores, labels)?;
    let n_pos = labels.iter().filter(|y| **y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let order = stable_argsort(scores);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average.
        let midrank = (i + j + 2) as f64 / 2.0;
        let positives = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision `sum_k (R_k - R_{k-1}) P_k` over descending score
/// thresholds, each group of tied scores forming one threshold.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned(scores, labels)?;
    let n_pos = labels.iter().filter(|y| **y).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        tp += order[i..=j].iter().filter(|&&k| labels[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// Intervention indices (0..13) by descending probability; ties keep task order.
pub fn intervention_ranking(prediction: &PredictionVector) -> [usize; NUM_INTERVENTIONS] {
    let mut order: [usize; NUM_INTERVENTIONS] = std::array::from_fn(|k| k);
    order.sort_by(|&a, &b| prediction[b + 1].total_cmp(&prediction[a + 1]));
    order
}

/// Share of the top-`I` predicted interventions that are in the true set,
/// where `I` is the true set's size. `None` when the true set is empty.
pub fn precision_at_i(prediction: &PredictionVector, true_set: &[bool; NUM_INTERVENTIONS]) -> Option<f64> {
    let i = true_set.iter().filter(|v| **v).count();
    if i == 0 {
        return None;
    }
    let hits = intervention_ranking(prediction)[..i].iter().filter(|&&k| true_set[k]).count();
    Some(hits as f64 / i as f64)
}

fn interventions_of(labels: &LabelRow) -> [bool; NUM_INTERVENTIONS] {
    std::array::from_fn(|k| labels[k + 1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRow {
    /// `"1"` to `"5"` or `">=6"`.
    pub group: String,
    pub count: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` for fewer than two patients.
    pub std: Option<f64>,
}

pub const PRECISION_GROUPS: [&str; 6] = ["1", "2", "3", "4", "5", ">=6"];

/// Precision@I grouped by the number of true interventions. Patients with
/// none are excluded.
pub fn precision_table(preds: &[PredictionVector], labels: &[LabelRow]) -> Result<Vec<PrecisionRow>> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions, {} label rows", preds.len(), labels.len())));
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); PRECISION_GROUPS.len()];
    for (p, y) in preds.iter().zip(labels) {
        let set = interventions_of(y);
        if let Some(v) = precision_at_i(p, &set) {
            let i = set.iter().filter(|b| **b).count();
            groups[i.min(6) - 1].push(v);
        }
    }
    Ok(PRECISION_GROUPS
        .iter()
        .zip(groups)
        .map(|(name, values)| {
            let (mean, std) = describe(&values);
            PrecisionRow {
                group: name.to_string(),
                count: values.len(),
                mean,
                std,
            }
        })
        .collect())
}

fn describe(values: &[f64]) -> (Option<f64>, Option<f64>) {
    match values.len() {
        0 => (None, None),
        1 => (Some(values[0]), None),
        _ => {
            let (m, s) = aggregate_over_seeds(values).expect("two or more values");
            (Some(m), Some(s))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_pred: f64,
    pub frac_pos: f64,
    pub count: usize,
}

/// Equal-width bins on `[0, 1]`, the last one closed on the right. Empty
/// bins are omitted.
pub fn calibration_curve(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<Vec<CalibrationBin>> {
    check_aligned(probs, labels)?;
    if n_bins == 0 {
        return Err(Error::config("eval.calibration_bins", "must be at least 1"));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Shape("calibration needs probabilities in [0, 1]".into()));
    }
    let mut sums = vec![(0.0, 0usize, 0usize); n_bins];
    for (p, y) in probs.iter().zip(labels) {
        let b = ((p * n_bins as f64).floor() as usize).min(n_bins - 1);
        sums[b].0 += p;
        sums[b].1 += usize::from(*y);
        sums[b].2 += 1;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .filter(|(_, s)| s.2 > 0)
        .map(|(b, (sum, pos, count))| CalibrationBin {
            lower: b as f64 / n_bins as f64,
            upper: (b + 1) as f64 / n_bins as f64,
            mean_pred: sum / count as f64,
            frac_pos: pos as f64 / count as f64,
            count,
        })
        .collect())
}

/// Equal-count groups by ascending value: the element with rank `r` goes to
/// group `floor(r * n_groups / n)`. Ties keep input order.
pub fn quantile_groups(values: &[f64], n_groups: usize) -> Result<Vec<usize>> {
    if n_groups == 0 || values.len() < n_groups {
        return Err(Error::Shape(format!(
            "{} values cannot form {n_groups} quantile groups",
            values.len()
        )));
    }
    let n = values.len();
    let mut groups = vec![0; n];
    for (rank, idx) in stable_argsort(values).into_iter().enumerate() {
        groups[idx] = rank * n_groups / n;
    }
    Ok(groups)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub group: usize,
    pub count: usize,
    pub mean_mortality: f64,
    /// Mean probability of each intervention, in task order.
    pub intervention_means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileRow {
    pub intervention: String,
    pub decile: usize,
    pub count: usize,
    pub mean_intervention: f64,
    pub mean_mortality: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTables {
    /// Five equal-count mortality-risk groups, lowest risk first.
    pub mortality_quantiles: Vec<QuantileRow>,
    /// Per intervention, ten equal-count deciles of its probability.
    pub intervention_deciles: Vec<DecileRow>,
}

pub const MORTALITY_QUANTILES: usize = 5;
pub const INTERVENTION_DECILES: usize = 10;

pub fn quantile_relationships(preds: &[PredictionVector]) -> Result<QuantileTables> {
    let mortality: Vec<f64> = preds.iter().map(|p| p[0]).collect();
    let groups = quantile_groups(&mortality, MORTALITY_QUANTILES)?;
    let mut mortality_quantiles = Vec::with_capacity(MORTALITY_QUANTILES);
    for g in 0..MORTALITY_QUANTILES {
        let members: Vec<&PredictionVector> = preds.iter().zip(&groups).filter(|(_, gg)| **gg == g).map(|(p, _)| p).collect();
        let count = members.len() as f64;
        mortality_quantiles.push(QuantileRow {
            group: g,
            count: members.len(),
            mean_mortality: members.iter().map(|p| p[0]).sum::<f64>() / count,
            intervention_means: (1..NUM_TASKS)
                .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / count)
                .collect(),
        });
    }
    let mut intervention_deciles = Vec::new();
    for iv in Intervention::ALL {
        let j = iv.task().index();
        let values: Vec<f64> = preds.iter().map(|p| p[j]).collect();
        let deciles = quantile_groups(&values, INTERVENTION_DECILES)?;
        for d in 0..INTERVENTION_DECILES {
            let members: Vec<&PredictionVector> = preds.iter().zip(&deciles).filter(|(_, dd)| **dd == d).map(|(p, _)| p).collect();
            let count = members.len() as f64;
            intervention_deciles.push(DecileRow {
                intervention: iv.name().to_string(),
                decile: d,
                count: members.len(),
                mean_intervention: members.iter().map(|p| p[j]).sum::<f64>() / count,
                mean_mortality: members.iter().map(|p| p[0]).sum::<f64>() / count,
            });
        }
    }
    Ok(QuantileTables {
        mortality_quantiles,
        intervention_deciles,
    })
}

/// Sample mean and sample standard deviation (`n - 1` denominator).
pub fn aggregate_over_seeds(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Shape(format!("need at least 2 values, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// A metric over one or more runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStat {
    pub values: Vec<f64>,
    pub mean: f64,
    /// `None` with a single run.
    pub std: Option<f64>,
}

impl RunStat {
    pub fn new(values: Vec<f64>) -> Option<Self> {
        let (mean, std) = describe(&values);
        Some(RunStat { mean: mean?, std, values })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    /// `None` when the test labels of the task are single-class.
    pub auroc: Option<RunStat>,
    pub auprc: Option<RunStat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCalibration {
    pub task: String,
    pub bins: Vec<CalibrationBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub runs: usize,
    pub tasks: Vec<TaskSummary>,
    /// From the first run.
    pub precision_at_i: Vec<PrecisionRow>,
    /// From the first run.
    pub calibration: Vec<TaskCalibration>,
}

/// Predictions of one model on the test split, one entry per run.
#[derive(Clone, Debug)]
pub struct ModelPredictions {
    pub model: String,
    pub runs: Vec<Vec<PredictionVector>>,
}

pub const CALIBRATION_BINS: usize = 10;

impl ModelMetrics {
    pub fn compute(preds: &ModelPredictions, labels: &[LabelRow]) -> Result<Self> {
        if preds.runs.is_empty() {
            return Err(Error::Shape(format!("model {} has no runs", preds.model)));
        }
        for run in &preds.runs {
            if run.len() != labels.len() {
                return Err(Error::Shape(format!("{} predictions, {} label rows", run.len(), labels.len())));
            }
        }
        let mut tasks = Vec::with_capacity(NUM_TASKS);
        let mut calibration = Vec::with_capacity(NUM_TASKS);
        for task in Task::ALL {
            let j = task.index();
            let y: Vec<bool> = labels.iter().map(|r| r[j]).collect();
            let mut aurocs = Vec::new();
            let mut auprcs = Vec::new();
            for run in &preds.runs {
                let s: Vec<f64> = run.iter().map(|p| p[j]).collect();
                match auroc(&s, &y) {
                    Ok(v) => aurocs.push(v),
                    Err(Error::UndefinedMetric(_)) => {}
                    Err(e) => return Err(e),
                }
                match auprc(&s, &y) {
                    Ok(v) => auprcs.push(v),
                    Err(Error::UndefinedMetric(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            tasks.push(TaskSummary {
                task: task.name().to_string(),
                auroc: RunStat::new(aurocs),
                auprc: RunStat::new(auprcs),
            });
            let first: Vec<f64> = preds.runs[0].iter().map(|p| p[j]).collect();
            calibration.push(TaskCalibration {
                task: task.name().to_string(),
                bins: calibration_curve(&first, &y, CALIBRATION_BINS)?,
            });
        }
        Ok(ModelMetrics {
            model: preds.model.clone(),
            runs: preds.runs.len(),
            tasks,
            precision_at_i: precision_table(&preds.runs[0], labels)?,
            calibration,
        })
    }

    pub fn task(&self, task: Task) -> &TaskSummary {
        &self.tasks[task.index()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_test: usize,
    pub models: Vec<ModelMetrics>,
    /// Quantile analyses of the first model's first run.
    pub quantiles: QuantileTables,
}

impl MetricsReport {
    /// The first entry of `models` is the primary model.
    pub fn build(models: &[ModelPredictions], labels: &[LabelRow]) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::Shape("no models to evaluate".into()))?;
        Ok(MetricsReport {
            n_test: labels.len(),
            models: models
                .iter()
                .map(|m| ModelMetrics::compute(m, labels))
                .collect::<Result<Vec<_>>>()?,
            quantiles: quantile_relationships(&first.runs[0])?,
        })
    }

    pub fn model(&self, name: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("metrics report", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("metrics report", e))
    }

    /// `task,model,runs,auroc_mean,auroc_std,auprc_mean,auprc_std`
    pub fn table1_csv(&self) -> String {
        let mut out = String::from("task,model,runs,auroc_mean,auroc_std,auprc_mean,auprc_std\n");
        for task in Task::ALL {
            for m in &self.models {
                let t = m.task(task);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    t.task,
                    m.model,
                    m.runs,
                    opt(t.auroc.as_ref().map(|s| s.mean)),
                    opt(t.auroc.as_ref().and_then(|s| s.std)),
                    opt(t.auprc.as_ref().map(|s| s.mean)),
                    opt(t.auprc.as_ref().and_then(|s| s.std)),
                );
            }
        }
        out
    }

    /// `model,group,count,mean,std`
    pub fn table2_csv(&self) -> String {
        let mut out = String::from("model,group,count,mean,std\n");
        for m in &self.models {
            for r in &m.precision_at_i {
                let _ = writeln!(out, "{},{},{},{},{}", m.model, r.group, r.count, opt(r.mean), opt(r.std));
            }
        }
        out
    }

    /// `model,task,bin_lower,bin_upper,mean_pred,frac_pos,count`
    pub fn calibration_csv(&self) -> String {
        let mut out = String::from("model,task,bin_lower,bin_upper,mean_pred,frac_pos,count\n");
        for m in &self.models {
            for c in &m.calibration {
                for b in &c.bins {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        m.model, c.task, b.lower, b.upper, b.mean_pred, b.frac_pos, b.count
                    );
                }
            }
        }
        out
    }

    /// `quantile,count,mean_mortality,<one column per intervention>`
    pub fn mortality_quantiles_csv(&self) -> String {
        let mut out = String::from("quantile,count,mean_mortality");
        for iv in Intervention::ALL {
            out.push(',');
            out.push_str(iv.name());
        }
        out.push('\n');
        for r in &self.quantiles.mortality_quantiles {
            let _ = write!(out, "{},{},{}", r.group, r.count, r.mean_mortality);
            for v in &r.intervention_means {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// `intervention,decile,count,mean_intervention,mean_mortality`
    pub fn intervention_deciles_csv(&self) -> String {
        let mut out = String::from("intervention,decile,count,mean_intervention,mean_mortality\n");
        for r in &self.quantiles.intervention_deciles {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.intervention, r.decile, r.count, r.mean_intervention, r.mean_mortality
            );
        }
        out
    }

    /// Writes `metrics.json` and the five CSV tables into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<String>> {
        let files = [
            ("metrics.json", self.to_json()?),
            ("table1.csv", self.table1_csv()),
            ("table2.csv", self.table2_csv()),
            ("calibration.csv", self.calibration_csv()),
            ("mortality_quantiles.csv", self.mortality_quantiles_csv()),
            ("intervention_deciles.csv", self.intervention_deciles_csv()),
        ];
        let mut names = Vec::new();
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            names.push(name.to_string());
        }
        Ok(names)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        let y = [true, false, true, false];
        assert_eq!(auroc(&[0.9, 0.8, 0.3, 0.2], &y).unwrap(), 0.75);
        assert_eq!(auroc(&[0.9, 0.1, 0.8, 0.2], &y).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap(), 0.25);
        assert_eq!(auprc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.4);
        assert!(auprc(&[0.3], &[false]).is_err());
    }

    #[test]
    fn precision_examples() {
        let mut p = [0.1; NUM_TASKS];
        p[1] = 0.9;
        p[2] = 0.8;
        let mut set = [false; NUM_INTERVENTIONS];
        set[0] = true;
        set[1] = true;
        assert_eq!(precision_at_i(&p, &set), Some(1.0));
        p[4] = 0.85;
        set[5] = true;
        assert_eq!(precision_at_i(&p, &set), Some(2.0 / 3.0));
        assert_eq!(precision_at_i(&p, &[false; NUM_INTERVENTIONS]), None);
    }

    #[test]
    fn calibration_examples() {
        let probs = [0.5; 4];
        let bins = calibration_curve(&probs, &[true, false, true, false], 10).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!((bins[0].mean_pred, bins[0].frac_pos, bins[0].count), (0.5, 0.5, 4));
        let bins = calibration_curve(&[0.0, 1.0, 0.95], &[false, true, true], 10).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[1].count, 2);
    }

    #[test]
    fn quantile_group_rules() {
        let g = quantile_groups(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3).unwrap();
        assert_eq!(g, vec![0, 0, 1, 1, 2, 2]);
        let g = quantile_groups(&[7.0; 5], 2).unwrap();
        assert_eq!(g, vec![0, 0, 0, 1, 1]);
        assert!(quantile_groups(&[1.0], 2).is_err());
    }

    #[test]
    fn seed_aggregation() {
        let (m, s) = aggregate_over_seeds(&[0.8, 0.8, 0.8]).unwrap();
        assert!((m - 0.8).abs() < 1e-15 && s.abs() < 1e-15);
        let (m, s) = aggregate_over_seeds(&[0.7, 0.9]).unwrap();
        assert!((m - 0.8).abs() < 1e-15);
        assert!((s - 0.02f64.sqrt()).abs() < 1e-12);
        assert!(aggregate_over_seeds(&[0.5]).is_err());
    }

    #[test]
    fn constant_predictions_give_flat_quantiles() {
        let preds = vec![[0.3; NUM_TASKS]; 23];
        let t = quantile_relationships(&preds).unwrap();
        for r in &t.mortality_quantiles {
            assert!(r.intervention_means.iter().all(|v| (*v - 0.3).abs() < 1e-15));
        }
        let sizes: Vec<usize> = t.mortality_quantiles.iter().map(|r| r.count).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
