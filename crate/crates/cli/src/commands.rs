//! One function per pipeline command. Each reads its inputs from the run
//! directory, writes its outputs there and records itself in the manifest.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use icu_policy::analytics::{
    intervention_vectors, kmeans, patient_compare, quantile_groups, radar_profile, scatter_svg, tsne, CompareRow,
    TsneConfig, KMEANS_MAX_ITER, KMEANS_TOL,
};
use icu_policy::baselines::BaselineSet;
use icu_policy::cohort_sim::{generate_cohort, split_cohort, Split};
use icu_policy::eval::{MetricsReport, ModelPredictions};
use icu_policy::features::{encode, Vocabulary, Window};
use icu_policy::io;
use icu_policy::labeling::{derive_labels, InterventionDefs};
use icu_policy::math::Real;
use icu_policy::model::{
    predict, train, write_loss_curve, CellType, CheckpointMeta, LabelRow, ModelCheckpoint, PredictionVector,
    Precision, Sample, TrainConfig,
};
use icu_policy::record::PatientRecord;
use icu_policy::tasks::{task_names, Intervention};
use icu_policy::Error as CoreError;
use log::{info, warn};
use serde::Serialize;

use crate::config::{RunConfig, Stage};
use crate::error::CliError;
use crate::manifest::{write_atomic, RunManifest, StageRecord};

pub const COHORT_FILE: &str = "cohort.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const SPLITS_FILE: &str = "splits.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const EXCLUDED_FILE: &str = "excluded.csv";
pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const BASELINES_FILE: &str = "baselines.json";
pub const REPORT_FILE: &str = "report.md";

pub fn checkpoint_file(seed: u64) -> String {
    format!("checkpoints/seed_{seed}.ckpt")
}

pub fn loss_curve_file(seed: u64) -> String {
    format!("curves/loss_seed_{seed}.csv")
}

/// Name of the recurrent model in reports and file names.
pub fn model_name(config: &RunConfig) -> &'static str {
    match config.model.cell_type {
        CellType::Lstm => "lstm",
        CellType::Gru => "gru",
    }
}

pub fn model_predictions_file(config: &RunConfig, seed: u64) -> String {
    format!("predictions/{}_seed_{seed}.csv", model_name(config))
}

struct Run<'a> {
    config: &'a RunConfig,
    dir: PathBuf,
    stage: Stage,
    started: Instant,
    manifest: RunManifest,
    files: Vec<String>,
}

impl<'a> Run<'a> {
    /// Checks upstream stages against the configuration before anything is written.
    fn begin(config: &'a RunConfig, stage: Stage) -> Result<Self, CliError> {
        let dir = config.io.out_dir.clone();
        let manifest = RunManifest::load_or_new(&dir, &config.hash())?;
        for &up in stage.upstream() {
            manifest.require(up, &config.stage_hash(up))?;
        }
        Ok(Run {
            config,
            dir,
            stage,
            started: Instant::now(),
            manifest,
            files: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Path of a new output, with its parent directory created.
    fn output(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        self.files.push(name.to_string());
        Ok(path)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.output(name)?;
        write_atomic(&path, text.as_bytes())
    }

    fn finish(mut self) -> Result<Vec<String>, CliError> {
        let record = StageRecord {
            input_hash: self.config.stage_hash(self.stage),
            seconds: self.started.elapsed().as_secs_f64(),
            files: self.files.clone(),
        };
        self.manifest.record(self.stage, record);
        self.manifest.save(&self.dir)?;
        info!("{} finished in {:.1}s", self.stage.name(), self.started.elapsed().as_secs_f64());
        Ok(self.files)
    }
}

/// Turns a missing input file into an error naming the command that writes it.
fn artifact<T>(result: icu_policy::Result<T>, command: Stage) -> Result<T, CliError> {
    match result {
        Err(CoreError::Io { path, source }) if source.kind() == std::io::ErrorKind::NotFound => {
            Err(CliError::MissingArtifact {
                what: path.display().to_string(),
                command: command.name(),
            })
        }
        other => Ok(other?),
    }
}

/// Generates or ingests the cohort and assigns splits.
pub fn simulate(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let mut run = Run::begin(config, Stage::Simulate)?;
    let (records, truth) = match &config.io.cohort {
        Some(path) => {
            info!("reading cohort from {}", path.display());
            (io::read_cohort(path)?, None)
        }
        None => {
            info!("simulating {} patients", config.sim.n_patients);
            let (records, truth) = generate_cohort(&config.sim)?;
            (records, Some(truth))
        }
    };
    let [a, b, c] = config.split.ratios;
    let assignment = split_cohort(records.len(), (a, b, c), config.split.seed)?;
    let membership = assignment.membership(records.len());
    info!(
        "split {} / {} / {}",
        assignment.train.len(),
        assignment.validation.len(),
        assignment.test.len()
    );
    let path = run.output(COHORT_FILE)?;
    io::write_cohort(&path, &records)?;
    if let Some(truth) = truth {
        let path = run.output(GROUND_TRUTH_FILE)?;
        io::write_ground_truth(&path, &truth)?;
    }
    let rows: Vec<(String, Split)> = records
        .iter()
        .zip(&membership)
        .map(|(r, s)| (r.patient_id.clone(), *s))
        .collect();
    let path = run.output(SPLITS_FILE)?;
    io::write_splits(&path, &rows)?;
    run.finish()
}

/// Derives labels for every stay meeting the inclusion rule and builds the
/// vocabulary from the training split.
pub fn label(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let mut run = Run::begin(config, Stage::Label)?;
    let defs = match &config.io.interventions {
        Some(path) => InterventionDefs::load(path)?,
        None => InterventionDefs::default(),
    };
    let records = artifact(io::read_cohort(&run.path(COHORT_FILE)), Stage::Simulate)?;
    let splits = split_lookup(artifact(io::read_splits(&run.path(SPLITS_FILE)), Stage::Simulate)?);
    let mut labeled = Vec::new();
    let mut excluded = String::from("patient_id,reason\n");
    let mut train_records = Vec::new();
    for record in &records {
        match derive_labels(record, &defs) {
            Ok(labels) => {
                if split_of(&splits, &record.patient_id)? == Split::Train {
                    train_records.push(record.clone());
                }
                labeled.push((record.patient_id.clone(), labels));
            }
            Err(CoreError::Horizon { patient_id, message }) => {
                warn!("excluding {patient_id}: {message}");
                let _ = writeln!(excluded, "{},\"{}\"", patient_id, message.replace('"', "\"\""));
            }
            Err(e) => return Err(e.into()),
        }
    }
    info!("labeled {} stays, excluded {}", labeled.len(), records.len() - labeled.len());
    let path = run.output(LABELS_FILE)?;
    io::write_labels(&path, &labeled)?;
    run.write(EXCLUDED_FILE, &excluded)?;
    let vocab = Vocabulary::build(&train_records, Window::default())?;
    info!("vocabulary of {} entries", vocab.size());
    let path = run.output(VOCABULARY_FILE)?;
    vocab.save(&path)?;
    run.finish()
}

fn split_lookup(rows: Vec<(String, Split)>) -> HashMap<String, Split> {
    rows.into_iter().collect()
}

fn split_of(splits: &HashMap<String, Split>, id: &str) -> Result<Split, CliError> {
    splits.get(id).copied().ok_or_else(|| CliError::StaleArtifact {
        what: format!("{SPLITS_FILE} (no entry for {id})"),
        command: Stage::Simulate.name(),
    })
}

/// Labeled stays of one split, in cohort order.
pub struct SplitData {
    pub records: Vec<PatientRecord>,
    pub labels: Vec<LabelRow>,
}

impl SplitData {
    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.patient_id.clone()).collect()
    }
}

fn load_split(run: &Run, split: Split) -> Result<SplitData, CliError> {
    let records = artifact(io::read_cohort(&run.path(COHORT_FILE)), Stage::Simulate)?;
    let splits = split_lookup(artifact(io::read_splits(&run.path(SPLITS_FILE)), Stage::Simulate)?);
    let labels: HashMap<String, LabelRow> = artifact(io::read_labels(&run.path(LABELS_FILE)), Stage::Label)?
        .into_iter()
        .map(|(id, l)| (id, l.to_array()))
        .collect();
    let mut out = SplitData {
        records: Vec::new(),
        labels: Vec::new(),
    };
    for record in records {
        if let Some(l) = labels.get(&record.patient_id) {
            if split_of(&splits, &record.patient_id)? == split {
                out.labels.push(*l);
                out.records.push(record);
            }
        }
    }
    Ok(out)
}

fn load_vocabulary(run: &Run) -> Result<Vocabulary, CliError> {
    artifact(Vocabulary::load(&run.path(VOCABULARY_FILE)), Stage::Label)
}

fn samples(data: &SplitData, vocab: &Vocabulary) -> Vec<Sample> {
    data.records
        .iter()
        .zip(&data.labels)
        .map(|(r, l)| Sample {
            sequence: encode(r, vocab),
            labels: *l,
        })
        .collect()
}

/// Trains one recurrent model per seed and fits the severity baselines.
pub fn train_models(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let mut run = Run::begin(config, Stage::Train)?;
    let vocab = load_vocabulary(&run)?;
    let train_data = load_split(&run, Split::Train)?;
    let val_data = load_split(&run, Split::Validation)?;
    if train_data.records.is_empty() || val_data.records.is_empty() {
        return Err(CliError::Config(
            "the training and validation splits must both be non-empty".into(),
        ));
    }
    let train_samples = samples(&train_data, &vocab);
    let val_samples = samples(&val_data, &vocab);
    for &seed in &config.seeds {
        let train_config = TrainConfig {
            seed,
            ..config.train.clone()
        };
        info!("training seed {seed}");
        let (checkpoint, curve) = match config.precision {
            Precision::Single => fit_one::<f32>(config, &train_config, &train_samples, &val_samples, &vocab)?,
            Precision::Double => fit_one::<f64>(config, &train_config, &train_samples, &val_samples, &vocab)?,
        };
        let path = run.output(&checkpoint_file(seed))?;
        checkpoint.save(&path)?;
        let path = run.output(&loss_curve_file(seed))?;
        write_loss_curve(&path, &curve)?;
    }
    info!("fitting baselines");
    let baselines = BaselineSet::fit(&train_data.records, &train_data.labels, config.eval.baseline_l2)?;
    for model in &baselines.models {
        let degenerate = model.degenerate_tasks();
        if !degenerate.is_empty() {
            warn!("{}: single-class tasks predicted by prevalence: {degenerate:?}", model.variant.name());
        }
    }
    let path = run.output(BASELINES_FILE)?;
    baselines.save(&path)?;
    run.finish()
}

fn fit_one<F: Real>(
    config: &RunConfig,
    train_config: &TrainConfig,
    train_samples: &[Sample],
    val_samples: &[Sample],
    vocab: &Vocabulary,
) -> Result<(ModelCheckpoint, Vec<icu_policy::model::CurvePoint>), CliError> {
    let outcome = train::<F>(train_samples, val_samples, &config.model, train_config, vocab.size())?;
    info!(
        "seed {}: best validation loss {} at step {} of {}{}",
        train_config.seed,
        outcome.best_val_loss.map_or("n/a".to_string(), |v| format!("{v:.4}")),
        outcome.best_step,
        outcome.steps_run,
        if outcome.stopped_early { " (stopped early)" } else { "" }
    );
    let meta = CheckpointMeta {
        model: config.model.clone(),
        vocab_size: vocab.size(),
        vocab_fingerprint: vocab.fingerprint(),
        step: outcome.best_step,
        seed: train_config.seed,
        precision: config.precision,
    };
    Ok((ModelCheckpoint::new(meta, &outcome.params), outcome.curve))
}

fn load_checkpoint(run: &Run, seed: u64) -> Result<ModelCheckpoint, CliError> {
    artifact(ModelCheckpoint::load(&run.path(&checkpoint_file(seed))), Stage::Train)
}

/// `patient_id` followed by one probability column per task.
pub fn predictions_csv(ids: &[String], preds: &[PredictionVector]) -> String {
    let mut out = String::from("patient_id");
    for name in task_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (id, p) in ids.iter().zip(preds) {
        out.push_str(id);
        for v in p {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Scores the test split with every model and writes the metric tables.
pub fn evaluate(config: &RunConfig) -> Result<MetricsReport, CliError> {
    let mut run = Run::begin(config, Stage::Evaluate)?;
    let vocab = load_vocabulary(&run)?;
    let test = load_split(&run, Split::Test)?;
    if test.records.is_empty() {
        return Err(CliError::Config("the test split is empty".into()));
    }
    let ids = test.ids();
    let mut model = ModelPredictions {
        model: model_name(config).to_string(),
        runs: Vec::new(),
    };
    for &seed in &config.seeds {
        let checkpoint = load_checkpoint(&run, seed)?;
        let preds = predict(&checkpoint, &test.records, &vocab)?;
        run.write(&model_predictions_file(config, seed), &predictions_csv(&ids, &preds))?;
        model.runs.push(preds);
    }
    let baselines = artifact(BaselineSet::load(&run.path(BASELINES_FILE)), Stage::Train)?;
    let mut models = vec![model];
    for baseline in &baselines.models {
        let preds = baseline.predict_all(&test.records)?;
        let name = baseline.variant.name();
        run.write(&format!("predictions/{name}.csv"), &predictions_csv(&ids, &preds))?;
        models.push(ModelPredictions {
            model: name.to_string(),
            runs: vec![preds],
        });
    }
    let report = MetricsReport::build(&models, &test.labels)?;
    let metrics_dir = run.path("metrics");
    std::fs::create_dir_all(&metrics_dir).map_err(|e| CoreError::Io {
        path: metrics_dir.clone(),
        source: e,
    })?;
    for name in report.write_all(&metrics_dir)? {
        run.files.push(format!("metrics/{name}"));
    }
    run.finish()?;
    Ok(report)
}

#[derive(Serialize)]
struct ClusterSummary<'a> {
    k: usize,
    n_points: usize,
    inertia: f64,
    iterations: usize,
    centroids: &'a [Vec<f64>],
    initial_kl: f64,
    kl: f64,
}

/// Clusters and embeds the intervention predictions of the first seed's
/// model on the test split.
pub fn analyze(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let mut run = Run::begin(config, Stage::Analyze)?;
    let a = &config.analytics;
    let vocab = load_vocabulary(&run)?;
    let checkpoint = load_checkpoint(&run, config.seeds[0])?;
    let mut test = load_split(&run, Split::Test)?;
    test.records.truncate(a.max_points);
    let ids = test.ids();
    let preds = predict(&checkpoint, &test.records, &vocab)?;
    let points = intervention_vectors(&preds);
    let clusters = kmeans(&points, a.k, a.kmeans_seed, KMEANS_MAX_ITER, KMEANS_TOL)?;
    let embedding = tsne(
        &points,
        &TsneConfig {
            perplexity: a.perplexity,
            iterations: a.tsne_iterations,
            seed: a.tsne_seed,
            ..TsneConfig::default()
        },
    )?;
    info!("t-SNE KL {:.4} -> {:.4}", embedding.initial_kl, embedding.kl);
    let mortality: Vec<f64> = preds.iter().map(|p| p[0]).collect();
    let scores: Vec<f64> = preds.iter().map(|p| p[1..].iter().sum()).collect();
    let mortality_q = quantile_groups(&mortality, a.quantile_groups)?;
    let score_q = quantile_groups(&scores, a.quantile_groups)?;

    let mut csv = String::from("patient_id,x,y,cluster,mortality_quantile,intervention_score_quantile\n");
    for i in 0..ids.len() {
        let [x, y] = embedding.coords[i];
        let _ = writeln!(csv, "{},{x},{y},{},{},{}", ids[i], clusters.assignments[i], mortality_q[i], score_q[i]);
    }
    run.write("analysis/embedding.csv", &csv)?;

    let radar = radar_profile(&clusters.assignments, a.k, &preds)?;
    let mut csv = String::from("cluster,intervention,cluster_mean,global_mean\n");
    for profile in &radar.clusters {
        for (j, intervention) in Intervention::ALL.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                profile.cluster,
                intervention.name(),
                profile.means[j],
                radar.global[j]
            );
        }
    }
    run.write("analysis/radar.csv", &csv)?;

    let summary = ClusterSummary {
        k: a.k,
        n_points: ids.len(),
        inertia: clusters.inertia,
        iterations: clusters.iterations,
        centroids: &clusters.centroids,
        initial_kl: embedding.initial_kl,
        kl: embedding.kl,
    };
    run.write(
        "analysis/clusters.json",
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    let svgs = [
        ("analysis/embedding_cluster.svg", &clusters.assignments, "t-SNE of intervention predictions by cluster"),
        ("analysis/embedding_mortality.svg", &mortality_q, "t-SNE by mortality-risk quantile"),
        ("analysis/embedding_interventions.svg", &score_q, "t-SNE by total intervention score quantile"),
    ];
    for (name, groups, title) in svgs {
        run.write(name, &scatter_svg(&embedding.coords, groups, title))?;
    }
    run.finish()
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Side-by-side intervention probabilities of two stays under the first seed's model.
pub fn compare(config: &RunConfig, id_a: &str, id_b: &str) -> Result<Vec<CompareRow>, CliError> {
    let mut run = Run::begin(config, Stage::Compare)?;
    let vocab = load_vocabulary(&run)?;
    let checkpoint = load_checkpoint(&run, config.seeds[0])?;
    let records = artifact(io::read_cohort(&run.path(COHORT_FILE)), Stage::Simulate)?;
    let find = |id: &str| {
        records
            .iter()
            .find(|r| r.patient_id == id)
            .cloned()
            .ok_or_else(|| CoreError::UnknownPatient(id.to_string()))
    };
    let pair = [find(id_a)?, find(id_b)?];
    let preds = predict(&checkpoint, &pair, &vocab)?;
    let ids = [id_a.to_string(), id_b.to_string()];
    let rows = patient_compare(&ids, &preds, id_a, id_b)?;
    let mut csv = String::from("intervention,prob_a,prob_b,difference\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{}", r.intervention, r.prob_a, r.prob_b, r.difference);
    }
    run.write(&format!("compare/{}_vs_{}.csv", file_safe(id_a), file_safe(id_b)), &csv)?;
    run.finish()?;
    Ok(rows)
}

fn stat(s: &Option<icu_policy::eval::RunStat>) -> String {
    match s {
        None => "n/a".into(),
        Some(s) => match s.std {
            Some(sd) => format!("{:.3} ± {:.3}", s.mean, sd),
            None => format!("{:.3}", s.mean),
        },
    }
}

/// Markdown summary of the evaluation tables.
pub fn render_report(report: &MetricsReport, files: &[String]) -> String {
    let mut md = String::from("# Run report\n\n");
    let _ = writeln!(md, "Test stays: {}\n", report.n_test);
    for (title, pick) in [("AUROC", true), ("AUPRC", false)] {
        let _ = writeln!(md, "## {title} by task\n");
        md.push_str("| task |");
        for m in &report.models {
            let _ = write!(md, " {} ({} runs) |", m.model, m.runs);
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(report.models.len()));
        md.push('\n');
        for (j, name) in task_names().iter().enumerate() {
            let _ = write!(md, "| {name} |");
            for m in &report.models {
                let t = &m.tasks[j];
                let _ = write!(md, " {} |", stat(if pick { &t.auroc } else { &t.auprc }));
            }
            md.push('\n');
        }
        md.push('\n');
    }
    md.push_str("## Precision@I\n\nGrouped by the number I of interventions a stay receives.\n\n| I |");
    for m in &report.models {
        let _ = write!(md, " {} |", m.model);
    }
    md.push_str(" stays |\n|---|");
    md.push_str(&"---|".repeat(report.models.len() + 1));
    md.push('\n');
    let groups = &report.models[0].precision_at_i;
    for (g, row) in groups.iter().enumerate() {
        let _ = write!(md, "| {} |", row.group);
        for m in &report.models {
            let r = &m.precision_at_i[g];
            let cell = match (r.mean, r.std) {
                (Some(mean), Some(sd)) => format!("{mean:.3} ± {sd:.3}"),
                (Some(mean), None) => format!("{mean:.3}"),
                _ => "n/a".into(),
            };
            let _ = write!(md, " {cell} |");
        }
        let _ = writeln!(md, " {} |", row.count);
    }
    md.push_str("\n## Artifacts\n\n");
    for f in files {
        let _ = writeln!(md, "- `{f}`");
    }
    md
}

pub fn report(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let mut run = Run::begin(config, Stage::Report)?;
    let path = run.path("metrics/metrics.json");
    let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingArtifact {
            what: path.display().to_string(),
            command: Stage::Evaluate.name(),
        },
        _ => CoreError::Io { path: path.clone(), source: e }.into(),
    })?;
    let report = MetricsReport::from_json(&text)?;
    let files = run.manifest.files();
    run.write(REPORT_FILE, &render_report(&report, &files))?;
    run.finish()
}
