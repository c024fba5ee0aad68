//! Reproducible synthetic ICU cohorts.
//!
//! Each patient carries a latent state (severity, six organ factors, a
//! deterioration slope and one propensity per intervention). Label
//! probabilities are logistic in that state, with intercepts bisected so
//! every task hits its target prevalence. The realized labels are then
//! written back into the event stream: positives get at least one family
//! code after the 24h prediction time, negatives get none.
//!
//! What the observation window reveals:
//! - organ factors and severity, through noisy vitals and labs (visible to
//!   the static baselines as worst values);
//! - intervention propensities, through ongoing doses from the same drug
//!   families (not used by the baselines);
//! - the deterioration slope, through an hourly lactate trend. It enters
//!   the mortality logit nonlinearly and no worst-value summary captures it.

mod config;
mod split;

pub use config::{SimConfig, DEFAULT_PREVALENCES};
pub use split::{split_cohort, Split, SplitAssignment, DEFAULT_RATIOS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use std::collections::HashMap;

use crate::codes::{filler_code, intervention_codes, SAPS_CODES, SOFA_CODES, TREND_CODE};
use crate::error::Result;
use crate::labeling::{LabelVector, PREDICTION_HOURS};
use crate::math::sigmoid;
use crate::record::{Code, Event, PatientRecord};
use crate::tasks::{Intervention, NUM_INTERVENTIONS, NUM_TASKS};

pub const NUM_ORGANS: usize = 6;
const RESPIRATORY: usize = 0;
const COAGULATION: usize = 1;
const LIVER: usize = 2;
const CARDIOVASCULAR: usize = 3;
const CNS: usize = 4;
const RENAL: usize = 5;

/// Latent draws used to bisect the label intercepts.
const CALIBRATION_SAMPLE: usize = 40_000;
const PROPENSITY_WEIGHT: f64 = 1.2;

/// Unobserved patient state.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub severity: f64,
    pub organ_factors: [f64; NUM_ORGANS],
    pub deterioration_slope: f64,
    pub propensities: [f64; NUM_INTERVENTIONS],
}

impl LatentState {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let severity = normal();
        let organ_factors = std::array::from_fn(|_| normal());
        let deterioration_slope = normal();
        let propensities = std::array::from_fn(|_| normal());
        LatentState {
            severity,
            organ_factors,
            deterioration_slope,
            propensities,
        }
    }

    /// Organ dysfunction as seen in measurements: shared severity plus the
    /// organ-specific factor.
    fn organ_level(&self, organ: usize) -> f64 {
        0.55 * self.severity + 0.85 * self.organ_factors[organ]
    }
}

/// Severity coupling and organ loadings of one intervention's logit.
struct Loading {
    coupling: f64,
    organs: &'static [(usize, f64)],
}

fn loading(intervention: Intervention) -> Loading {
    let (coupling, organs): (f64, &'static [(usize, f64)]) = match intervention {
        Intervention::Vasopressors => (1.2, &[(CARDIOVASCULAR, 0.8)]),
        Intervention::Inotropes => (0.8, &[(CARDIOVASCULAR, 0.6)]),
        Intervention::Sedation => (0.4, &[(RESPIRATORY, 0.5), (CNS, 0.3)]),
        Intervention::Analgesic => (0.2, &[]),
        Intervention::Anticoagulation => (0.1, &[(COAGULATION, -0.3)]),
        Intervention::Diuretic => (0.2, &[(RENAL, 0.4), (RESPIRATORY, 0.3)]),
        Intervention::Paralytic => (0.8, &[(RESPIRATORY, 0.8)]),
        Intervention::ColloidBolus => (0.5, &[(CARDIOVASCULAR, 0.5)]),
        Intervention::CrystalloidBolus => (0.3, &[(CARDIOVASCULAR, 0.4), (RENAL, 0.3)]),
        Intervention::FfpTransfusion => (0.4, &[(COAGULATION, 0.9), (LIVER, 0.5)]),
        Intervention::RbcTransfusion => (0.4, &[(COAGULATION, 0.4)]),
        Intervention::Ventilation => (0.6, &[(RESPIRATORY, 0.9), (CNS, 0.4)]),
        Intervention::Antibiotic => (0.3, &[]),
    };
    Loading { coupling, organs }
}

/// Label logits without intercepts, in task order.
fn label_scores(latent: &LatentState, config: &SimConfig) -> [f64; NUM_TASKS] {
    let mut scores = [0.0; NUM_TASKS];
    let slope = latent.deterioration_slope;
    let trend = 1.5 * slope.max(0.0) + 0.5 * slope * latent.severity;
    scores[0] = 0.9 * latent.severity
        + 0.25
            * (latent.organ_factors[RESPIRATORY]
                + latent.organ_factors[CARDIOVASCULAR]
                + latent.organ_factors[RENAL])
        + config.temporal_signal_strength * trend;
    for intervention in Intervention::ALL {
        let load = loading(intervention);
        let organ: f64 = load
            .organs
            .iter()
            .map(|&(k, w)| w * latent.organ_factors[k])
            .sum();
        scores[intervention.task().index()] = config.coupling_strength * load.coupling * latent.severity
            + organ
            + PROPENSITY_WEIGHT * latent.propensities[intervention.index()];
    }
    scores
}

/// Exact label probabilities of one patient and the labels drawn from them.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub patient_id: String,
    pub probabilities: [f64; NUM_TASKS],
    pub labels: LabelVector,
}

/// Intercepts placing each task's mean probability on its target
/// prevalence over a fixed latent sample.
pub fn calibrate_intercepts(config: &SimConfig) -> [f64; NUM_TASKS] {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let scores: Vec<[f64; NUM_TASKS]> = (0..CALIBRATION_SAMPLE)
        .map(|_| label_scores(&LatentState::draw(&mut rng), config))
        .collect();
    let targets = config.prevalences();
    std::array::from_fn(|task| {
        let mean_prob = |alpha: f64| {
            scores.iter().map(|s| sigmoid(alpha + s[task])).sum::<f64>() / scores.len() as f64
        };
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean_prob(mid) < targets[task] {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        0.5 * (lo + hi)
    })
}

enum Driver {
    Organ(usize),
    Severity,
}

enum Schedule {
    /// Measured each hour with this probability.
    Hourly(f64),
    /// One to four draws at random times.
    Lab,
}

struct Measurement {
    code: &'static str,
    mean: f64,
    sd: f64,
    /// +1 if high values are worse, -1 if low values are worse.
    direction: f64,
    driver: Driver,
    schedule: Schedule,
    decimals: i32,
    bounds: (f64, f64),
}

const fn m(
    code: &'static str,
    mean: f64,
    sd: f64,
    direction: f64,
    driver: Driver,
    schedule: Schedule,
    decimals: i32,
    bounds: (f64, f64),
) -> Measurement {
    Measurement {
        code,
        mean,
        sd,
        direction,
        driver,
        schedule,
        decimals,
        bounds,
    }
}

const INF: f64 = f64::INFINITY;

const MEASUREMENTS: [Measurement; 16] = [
    m("vital:heart_rate", 85.0, 15.0, 1.0, Driver::Organ(CARDIOVASCULAR), Schedule::Hourly(0.75), 0, (20.0, 250.0)),
    m("vital:sbp", 120.0, 18.0, -1.0, Driver::Organ(CARDIOVASCULAR), Schedule::Hourly(0.75), 0, (40.0, 250.0)),
    m("vital:map", 80.0, 12.0, -1.0, Driver::Organ(CARDIOVASCULAR), Schedule::Hourly(0.75), 0, (25.0, 180.0)),
    m("vital:temperature", 37.0, 0.6, 1.0, Driver::Severity, Schedule::Hourly(0.5), 1, (33.0, 42.0)),
    m("vital:resp_rate", 18.0, 4.0, 1.0, Driver::Organ(RESPIRATORY), Schedule::Hourly(0.75), 0, (4.0, 60.0)),
    m("vital:gcs", 13.0, 2.0, -1.0, Driver::Organ(CNS), Schedule::Hourly(0.5), 0, (3.0, 15.0)),
    m("output:urine", 80.0, 30.0, -1.0, Driver::Organ(RENAL), Schedule::Hourly(0.6), 0, (0.0, INF)),
    m("lab:pao2_fio2", 320.0, 80.0, -1.0, Driver::Organ(RESPIRATORY), Schedule::Lab, 0, (30.0, 600.0)),
    m("lab:platelets", 220.0, 70.0, -1.0, Driver::Organ(COAGULATION), Schedule::Lab, 0, (5.0, 900.0)),
    m("lab:bilirubin", 1.2, 0.8, 1.0, Driver::Organ(LIVER), Schedule::Lab, 1, (0.1, 40.0)),
    m("lab:creatinine", 1.1, 0.6, 1.0, Driver::Organ(RENAL), Schedule::Lab, 2, (0.2, 15.0)),
    m("lab:bun", 20.0, 10.0, 1.0, Driver::Organ(RENAL), Schedule::Lab, 0, (2.0, 200.0)),
    m("lab:wbc", 10.0, 4.0, 1.0, Driver::Severity, Schedule::Lab, 1, (0.1, 80.0)),
    m("lab:potassium", 4.2, 0.5, 1.0, Driver::Organ(RENAL), Schedule::Lab, 1, (2.0, 8.0)),
    m("lab:sodium", 139.0, 4.0, -1.0, Driver::Severity, Schedule::Lab, 0, (110.0, 170.0)),
    m("lab:bicarbonate", 24.0, 3.5, -1.0, Driver::Severity, Schedule::Lab, 0, (5.0, 45.0)),
];

/// Interned code tokens and the family structure needed to keep emitted
/// events consistent with realized labels.
struct CodeTable {
    by_name: HashMap<&'static str, Code>,
    filler: Vec<Code>,
    families: Vec<Vec<Code>>,
    /// For each family, for each of its codes, the other families sharing it.
    shared_with: Vec<Vec<Vec<usize>>>,
}

impl CodeTable {
    fn new(config: &SimConfig) -> Self {
        let mut by_name: HashMap<&'static str, Code> = HashMap::new();
        let mut intern = |name: &'static str| by_name.entry(name).or_insert_with(|| name.into()).clone();
        let families: Vec<Vec<Code>> = Intervention::ALL
            .iter()
            .map(|i| intervention_codes(*i).iter().map(|c| intern(c)).collect())
            .collect();
        for code in SOFA_CODES.iter().chain(SAPS_CODES.iter()) {
            intern(code.code);
        }
        for measurement in &MEASUREMENTS {
            intern(measurement.code);
        }
        intern(TREND_CODE);
        let shared_with = Intervention::ALL
            .iter()
            .map(|&fam| {
                intervention_codes(fam)
                    .iter()
                    .map(|code| {
                        Intervention::ALL
                            .iter()
                            .filter(|other| **other != fam && intervention_codes(**other).contains(code))
                            .map(|other| other.index())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let filler = (0..config.filler_count()).map(|i| Code::from(filler_code(i))).collect();
        CodeTable {
            by_name,
            filler,
            families,
            shared_with,
        }
    }

    fn get(&self, name: &str) -> Code {
        self.by_name[name].clone()
    }
}

fn round_to(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (value * scale).round() / scale
}

/// Truncates to millihours, so times never round up across a boundary.
fn floor_time(t: f64) -> f64 {
    (t * 1000.0).floor() / 1000.0
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

struct Generator<'a> {
    config: &'a SimConfig,
    intercepts: [f64; NUM_TASKS],
    codes: CodeTable,
}

impl Generator<'_> {
    fn patient(&self, index: usize) -> (PatientRecord, GroundTruth) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index as u64 + 1);
        let latent = LatentState::draw(&mut rng);
        let scores = label_scores(&latent, self.config);
        let probabilities: [f64; NUM_TASKS] =
            std::array::from_fn(|j| sigmoid(self.intercepts[j] + scores[j]));
        let realized: [bool; NUM_TASKS] = std::array::from_fn(|j| rng.random::<f64>() < probabilities[j]);
        let labels = LabelVector::from_array(realized);

        let [lo, hi] = self.config.stay_length_range.map(|d| d * 24.0);
        let duration = if hi > lo {
            let u: f64 = rng.random();
            (lo.ln() + u * (hi.ln() - lo.ln())).exp().round().clamp(lo.ceil(), hi.floor())
        } else {
            lo
        };
        let in_time = rng.random_range(0..8760u32) as f64;
        let out_time = in_time + duration;
        let death_time = if labels.mortality {
            Some(out_time + floor_time(rng.random_range(0.0..0.45)))
        } else if rng.random::<f64>() < 0.1 {
            Some(out_time + floor_time(rng.random_range(1.0..2000.0)))
        } else {
            None
        };

        let mut events = Vec::with_capacity(256);
        self.window_events(&latent, &mut rng, &mut events);
        self.horizon_events(&labels, duration, &mut rng, &mut events);
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        if events.first().is_none_or(|e| e.t >= PREDICTION_HOURS) {
            events.insert(
                0,
                Event {
                    t: 0.0,
                    code: self.codes.get("vital:heart_rate"),
                    value: Some(85.0),
                },
            );
        }

        let patient_id = format!("P{index:06}");
        (
            PatientRecord {
                patient_id: patient_id.clone(),
                in_time,
                out_time,
                death_time,
                events,
            },
            GroundTruth {
                patient_id,
                probabilities,
                labels,
            },
        )
    }

    fn window_events(&self, latent: &LatentState, rng: &mut ChaCha8Rng, events: &mut Vec<Event>) {
        let severity = latent.severity;
        // Admission status and chronic disease indicators.
        for (code, base) in [
            ("dx:metastatic_cancer", -3.2),
            ("dx:hematologic_malignancy", -3.5),
            ("dx:aids", -4.0),
            ("adm:unscheduled_surgical", -1.2),
        ] {
            if rng.random::<f64>() < sigmoid(base + 0.5 * severity) {
                events.push(Event {
                    t: floor_time(rng.random_range(0.0..0.5)),
                    code: self.codes.get(code),
                    value: None,
                });
            }
        }

        for measurement in &MEASUREMENTS {
            let driver = match measurement.driver {
                Driver::Organ(k) => latent.organ_level(k),
                Driver::Severity => severity,
            };
            let code = self.codes.get(measurement.code);
            let mut emit = |t: f64, rng: &mut ChaCha8Rng| {
                let noise: f64 = rng.sample(StandardNormal);
                let raw = measurement.mean
                    + measurement.sd * (measurement.direction * 0.8 * driver + 0.6 * noise);
                events.push(Event {
                    t: floor_time(t),
                    code: code.clone(),
                    value: Some(round_to(
                        raw.clamp(measurement.bounds.0, measurement.bounds.1),
                        measurement.decimals,
                    )),
                });
            };
            match measurement.schedule {
                Schedule::Hourly(p) => {
                    for hour in 0..PREDICTION_HOURS as usize {
                        if rng.random::<f64>() < p {
                            let t = hour as f64 + rng.random::<f64>();
                            emit(t, rng);
                        }
                    }
                }
                Schedule::Lab => {
                    let draws = 1 + rng.random_range(0..4);
                    for _ in 0..draws {
                        let t = rng.random_range(0.0..PREDICTION_HOURS);
                        emit(t, rng);
                    }
                }
            }
        }

        // Lactate carries the deterioration trend across the window.
        let level: f64 = rng.sample(StandardNormal);
        let trend = self.codes.get(TREND_CODE);
        for hour in 0..PREDICTION_HOURS as usize {
            if rng.random::<f64>() < 0.6 {
                let t = hour as f64 + rng.random::<f64>();
                let noise: f64 = rng.sample(StandardNormal);
                let value = 1.8
                    + 0.4 * severity
                    + 0.5 * level
                    + 0.12 * latent.deterioration_slope * (t - 12.0)
                    + 0.25 * noise;
                events.push(Event {
                    t: floor_time(t),
                    code: trend.clone(),
                    value: Some(round_to(value.clamp(0.3, 30.0), 2)),
                });
            }
        }

        // Ongoing therapy: a family started during the window is dosed
        // repeatedly until the prediction time. Higher propensity makes a
        // start more likely and doses more frequent.
        for intervention in Intervention::ALL {
            let propensity = latent.propensities[intervention.index()];
            if rng.random::<f64>() >= sigmoid(2.5 * propensity - 1.0) {
                continue;
            }
            let family = &self.codes.families[intervention.index()];
            let interval = 5.0 - 3.5 * sigmoid(propensity);
            let mut t = rng.random_range(0.0..PREDICTION_HOURS);
            while t < PREDICTION_HOURS {
                let code = family[rng.random_range(0..family.len())].clone();
                events.push(Event {
                    t: floor_time(t),
                    code,
                    value: None,
                });
                t += interval * rng.random_range(0.75..1.25);
            }
        }

        let rate = self.config.events_per_hour_rate;
        if !self.codes.filler.is_empty() {
            for _ in 0..poisson(rng, rate * PREDICTION_HOURS) {
                let t = rng.random_range(0.0..PREDICTION_HOURS);
                events.push(self.filler_event(floor_time(t), rng));
            }
        }
    }

    fn horizon_events(&self, labels: &LabelVector, duration: f64, rng: &mut ChaCha8Rng, events: &mut Vec<Event>) {
        let start = PREDICTION_HOURS + 0.01;
        let horizon_time = |rng: &mut ChaCha8Rng| floor_time(start + rng.random::<f64>() * (duration - start));

        for intervention in Intervention::ALL {
            let j = intervention.index();
            if !labels.interventions[j] {
                continue;
            }
            // Only codes that cannot switch on a family whose label is 0.
            let allowed: Vec<&Code> = self.codes.families[j]
                .iter()
                .zip(&self.codes.shared_with[j])
                .filter(|(_, others)| others.iter().all(|&o| labels.interventions[o]))
                .map(|(code, _)| code)
                .collect();
            let count = 1 + poisson(rng, 1.0);
            for _ in 0..count {
                let code = allowed[rng.random_range(0..allowed.len())].clone();
                events.push(Event {
                    t: horizon_time(rng),
                    code,
                    value: None,
                });
            }
        }

        if !self.codes.filler.is_empty() {
            let mean = self.config.events_per_hour_rate * (duration - PREDICTION_HOURS);
            for _ in 0..poisson(rng, mean) {
                let t = horizon_time(rng);
                events.push(self.filler_event(t, rng));
            }
        }
    }

    fn filler_event(&self, t: f64, rng: &mut ChaCha8Rng) -> Event {
        let index = rng.random_range(0..self.codes.filler.len());
        let value = if index % 2 == 0 {
            let noise: f64 = rng.sample(StandardNormal);
            Some(round_to(50.0 + 5.0 * (index % 7) as f64 + 10.0 * noise, 2))
        } else {
            None
        };
        Event {
            t,
            code: self.codes.filler[index].clone(),
            value,
        }
    }
}

/// Generates `config.n_patients` stays with one ground-truth entry each.
///
/// Patient `i` depends only on `(config, i)`: growing the cohort appends
/// patients without changing earlier ones. Generation runs on the current
/// rayon pool; output order and content do not depend on the thread count.
pub fn generate_cohort(config: &SimConfig) -> Result<(Vec<PatientRecord>, Vec<GroundTruth>)> {
    config.validate()?;
    let generator = Generator {
        config,
        intercepts: calibrate_intercepts(config),
        codes: CodeTable::new(config),
    };
    Ok((0..config.n_patients)
        .into_par_iter()
        .map(|i| generator.patient(i))
        .unzip())
}

/// Latent state of patient `index`, as drawn during generation.
pub fn latent_state(config: &SimConfig, index: usize) -> LatentState {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);
    LatentState::draw(&mut rng)
}
