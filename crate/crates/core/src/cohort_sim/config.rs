use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::codes::reserved_codes;
use crate::error::{Error, Result};
use crate::tasks::{Task, NUM_TASKS};

/// Label prevalences of the reference training cohort, in task order.
pub const DEFAULT_PREVALENCES: [f64; NUM_TASKS] = [
    0.089, // mortality
    0.167, // vasopressors
    0.045, // inotropes
    0.243, // sedation
    0.268, // analgesic
    0.298, // anticoagulation
    0.186, // diuretic
    0.009, // paralytic
    0.062, // colloid bolus
    0.396, // crystalloid bolus
    0.053, // ffp transfusion
    0.309, // rbc transfusion
    0.130, // ventilation
    0.866, // antibiotic
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub vocab_size: usize,
    /// Inclusive stay length bounds in days.
    pub stay_length_range: [f64; 2],
    /// Mean rate of background events per hour of stay.
    pub events_per_hour_rate: f64,
    pub prevalence_targets: BTreeMap<String, f64>,
    /// Scales how strongly shared severity drives intervention logits.
    pub coupling_strength: f64,
    /// Scales the deterioration-trend term of the mortality logit.
    pub temporal_signal_strength: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_patients: 1000,
            seed: 0,
            vocab_size: 500,
            stay_length_range: [2.0, 14.0],
            events_per_hour_rate: 1.0,
            prevalence_targets: Task::ALL
                .iter()
                .zip(DEFAULT_PREVALENCES)
                .map(|(t, p)| (t.name().to_string(), p))
                .collect(),
            coupling_strength: 1.0,
            temporal_signal_strength: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::config("sim.n_patients", "must be at least 1"));
        }
        let [lo, hi] = self.stay_length_range;
        if !(lo.is_finite() && hi.is_finite()) || lo < 2.0 || hi > 14.0 || lo > hi {
            return Err(Error::config(
                "sim.stay_length_range",
                format!("[{lo}, {hi}] must satisfy 2 <= min <= max <= 14 days"),
            ));
        }
        if !(self.events_per_hour_rate.is_finite() && self.events_per_hour_rate > 0.0) {
            return Err(Error::config("sim.events_per_hour_rate", "must be a positive real"));
        }
        let reserved = reserved_codes().len();
        if self.vocab_size < reserved {
            return Err(Error::config(
                "sim.vocab_size",
                format!("must be at least {reserved} (intervention and severity codes)"),
            ));
        }
        if self.prevalence_targets.len() != NUM_TASKS {
            return Err(Error::config(
                "sim.prevalence_targets",
                format!("expected {NUM_TASKS} entries, found {}", self.prevalence_targets.len()),
            ));
        }
        for (name, p) in &self.prevalence_targets {
            if name.parse::<Task>().is_err() {
                return Err(Error::config(
                    format!("sim.prevalence_targets.{name}"),
                    "unknown task name",
                ));
            }
            if !(*p > 0.0 && *p < 1.0) {
                return Err(Error::config(
                    format!("sim.prevalence_targets.{name}"),
                    format!("{p} is not in (0, 1)"),
                ));
            }
        }
        for (field, v) in [
            ("sim.coupling_strength", self.coupling_strength),
            ("sim.temporal_signal_strength", self.temporal_signal_strength),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be a finite real >= 0"));
            }
        }
        Ok(())
    }

    /// Targets in task order. Assumes a validated config.
    pub fn prevalences(&self) -> [f64; NUM_TASKS] {
        Task::ALL.map(|t| self.prevalence_targets[t.name()])
    }

    /// Number of background codes beyond the reserved clinical ones.
    pub fn filler_count(&self) -> usize {
        self.vocab_size - reserved_codes().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(err: Error) -> String {
        match err {
            Error::Config { field, .. } => field,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn default_is_valid() {
        SimConfig::default().validate().unwrap();
        assert_eq!(SimConfig::default().prevalences()[0], 0.089);
    }

    #[test]
    fn errors_name_the_field() {
        let mut c = SimConfig::default();
        c.stay_length_range = [1.0, 14.0];
        assert_eq!(field_of(c.validate().unwrap_err()), "sim.stay_length_range");

        let mut c = SimConfig::default();
        c.prevalence_targets.insert("ventilation".into(), 1.0);
        assert_eq!(
            field_of(c.validate().unwrap_err()),
            "sim.prevalence_targets.ventilation"
        );

        let mut c = SimConfig::default();
        c.prevalence_targets.remove("mortality");
        assert_eq!(field_of(c.validate().unwrap_err()), "sim.prevalence_targets");

        let mut c = SimConfig::default();
        c.vocab_size = 10;
        assert_eq!(field_of(c.validate().unwrap_err()), "sim.vocab_size");

        let mut c = SimConfig::default();
        c.n_patients = 0;
        assert_eq!(field_of(c.validate().unwrap_err()), "sim.n_patients");
    }
}
