//! Patient records: one ICU stay as a stream of timestamped coded events.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Shared code token. Records hold many events with repeated codes.
pub type Code = Arc<str>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Hours since ICU admission.
    pub t: f64,
    pub code: Code,
    pub value: Option<f64>,
}

/// One ICU stay. `in_time`, `out_time` and `death_time` are absolute hours;
/// event times are relative to `in_time`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub patient_id: String,
    pub in_time: f64,
    pub out_time: f64,
    pub death_time: Option<f64>,
    pub events: Vec<Event>,
}

impl PatientRecord {
    pub fn duration_hours(&self) -> f64 {
        self.out_time - self.in_time
    }

    /// Checks ordering and time bounds of an ingested record.
    pub fn validate(&self) -> Result<()> {
        let integrity = |message: String| Error::DataIntegrity {
            patient_id: self.patient_id.clone(),
            message,
        };
        if !(self.in_time.is_finite() && self.out_time.is_finite()) {
            return Err(integrity("non-finite stay boundaries".into()));
        }
        if self.out_time <= self.in_time {
            return Err(integrity("out_time is not after in_time".into()));
        }
        let duration = self.duration_hours();
        let mut last = f64::NEG_INFINITY;
        for event in &self.events {
            if !event.t.is_finite() || event.t < 0.0 || event.t > duration {
                return Err(integrity(format!(
                    "event `{}` at t={} lies outside the stay",
                    event.code, event.t
                )));
            }
            if event.t < last {
                return Err(integrity("events are not sorted by time".into()));
            }
            if event.value.is_some_and(|v| !v.is_finite()) {
                return Err(integrity(format!("event `{}` has a non-finite value", event.code)));
            }
            last = event.t;
        }
        Ok(())
    }

    /// Events with `t` strictly inside the first `hours` of the stay.
    pub fn window(&self, hours: f64) -> impl Iterator<Item = &Event> {
        self.events.iter().take_while(move |e| e.t < hours)
    }
}
