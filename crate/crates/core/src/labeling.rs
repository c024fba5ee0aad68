//! Label derivation: in-ICU mortality and thirteen future-intervention
//! onsets, evaluated over the prediction horizon.
//!
//! An intervention label is positive iff a code from its family occurs
//! strictly after the prediction time (24h after admission) and no later
//! than ICU discharge. Events inside the observation window never set a
//! label.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::codes::intervention_codes;
use crate::error::{Error, Result};
use crate::record::PatientRecord;
use crate::tasks::{Intervention, NUM_INTERVENTIONS, NUM_TASKS};

/// Hours after admission at which predictions are made.
pub const PREDICTION_HOURS: f64 = 24.0;
/// Deaths this long after ICU discharge still count as in-ICU deaths.
pub const MORTALITY_TOLERANCE_HOURS: f64 = 0.5;

/// The fourteen binary targets of one stay.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub mortality: bool,
    pub interventions: [bool; NUM_INTERVENTIONS],
}

impl LabelVector {
    /// Labels in task order (mortality first).
    pub fn to_array(&self) -> [bool; NUM_TASKS] {
        let mut out = [false; NUM_TASKS];
        out[0] = self.mortality;
        out[1..].copy_from_slice(&self.interventions);
        out
    }

    pub fn from_array(values: [bool; NUM_TASKS]) -> Self {
        let mut interventions = [false; NUM_INTERVENTIONS];
        interventions.copy_from_slice(&values[1..]);
        LabelVector {
            mortality: values[0],
            interventions,
        }
    }

    pub fn intervention_count(&self) -> usize {
        self.interventions.iter().filter(|b| **b).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    OnsetOfAnyCode,
    PresenceOfItem,
    DurationOnset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionDef {
    pub name: Intervention,
    pub mode: LabelMode,
    pub codes: Vec<String>,
}

/// Validated set of thirteen definitions with a code → family index.
#[derive(Clone, Debug)]
pub struct InterventionDefs {
    defs: Vec<InterventionDef>,
    by_code: HashMap<String, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DefEntry {
    mode: LabelMode,
    codes: Vec<String>,
}

impl InterventionDefs {
    pub fn new(mut defs: Vec<InterventionDef>) -> Result<Self> {
        defs.sort_by_key(|d| d.name.index());
        for (i, expected) in Intervention::ALL.iter().enumerate() {
            match defs.get(i) {
                Some(d) if d.name == *expected => {
                    if d.codes.is_empty() {
                        return Err(Error::config(
                            format!("interventions.{expected}.codes"),
                            "code set is empty",
                        ));
                    }
                }
                _ => {
                    return Err(Error::config(
                        "interventions",
                        format!("expected exactly one definition per intervention; `{expected}` missing or duplicated"),
                    ))
                }
            }
        }
        if defs.len() != NUM_INTERVENTIONS {
            return Err(Error::config("interventions", "duplicate definitions"));
        }
        let mut by_code: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, def) in defs.iter().enumerate() {
            for code in &def.codes {
                let slot = by_code.entry(code.clone()).or_default();
                if !slot.contains(&i) {
                    slot.push(i);
                }
            }
        }
        Ok(InterventionDefs { defs, by_code })
    }

    pub fn defs(&self) -> &[InterventionDef] {
        &self.defs
    }

    pub fn get(&self, intervention: Intervention) -> &InterventionDef {
        &self.defs[intervention.index()]
    }

    /// Families a code belongs to.
    pub fn families_of(&self, code: &str) -> &[usize] {
        self.by_code.get(code).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, DefEntry> =
            serde_json::from_str(text).map_err(|e| Error::json("intervention definitions", e))?;
        let mut defs = Vec::with_capacity(raw.len());
        for (name, entry) in raw {
            let name: Intervention = name
                .parse()
                .map_err(|m: String| Error::config("interventions", m))?;
            defs.push(InterventionDef {
                name,
                mode: entry.mode,
                codes: entry.codes,
            });
        }
        Self::new(defs)
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<&str, DefEntry> = self
            .defs
            .iter()
            .map(|d| {
                (
                    d.name.name(),
                    DefEntry {
                        mode: d.mode,
                        codes: d.codes.clone(),
                    },
                )
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("definitions serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Default for InterventionDefs {
    fn default() -> Self {
        let defs = Intervention::ALL
            .iter()
            .map(|&name| {
                let mode = match name {
                    Intervention::ColloidBolus
                    | Intervention::CrystalloidBolus
                    | Intervention::FfpTransfusion
                    | Intervention::RbcTransfusion => LabelMode::PresenceOfItem,
                    Intervention::Ventilation => LabelMode::DurationOnset,
                    _ => LabelMode::OnsetOfAnyCode,
                };
                InterventionDef {
                    name,
                    mode,
                    codes: intervention_codes(name).iter().map(|c| c.to_string()).collect(),
                }
            })
            .collect();
        InterventionDefs::new(defs).expect("built-in definitions are valid")
    }
}

/// Prediction horizon of a stay, in hours relative to admission.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonSpec {
    pub prediction_time: f64,
    pub horizon_end: f64,
}

impl HorizonSpec {
    pub fn for_record(record: &PatientRecord) -> Result<Self> {
        let horizon_end = record.duration_hours();
        if !(horizon_end > PREDICTION_HOURS) {
            return Err(Error::Horizon {
                patient_id: record.patient_id.clone(),
                message: format!(
                    "stay of {horizon_end} hours ends before the {PREDICTION_HOURS}h prediction time"
                ),
            });
        }
        Ok(HorizonSpec {
            prediction_time: PREDICTION_HOURS,
            horizon_end,
        })
    }
}

/// Thirteen intervention bits in task order.
pub fn derive_intervention_labels(
    record: &PatientRecord,
    defs: &InterventionDefs,
    horizon: HorizonSpec,
) -> Result<[bool; NUM_INTERVENTIONS]> {
    if !(horizon.horizon_end > horizon.prediction_time) || record.duration_hours() <= PREDICTION_HOURS {
        return Err(Error::Horizon {
            patient_id: record.patient_id.clone(),
            message: "prediction time is not before the end of the stay".into(),
        });
    }
    let mut bits = [false; NUM_INTERVENTIONS];
    for event in &record.events {
        if event.t <= horizon.prediction_time || event.t > horizon.horizon_end {
            continue;
        }
        for &family in defs.families_of(&event.code) {
            bits[family] = true;
        }
    }
    Ok(bits)
}

pub fn derive_mortality_label(record: &PatientRecord) -> Result<bool> {
    match record.death_time {
        None => Ok(false),
        Some(death) if death < record.in_time => Err(Error::DataIntegrity {
            patient_id: record.patient_id.clone(),
            message: format!("death_time {death} precedes in_time {}", record.in_time),
        }),
        Some(death) => Ok(death <= record.out_time + MORTALITY_TOLERANCE_HOURS),
    }
}

pub fn derive_labels(record: &PatientRecord, defs: &InterventionDefs) -> Result<LabelVector> {
    let horizon = HorizonSpec::for_record(record)?;
    Ok(LabelVector {
        mortality: derive_mortality_label(record)?,
        interventions: derive_intervention_labels(record, defs, horizon)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Event;

    fn record(duration: f64, events: &[(f64, &str)]) -> PatientRecord {
        PatientRecord {
            patient_id: "p".into(),
            in_time: 100.0,
            out_time: 100.0 + duration,
            death_time: None,
            events: events
                .iter()
                .map(|(t, c)| Event {
                    t: *t,
                    code: (*c).into(),
                    value: None,
                })
                .collect(),
        }
    }

    fn labels(r: &PatientRecord) -> [bool; 13] {
        let defs = InterventionDefs::default();
        derive_intervention_labels(r, &defs, HorizonSpec::for_record(r).unwrap()).unwrap()
    }

    #[test]
    fn vasopressor_after_prediction_time() {
        let r = record(60.0, &[(30.0, "med:norepinephrine")]);
        let bits = labels(&r);
        assert!(bits[Intervention::Vasopressors.index()]);
        assert_eq!(bits.iter().filter(|b| **b).count(), 1);
    }

    #[test]
    fn events_in_observation_window_do_not_count() {
        let r = record(60.0, &[(10.0, "med:norepinephrine"), (24.0, "med:heparin")]);
        assert_eq!(labels(&r), [false; 13]);
    }

    #[test]
    fn empty_horizon_gives_all_zero() {
        let r = record(60.0, &[(1.0, "vital:heart_rate")]);
        assert_eq!(labels(&r), [false; 13]);
    }

    #[test]
    fn shared_code_sets_both_families() {
        let r = record(60.0, &[(40.0, "med:dopamine")]);
        let bits = labels(&r);
        assert!(bits[Intervention::Vasopressors.index()]);
        assert!(bits[Intervention::Inotropes.index()]);
    }

    #[test]
    fn event_at_discharge_counts_but_not_after() {
        let r = record(48.0, &[(48.0, "med:furosemide")]);
        assert!(labels(&r)[Intervention::Diuretic.index()]);
    }

    #[test]
    fn short_stay_is_a_horizon_error() {
        let r = record(24.0, &[]);
        assert!(matches!(HorizonSpec::for_record(&r), Err(Error::Horizon { .. })));
        let bad = HorizonSpec {
            prediction_time: 24.0,
            horizon_end: 60.0,
        };
        assert!(derive_intervention_labels(&r, &InterventionDefs::default(), bad).is_err());
    }

    #[test]
    fn mortality_tolerance() {
        let mut r = record(60.0, &[]);
        assert!(!derive_mortality_label(&r).unwrap());
        r.death_time = Some(r.out_time + 25.0 / 60.0);
        assert!(derive_mortality_label(&r).unwrap());
        r.death_time = Some(r.out_time + 45.0 / 60.0);
        assert!(!derive_mortality_label(&r).unwrap());
        r.death_time = Some(r.in_time - 1.0);
        assert!(matches!(
            derive_mortality_label(&r),
            Err(Error::DataIntegrity { .. })
        ));
    }

    #[test]
    fn definitions_round_trip_through_json() {
        let defs = InterventionDefs::default();
        let back = InterventionDefs::from_json(&defs.to_json()).unwrap();
        assert_eq!(back.defs(), defs.defs());
    }

    #[test]
    fn definitions_must_cover_all_families() {
        let mut defs = InterventionDefs::default().defs().to_vec();
        defs.pop();
        assert!(InterventionDefs::new(defs).is_err());
        let mut defs = InterventionDefs::default().defs().to_vec();
        defs[3].codes.clear();
        assert!(InterventionDefs::new(defs).is_err());
    }
}
