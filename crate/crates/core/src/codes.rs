//! The synthetic clinical vocabulary.
//!
//! Code tokens are namespaced strings (`med:`, `item:`, `proc:`, `vital:`,
//! `lab:`, `output:`, `dx:`, `adm:`, `code:`). Intervention code sets follow
//! the drug lists of the MIMIC-III concept queries; item-based families
//! (fluid boluses, transfusions) use stand-in item tokens.

use crate::tasks::Intervention;

/// Default code set for each intervention family, indexed by
/// [`Intervention::index`].
pub fn intervention_codes(intervention: Intervention) -> &'static [&'static str] {
    match intervention {
        Intervention::Vasopressors => &[
            "med:levophed",
            "med:neosynephrine",
            "med:phenylephrine",
            "med:norepinephrine",
            "med:vasopressin",
            "med:dopamine",
            "med:epinephrine",
        ],
        Intervention::Inotropes => &["med:dopamine", "med:dobutamine", "med:milrinone"],
        Intervention::Sedation => &[
            "med:propofol",
            "med:midazolam",
            "med:ativan",
            "med:dexmedetomidine",
            "med:diazepam",
            "med:ketamine",
            "med:pentobarbitol",
        ],
        Intervention::Analgesic => &["med:fentanyl", "med:morphine_sulfate", "med:hydromorphone"],
        Intervention::Anticoagulation => &[
            "med:heparin",
            "med:integrelin",
            "med:argatroban",
            "med:lepirudin",
            "med:aggrastat",
            "med:reopro",
            "med:bivalirudin",
        ],
        Intervention::Diuretic => &["med:furosemide", "med:natrecor"],
        Intervention::Paralytic => &["med:cisatracurium", "med:vecuronium", "med:atracurium"],
        Intervention::ColloidBolus => &[
            "item:colloid_albumin_5",
            "item:colloid_albumin_25",
            "item:colloid_hetastarch",
        ],
        Intervention::CrystalloidBolus => &[
            "item:crystalloid_normal_saline",
            "item:crystalloid_lactated_ringers",
        ],
        Intervention::FfpTransfusion => &["item:ffp_units", "item:ffp_volume"],
        Intervention::RbcTransfusion => &["item:prbc_units", "item:prbc_volume"],
        Intervention::Ventilation => &["proc:mechanical_ventilation_start"],
        Intervention::Antibiotic => &[
            "med:vancomycin",
            "med:cefepime",
            "med:piperacillin_tazobactam",
            "med:meropenem",
            "med:ceftriaxone",
            "med:levofloxacin",
            "med:metronidazole",
        ],
    }
}

/// Which direction of a measurement is clinically worse.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Worst {
    Max,
    Min,
    /// Indicator code: 1 if it occurs in the window, else 0.
    Presence,
}

/// A designated severity input for the logistic baselines.
#[derive(Clone, Copy, Debug)]
pub struct SeverityCode {
    pub code: &'static str,
    pub worst: Worst,
}

const fn sev(code: &'static str, worst: Worst) -> SeverityCode {
    SeverityCode { code, worst }
}

/// Six organ-failure inputs of the SOFA-like baseline.
pub const SOFA_CODES: [SeverityCode; 6] = [
    sev("lab:pao2_fio2", Worst::Min),
    sev("lab:platelets", Worst::Min),
    sev("lab:bilirubin", Worst::Max),
    sev("vital:map", Worst::Min),
    sev("vital:gcs", Worst::Min),
    sev("lab:creatinine", Worst::Max),
];

/// Seventeen inputs of the SAPS-II-like baseline: physiology, chronic
/// disease indicators and admission status.
pub const SAPS_CODES: [SeverityCode; 17] = [
    sev("vital:heart_rate", Worst::Max),
    sev("vital:sbp", Worst::Min),
    sev("vital:temperature", Worst::Max),
    sev("vital:resp_rate", Worst::Max),
    sev("lab:pao2_fio2", Worst::Min),
    sev("output:urine", Worst::Min),
    sev("lab:bun", Worst::Max),
    sev("lab:wbc", Worst::Max),
    sev("lab:potassium", Worst::Max),
    sev("lab:sodium", Worst::Min),
    sev("lab:bicarbonate", Worst::Min),
    sev("lab:bilirubin", Worst::Max),
    sev("vital:gcs", Worst::Min),
    sev("dx:metastatic_cancer", Worst::Presence),
    sev("dx:hematologic_malignancy", Worst::Presence),
    sev("dx:aids", Worst::Presence),
    sev("adm:unscheduled_surgical", Worst::Presence),
];

/// Vital sign whose within-window trend carries the deterioration signal.
/// Deliberately absent from both baseline code lists.
pub const TREND_CODE: &str = "lab:lactate";

/// Prefix for background codes with no planted signal.
pub const FILLER_PREFIX: &str = "code:";

pub fn filler_code(index: usize) -> String {
    format!("{FILLER_PREFIX}{index:04}")
}

/// All non-filler tokens the generator may emit, sorted and deduplicated.
pub fn reserved_codes() -> Vec<&'static str> {
    let mut codes: Vec<&'static str> = Intervention::ALL
        .iter()
        .flat_map(|i| intervention_codes(*i).iter().copied())
        .chain(SOFA_CODES.iter().map(|c| c.code))
        .chain(SAPS_CODES.iter().map(|c| c.code))
        .chain(std::iter::once(TREND_CODE))
        .collect();
    codes.sort_unstable();
    codes.dedup();
    codes
}
