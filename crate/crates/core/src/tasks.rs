//! The fourteen prediction targets and their fixed ordering.
//!
//! Every per-task array in the crate (labels, predictions, model heads,
//! CSV columns) follows [`Task::ALL`]: in-ICU mortality first, then the
//! thirteen interventions.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Number of prediction tasks (mortality + interventions).
pub const NUM_TASKS: usize = 14;
/// Number of intervention tasks.
pub const NUM_INTERVENTIONS: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intervention {
    Vasopressors,
    Inotropes,
    Sedation,
    Analgesic,
    Anticoagulation,
    Diuretic,
    Paralytic,
    ColloidBolus,
    CrystalloidBolus,
    FfpTransfusion,
    RbcTransfusion,
    Ventilation,
    Antibiotic,
}

impl Intervention {
    pub const ALL: [Intervention; NUM_INTERVENTIONS] = [
        Intervention::Vasopressors,
        Intervention::Inotropes,
        Intervention::Sedation,
        Intervention::Analgesic,
        Intervention::Anticoagulation,
        Intervention::Diuretic,
        Intervention::Paralytic,
        Intervention::ColloidBolus,
        Intervention::CrystalloidBolus,
        Intervention::FfpTransfusion,
        Intervention::RbcTransfusion,
        Intervention::Ventilation,
        Intervention::Antibiotic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Intervention::Vasopressors => "vasopressors",
            Intervention::Inotropes => "inotropes",
            Intervention::Sedation => "sedation",
            Intervention::Analgesic => "analgesic",
            Intervention::Anticoagulation => "anticoagulation",
            Intervention::Diuretic => "diuretic",
            Intervention::Paralytic => "paralytic",
            Intervention::ColloidBolus => "colloid_bolus",
            Intervention::CrystalloidBolus => "crystalloid_bolus",
            Intervention::FfpTransfusion => "ffp_transfusion",
            Intervention::RbcTransfusion => "rbc_transfusion",
            Intervention::Ventilation => "ventilation",
            Intervention::Antibiotic => "antibiotic",
        }
    }

    pub fn task(self) -> Task {
        Task::Intervention(self)
    }
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Intervention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Intervention::ALL
            .iter()
            .copied()
            .find(|i| i.name() == s)
            .ok_or_else(|| format!("unknown intervention `{s}`"))
    }
}

/// One of the fourteen binary prediction targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Mortality,
    Intervention(Intervention),
}

impl Task {
    pub const ALL: [Task; NUM_TASKS] = [
        Task::Mortality,
        Task::Intervention(Intervention::Vasopressors),
        Task::Intervention(Intervention::Inotropes),
        Task::Intervention(Intervention::Sedation),
        Task::Intervention(Intervention::Analgesic),
        Task::Intervention(Intervention::Anticoagulation),
        Task::Intervention(Intervention::Diuretic),
        Task::Intervention(Intervention::Paralytic),
        Task::Intervention(Intervention::ColloidBolus),
        Task::Intervention(Intervention::CrystalloidBolus),
        Task::Intervention(Intervention::FfpTransfusion),
        Task::Intervention(Intervention::RbcTransfusion),
        Task::Intervention(Intervention::Ventilation),
        Task::Intervention(Intervention::Antibiotic),
    ];

    /// Position in [`Task::ALL`].
    pub fn index(self) -> usize {
        match self {
            Task::Mortality => 0,
            Task::Intervention(i) => 1 + i.index(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Mortality => "mortality",
            Task::Intervention(i) => i.name(),
        }
    }

    pub fn from_index(index: usize) -> Option<Task> {
        Task::ALL.get(index).copied()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

/// Task names in canonical order, for CSV headers.
pub fn task_names() -> [&'static str; NUM_TASKS] {
    Task::ALL.map(Task::name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_is_mortality_then_interventions() {
        assert_eq!(Task::ALL[0], Task::Mortality);
        for (i, task) in Task::ALL.iter().enumerate() {
            assert_eq!(task.index(), i);
            assert_eq!(Task::from_index(i), Some(*task));
            assert_eq!(task.name().parse::<Task>().unwrap(), *task);
        }
        assert_eq!(Intervention::Antibiotic.task().index(), 13);
    }
}
