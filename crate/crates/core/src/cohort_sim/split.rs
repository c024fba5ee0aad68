use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Cohort positions per split, each list in shuffled order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    /// Split of every cohort position.
    pub fn membership(&self, n: usize) -> Vec<Split> {
        let mut out = vec![Split::Train; n];
        for &i in &self.validation {
            out[i] = Split::Validation;
        }
        for &i in &self.test {
            out[i] = Split::Test;
        }
        out
    }

    pub fn from_membership(membership: &[Split]) -> Self {
        let pick = |s: Split| {
            membership
                .iter()
                .enumerate()
                .filter(|(_, m)| **m == s)
                .map(|(i, _)| i)
                .collect()
        };
        SplitAssignment {
            train: pick(Split::Train),
            validation: pick(Split::Validation),
            test: pick(Split::Test),
        }
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Seeded shuffle of `0..n` cut into train/validation/test.
///
/// Validation and test get `floor(n * ratio)` members; train takes the
/// remainder.
pub fn split_cohort(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitAssignment> {
    let (train, validation, test) = ratios;
    if [train, validation, test].iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::config("split.ratios", "ratios must be finite and non-negative"));
    }
    if ((train + validation + test) - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "split.ratios",
            format!("ratios sum to {}, expected 1", train + validation + test),
        ));
    }
    if n == 0 {
        return Err(Error::config("split", "cohort is empty"));
    }
    // The epsilon keeps products like 0.1 * 30 from landing just below an integer.
    let size = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let (n_val, n_test) = (size(validation), size(test));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_part = order.split_off(n - n_test);
    let val_part = order.split_off(n - n_test - n_val);
    Ok(SplitAssignment {
        train: order,
        validation: val_part,
        test: test_part,
    })
}
