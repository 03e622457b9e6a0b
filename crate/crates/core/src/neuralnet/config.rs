use serde::{Deserialize, Serialize};

use super::NnError;

/// Smallest hidden layer width produced by the halving rule.
pub const MIN_UNITS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean absolute error, for real-valued targets.
    Mae,
    /// Binary negative log likelihood, for 0/1 targets.
    BinaryNll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub n_hidden: usize,
    pub first_units: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl MlpConfig {
    pub const N_HIDDEN_RANGE: (usize, usize) = (0, 3);
    pub const UNITS_RANGE: (usize, usize) = (64, 512);
    pub const LR_RANGE: (f64, f64) = (1e-6, 10.0);

    /// Training-loop defaults: batch 32, 50 epochs, patience 5.
    pub fn new(n_hidden: usize, first_units: usize, learning_rate: f64, loss: LossKind, seed: u64) -> Self {
        MlpConfig {
            n_hidden,
            first_units,
            learning_rate,
            loss,
            seed,
            max_epochs: 50,
            batch_size: 32,
            patience: 5,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        check_range("n_hidden", self.n_hidden, Self::N_HIDDEN_RANGE)?;
        check_range("first_units", self.first_units, Self::UNITS_RANGE)?;
        let (lo, hi) = Self::LR_RANGE;
        if !(lo..=hi).contains(&self.learning_rate) {
            return Err(NnError::Range {
                name: "learning_rate",
                value: self.learning_rate.to_string(),
                min: lo.to_string(),
                max: hi.to_string(),
            });
        }
        check_range("batch_size", self.batch_size, (1, usize::MAX))?;
        check_range("patience", self.patience, (1, usize::MAX))?;
        Ok(())
    }

    pub fn hidden_sizes(&self) -> Result<Vec<usize>, NnError> {
        layer_sizes(self.n_hidden, self.first_units)
    }
}

fn check_range(name: &'static str, value: usize, (min, max): (usize, usize)) -> Result<(), NnError> {
    if value < min || value > max {
        return Err(NnError::Range {
            name,
            value: value.to_string(),
            min: min.to_string(),
            max: max.to_string(),
        });
    }
    Ok(())
}

/// Hidden widths: `U`, then each next width `max(32, prev / 2)`.
pub fn layer_sizes(n_hidden: usize, first_units: usize) -> Result<Vec<usize>, NnError> {
    check_range("n_hidden", n_hidden, MlpConfig::N_HIDDEN_RANGE)?;
    check_range("first_units", first_units, MlpConfig::UNITS_RANGE)?;
    let mut widths = Vec::with_capacity(n_hidden);
    let mut width = first_units;
    for _ in 0..n_hidden {
        widths.push(width);
        width = (width / 2).max(MIN_UNITS);
    }
    Ok(widths)
}
