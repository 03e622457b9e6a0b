use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix};

/// Per-column division by the training maximum absolute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxAbsScaler {
    pub max_abs: Vec<f64>,
}

impl MaxAbsScaler {
    pub fn fit(train: &FeatureMatrix) -> MaxAbsScaler {
        let mut max_abs = vec![0.0f64; train.n_cols()];
        for row in train.rows() {
            for (m, v) in max_abs.iter_mut().zip(row) {
                *m = m.max(v.abs());
            }
        }
        MaxAbsScaler { max_abs }
    }

    /// Zero columns pass through unchanged. Non-training rows may leave `[-1, 1]`.
    pub fn scale(&self, features: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        if features.n_cols() != self.max_abs.len() {
            return Err(FeatureError::DimMismatch { expected: self.max_abs.len(), got: features.n_cols() });
        }
        Ok(features.map_values(|col, v| {
            let m = self.max_abs[col];
            if m == 0.0 {
                v
            } else {
                v / m
            }
        }))
    }
}
