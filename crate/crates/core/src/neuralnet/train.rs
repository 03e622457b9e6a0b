use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::MlpConfig;
use super::model::MlpModel;
use super::NnError;
use crate::featurize::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean of the mini-batch losses seen during the epoch, weighted by batch size.
    pub train_loss: f64,
    pub dev_loss: f64,
}

fn check_inputs(x: &FeatureMatrix, y: &[f64], input_dim: usize) -> Result<(), NnError> {
    if x.n_rows() == 0 {
        return Err(NnError::EmptyData);
    }
    if x.n_rows() != y.len() {
        return Err(NnError::DimMismatch { expected: x.n_rows(), got: y.len() });
    }
    if x.n_cols() != input_dim {
        return Err(NnError::DimMismatch { expected: input_dim, got: x.n_cols() });
    }
    Ok(())
}

/// Mini-batch Adam with early stopping on dev loss.
///
/// Returns the snapshot with the lowest dev loss; `history` covers every
/// epoch that ran. The same `(config, data)` always yields the same model.
pub fn train(
    config: &MlpConfig,
    x_train: &FeatureMatrix,
    y_train: &[f64],
    x_dev: &FeatureMatrix,
    y_dev: &[f64],
) -> Result<MlpModel, NnError> {
    config.validate()?;
    let input_dim = x_train.n_cols();
    check_inputs(x_train, y_train, input_dim)?;
    check_inputs(x_dev, y_dev, input_dim)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpModel::init(config.clone(), input_dim, &mut rng)?;
    let mut adam = AdamState::new(model.tensor_sizes());
    let dev_rows: Vec<&[f64]> = x_dev.rows().collect();

    let mut order: Vec<usize> = (0..x_train.n_rows()).collect();
    let mut best: Option<(f64, Vec<super::Dense>)> = None;
    let mut history = Vec::new();
    let mut stale = 0;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| x_train.row(i)).collect();
            let ys: Vec<f64> = batch.iter().map(|&i| y_train[i]).collect();
            let (loss, grads) = model.backward(&xs, &ys)?;
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            let grad_tensors: Vec<Vec<f64>> = grads.tensors().into_iter().map(<[f64]>::to_vec).collect();
            let grad_refs: Vec<&[f64]> = grad_tensors.iter().map(Vec::as_slice).collect();
            adam.step(&mut model.tensors_mut(), &grad_refs, config.learning_rate);
        }
        let train_loss = loss_sum / x_train.n_rows() as f64;
        let dev_loss = model.batch_loss(&dev_rows, y_dev)?;
        if !train_loss.is_finite() || !dev_loss.is_finite() {
            return Err(NnError::NonFiniteLoss { epoch });
        }
        history.push(EpochLoss { epoch, train_loss, dev_loss });

        if best.as_ref().is_none_or(|(b, _)| dev_loss < *b) {
            best = Some((dev_loss, model.layers.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    if let Some((_, layers)) = best {
        model.layers = layers;
    }
    model.history = history;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::LossKind;

    fn toy() -> (FeatureMatrix, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 / 20.0) - 1.0, ((i * 7) % 5) as f64 / 5.0]).collect();
        let y = rows.iter().map(|r| if r[0] > 0.0 { 1.0 } else { 0.0 }).collect();
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        (FeatureMatrix::from_rows(ids, &rows).unwrap(), y)
    }

    #[test]
    fn deterministic_given_config_and_data() {
        let (x, y) = toy();
        let cfg = MlpConfig { max_epochs: 5, ..MlpConfig::new(1, 64, 1e-2, LossKind::BinaryNll, 9) };
        let a = train(&cfg, &x, &y, &x, &y).unwrap();
        let b = train(&cfg, &x, &y, &x, &y).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 5);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (x, y) = toy();
        // lr = 10 makes dev loss oscillate, so patience 1 ends the run early
        let cfg = MlpConfig { max_epochs: 200, patience: 1, ..MlpConfig::new(0, 64, 10.0, LossKind::BinaryNll, 1) };
        let m = train(&cfg, &x, &y, &x, &y).unwrap();
        let best = m.history.iter().map(|h| h.dev_loss).fold(f64::INFINITY, f64::min);
        let rows: Vec<&[f64]> = x.rows().collect();
        assert_eq!(m.batch_loss(&rows, &y).unwrap(), best);
        assert!(m.history.len() < 200);
    }

    #[test]
    fn rejects_bad_shapes() {
        let (x, y) = toy();
        let cfg = MlpConfig::new(0, 64, 1e-2, LossKind::Mae, 0);
        assert!(matches!(train(&cfg, &x, &y[..3], &x, &y), Err(NnError::DimMismatch { .. })));
        let narrow = x.column_block(0, 1);
        assert!(matches!(train(&cfg, &x, &y, &narrow, &y), Err(NnError::DimMismatch { .. })));
    }
}
