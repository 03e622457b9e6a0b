//! MLP1 checkpoints.
//!
//! Layout: magic `MLP1`; u32 length + canonical JSON of the config; u32 input
//! dim; u32 layer count; then per layer a u32 output dim, the row-major f64
//! weights and the f64 biases, all little-endian. Training history is not
//! stored.

use std::io::Write;
use std::path::Path;

use super::config::MlpConfig;
use super::model::{Dense, MlpModel};
use super::NnError;
use crate::binio::{self, BinError, Cursor};

const MAGIC: &str = "MLP1";

impl From<BinError> for NnError {
    fn from(e: BinError) -> Self {
        NnError::Checkpoint(e.to_string())
    }
}

impl MlpModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC.as_bytes());
        binio::write_u32(&mut buf, json.len()).unwrap();
        buf.extend_from_slice(&json);
        binio::write_u32(&mut buf, self.input_dim()).unwrap();
        binio::write_u32(&mut buf, self.layers.len()).unwrap();
        for layer in &self.layers {
            binio::write_u32(&mut buf, layer.out_dim).unwrap();
            for v in layer.weights.iter().chain(&layer.bias) {
                buf.write_all(&v.to_le_bytes()).unwrap();
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<MlpModel, NnError> {
        let mut cur = Cursor::new(bytes);
        cur.expect_magic(MAGIC)?;
        let json_len = cur.u32("config length")? as usize;
        let config: MlpConfig = serde_json::from_slice(cur.take(json_len, "config")?)
            .map_err(|e| NnError::Checkpoint(format!("config: {e}")))?;
        let mut in_dim = cur.u32("input dim")? as usize;
        let n_layers = cur.u32("layer count")? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(16));
        for _ in 0..n_layers {
            let out_dim = cur.u32("output dim")? as usize;
            let weights = (0..in_dim * out_dim).map(|_| cur.f64("weights")).collect::<Result<Vec<_>, _>>()?;
            let bias = (0..out_dim).map(|_| cur.f64("bias")).collect::<Result<Vec<_>, _>>()?;
            layers.push(Dense { in_dim, out_dim, weights, bias });
            in_dim = out_dim;
        }
        cur.finish()?;
        MlpModel::from_layers(config, layers)
    }
}

pub fn save_checkpoint(path: &Path, model: &MlpModel) -> Result<(), NnError> {
    binio::write_atomic(path, &model.to_bytes())
        .map_err(|source| NnError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel, NnError> {
    let bytes = std::fs::read(path).map_err(|source| NnError::Io { path: path.display().to_string(), source })?;
    MlpModel::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::LossKind;
    use rand::SeedableRng;

    #[test]
    fn round_trip_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cfg = MlpConfig::new(2, 70, 3.5e-4, LossKind::Mae, 11);
        let model = MlpModel::init(cfg, 5, &mut rng).unwrap();
        let bytes = model.to_bytes();
        let back = MlpModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.layers, model.layers);
        assert_eq!(back.config, model.config);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let cfg = MlpConfig::new(0, 64, 1e-3, LossKind::BinaryNll, 0);
        let model = MlpModel::from_layers(cfg, vec![Dense::zeros(2, 1)]).unwrap();
        let bytes = model.to_bytes();
        assert!(MlpModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(MlpModel::from_bytes(&extra).is_err());
        assert!(MlpModel::from_bytes(b"MLP0").is_err());
    }
}
