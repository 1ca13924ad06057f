//! Checkpoint format: a JSON manifest plus a flat little-endian `f32` blob
//! holding every weight matrix (row-major, layer order) followed by every
//! bias vector (layer order).

use super::model::{Autoencoder, DenseLayer, LayerSpec};
use super::{AutonetError, LossKind, TrainConfig};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
    pub seed: u64,
    pub training: Option<TrainConfig>,
    pub final_loss: Option<f64>,
    pub parameter_count: usize,
    /// Hex SHA-256 of the parameter blob.
    pub parameters_sha256: String,
}

pub fn encode_parameters(model: &Autoencoder<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.parameter_count() * 4);
    for layer in model.layers() {
        for v in layer.weights.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for layer in model.layers() {
        for v in layer.bias.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ModelManifest {
    pub fn describe(
        model: &Autoencoder<f32>,
        loss: LossKind,
        seed: u64,
        training: Option<TrainConfig>,
        final_loss: Option<f64>,
    ) -> Self {
        Self {
            layers: model.specs(),
            loss,
            seed,
            training,
            final_loss,
            parameter_count: model.parameter_count(),
            parameters_sha256: sha256_hex(&encode_parameters(model)),
        }
    }
}

/// Rebuilds a model from its manifest and parameter blob, checking size and digest.
pub fn decode_model(manifest: &ModelManifest, bytes: &[u8]) -> Result<Autoencoder<f32>, AutonetError> {
    let expected: usize = manifest
        .layers
        .iter()
        .map(|s| s.output_dim * s.input_dim + s.output_dim)
        .sum();
    if bytes.len() != expected * 4 {
        return Err(AutonetError::Checkpoint(format!(
            "parameter blob has {} bytes, expected {}",
            bytes.len(),
            expected * 4
        )));
    }
    if sha256_hex(bytes) != manifest.parameters_sha256 {
        return Err(AutonetError::Checkpoint("parameter digest mismatch".into()));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut weights = Vec::with_capacity(manifest.layers.len());
    for s in &manifest.layers {
        let w: Vec<f32> = values.by_ref().take(s.output_dim * s.input_dim).collect();
        weights.push(Array2::from_shape_vec((s.output_dim, s.input_dim), w).expect("sized"));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (s, w) in manifest.layers.iter().zip(weights) {
        let b: Vec<f32> = values.by_ref().take(s.output_dim).collect();
        layers.push(DenseLayer {
            weights: w,
            bias: Array1::from(b),
            activation: s.activation,
        });
    }
    let model = Autoencoder::from_layers(layers)?;
    if model.specs() != manifest.layers {
        return Err(AutonetError::Checkpoint("layer specs do not chain".into()));
    }
    Ok(model)
}
