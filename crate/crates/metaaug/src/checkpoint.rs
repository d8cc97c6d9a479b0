//! Policy bundle checkpoints.
//!
//! A bundle carries everything transfer training needs: the policy
//! parameters, the task network whose feature extractor feeds the policy, and
//! the final sampling distribution. On disk it is one JSON header line
//! (format tag, catalog hash, dimensions) followed by the raw little-endian
//! f64 parameter data in canonical order: the six policy tensors, the task
//! tensors layer by layer (weights then bias), then the K x K probabilities.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{catalog_hash, EMBEDDING_DIM, NUM_FUNCTIONS};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::nn::{Activation, DenseLayer, TaskNetwork};
use crate::policy::PolicyNetwork;
use crate::tensor::Tensor;
use crate::trainer::FrozenBundle;

const FORMAT: &str = "metaaug-policy";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    catalog_hash: String,
    k: usize,
    embedding_dim: usize,
    policy_feature_dim: usize,
    policy_hidden_dim: usize,
    task_input_dim: usize,
    task_layer_dims: Vec<usize>,
    task_activations: Vec<String>,
    task_feature_index: usize,
    task_num_classes: usize,
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Sigmoid => "sigmoid",
        Activation::Identity => "identity",
    }
}

fn activation_from(name: &str) -> Result<Activation> {
    match name {
        "relu" => Ok(Activation::Relu),
        "sigmoid" => Ok(Activation::Sigmoid),
        "identity" => Ok(Activation::Identity),
        other => Err(Error::Checkpoint(format!("unknown activation `{}`", other))),
    }
}

/// Serialize a bundle to bytes.
pub fn encode_bundle(bundle: &FrozenBundle) -> Result<Vec<u8>> {
    if bundle.probabilities.len() != NUM_FUNCTIONS * NUM_FUNCTIONS {
        return Err(Error::Checkpoint(format!(
            "expected {} probabilities, got {}",
            NUM_FUNCTIONS * NUM_FUNCTIONS,
            bundle.probabilities.len()
        )));
    }
    let task = &bundle.feature_net;
    let header = Header {
        format: FORMAT.to_string(),
        version: VERSION,
        catalog_hash: catalog_hash(),
        k: NUM_FUNCTIONS,
        embedding_dim: EMBEDDING_DIM,
        policy_feature_dim: bundle.policy.feature_dim(),
        policy_hidden_dim: bundle.policy.hidden_dim(),
        task_input_dim: task.input_dim(),
        task_layer_dims: task.layers().iter().map(|l| l.out_dim()).collect(),
        task_activations: task
            .layers()
            .iter()
            .map(|l| activation_name(l.activation()).to_string())
            .collect(),
        task_feature_index: task.feature_index(),
        task_num_classes: task.num_classes(),
    };
    let mut out = serde_json::to_string(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {}", e)))?
        .into_bytes();
    out.push(b'\n');
    for t in bundle.policy.params().iter().chain(task.params().iter()) {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for p in &bundle.probabilities {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

/// Parse a bundle, validating the format tag, catalog hash, declared shapes,
/// and exact payload length.
pub fn decode_bundle(bytes: &[u8]) -> Result<FrozenBundle> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Checkpoint(format!("header parse: {}", e)))?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("format `{}` is not `{}`", header.format, FORMAT)));
    }
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    if header.catalog_hash != catalog_hash() {
        return Err(Error::Checkpoint(format!(
            "catalog hash mismatch: checkpoint {}, this build {}",
            header.catalog_hash,
            catalog_hash()
        )));
    }
    if header.k != NUM_FUNCTIONS || header.embedding_dim != EMBEDDING_DIM {
        return Err(Error::Checkpoint("catalog size mismatch".into()));
    }
    if header.task_layer_dims.len() != header.task_activations.len()
        || header.task_layer_dims.is_empty()
    {
        return Err(Error::Checkpoint("inconsistent task layer declaration".into()));
    }

    let mut reader = FloatReader {
        bytes: &bytes[newline + 1..],
        pos: 0,
    };
    let h = header.policy_hidden_dim;
    let fd = header.policy_feature_dim;
    let policy = PolicyNetwork::from_parts(
        DenseLayer::from_parts(
            reader.tensor(vec![h, fd])?,
            reader.tensor(vec![h])?,
            Activation::Relu,
        )?,
        DenseLayer::from_parts(
            reader.tensor(vec![h, EMBEDDING_DIM])?,
            reader.tensor(vec![h])?,
            Activation::Relu,
        )?,
        DenseLayer::from_parts(
            reader.tensor(vec![1, 2 * h])?,
            reader.tensor(vec![1])?,
            Activation::Sigmoid,
        )?,
    )?;

    let mut layers = Vec::with_capacity(header.task_layer_dims.len());
    let mut prev = header.task_input_dim;
    for (out_dim, act) in header.task_layer_dims.iter().zip(header.task_activations.iter()) {
        let w = reader.tensor(vec![*out_dim, prev])?;
        let b = reader.tensor(vec![*out_dim])?;
        layers.push(DenseLayer::from_parts(w, b, activation_from(act)?)?);
        prev = *out_dim;
    }
    let feature_net = TaskNetwork::new(layers, header.task_feature_index, header.task_num_classes)?;
    if feature_net.feature_dim() != policy.feature_dim() {
        return Err(Error::Checkpoint("policy feature dim does not match task feature layer".into()));
    }

    let probabilities = reader.vec(NUM_FUNCTIONS * NUM_FUNCTIONS)?;
    if reader.pos != reader.bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after probabilities",
            reader.bytes.len() - reader.pos
        )));
    }
    Ok(FrozenBundle {
        policy,
        feature_net,
        probabilities,
    })
}

struct FloatReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl FloatReader<'_> {
    fn vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let need = n * 8;
        if self.pos + need > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "payload truncated at byte {}: need {} more",
                self.pos,
                self.pos + need - self.bytes.len()
            )));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let start = self.pos + i * 8;
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&self.bytes[start..start + 8]);
            out.push(f64::from_le_bytes(buf));
        }
        self.pos += need;
        Ok(out)
    }

    fn tensor(&mut self, shape: Vec<usize>) -> Result<Tensor> {
        let n = shape.iter().product();
        Tensor::new(shape, self.vec(n)?)
    }
}

pub fn save_bundle(bundle: &FrozenBundle, path: &Path) -> Result<()> {
    atomic_write(path, &encode_bundle(bundle)?)
}

pub fn load_bundle(path: &Path) -> Result<FrozenBundle> {
    decode_bundle(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};

    fn sample_bundle() -> FrozenBundle {
        let mut rng = stream(41, StreamId::Aux);
        let feature_net = TaskNetwork::init_mlp(12, &[10, 5], 3, &mut rng).unwrap();
        let policy = PolicyNetwork::init(5, 7, &mut rng);
        let mut p = vec![0.0; NUM_FUNCTIONS * NUM_FUNCTIONS];
        let cell = 1.0 / p.len() as f64;
        for v in &mut p {
            *v = cell;
        }
        FrozenBundle {
            policy,
            feature_net,
            probabilities: p,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bundle = sample_bundle();
        let bytes = encode_bundle(&bundle).unwrap();
        let loaded = decode_bundle(&bytes).unwrap();
        assert_eq!(encode_bundle(&loaded).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bundle = sample_bundle();
        let bytes = encode_bundle(&bundle).unwrap();

        let truncated = &bytes[..bytes.len() - 3];
        assert!(decode_bundle(truncated).is_err());

        // Flip one hex digit of the catalog hash inside the ASCII header.
        let mut wrong_hash = bytes.clone();
        let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header = std::str::from_utf8(&bytes[..newline]).unwrap();
        let hash_pos = header.find(&catalog_hash()).unwrap();
        wrong_hash[hash_pos] = if bytes[hash_pos] == b'0' { b'1' } else { b'0' };
        assert!(matches!(decode_bundle(&wrong_hash), Err(Error::Checkpoint(_))));

        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0u8; 8]);
        assert!(decode_bundle(&extra).is_err());
    }
}
