//! The augmentation policy network `P(feature, embedding; theta)`.
//!
//! Two input branches (deep image feature, transformation embedding) each feed
//! a ReLU layer of the same hidden width; the concatenated hidden vectors feed
//! a single sigmoid output. The output is the raw weight of an augmented
//! sample's loss; per batch, raw weights are rescaled so their mean is 1
//! before they multiply losses.
//!
//! Gradients with respect to theta are computed by hand here, including the
//! quotient rule through the batch normalization, because the meta step
//! differentiates the normalized weights.

use rand::Rng;

use crate::augment::EMBEDDING_DIM;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Activation, DenseLayer, Grads};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct PolicyNetwork {
    branch_feat: DenseLayer,
    branch_emb: DenseLayer,
    head: DenseLayer,
}

impl PolicyNetwork {
    /// Branches use uniform fan-in init; the head starts at zero so every
    /// initial weight is exactly 0.5 (an uninformative prior).
    pub fn init<R: Rng>(feature_dim: usize, hidden: usize, rng: &mut R) -> Self {
        PolicyNetwork {
            branch_feat: DenseLayer::init(feature_dim, hidden, Activation::Relu, rng),
            branch_emb: DenseLayer::init(EMBEDDING_DIM, hidden, Activation::Relu, rng),
            head: DenseLayer::zeros(2 * hidden, 1, Activation::Sigmoid),
        }
    }

    /// All parameters zero (test fixture; outputs are exactly 0.5).
    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        PolicyNetwork {
            branch_feat: DenseLayer::zeros(feature_dim, hidden, Activation::Relu),
            branch_emb: DenseLayer::zeros(EMBEDDING_DIM, hidden, Activation::Relu),
            head: DenseLayer::zeros(2 * hidden, 1, Activation::Sigmoid),
        }
    }

    pub fn from_parts(
        branch_feat: DenseLayer,
        branch_emb: DenseLayer,
        head: DenseLayer,
    ) -> Result<Self> {
        if branch_feat.out_dim() != branch_emb.out_dim() {
            return Err(Error::dimension("policy branches must share a hidden width"));
        }
        if branch_emb.in_dim() != EMBEDDING_DIM {
            return Err(Error::dimension(format!(
                "embedding branch expects input {}, got {}",
                EMBEDDING_DIM,
                branch_emb.in_dim()
            )));
        }
        if head.in_dim() != branch_feat.out_dim() + branch_emb.out_dim() || head.out_dim() != 1 {
            return Err(Error::dimension("policy head shape inconsistent with branches"));
        }
        Ok(PolicyNetwork {
            branch_feat,
            branch_emb,
            head,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.branch_feat.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.branch_feat.out_dim()
    }

    /// Parameter tensors in canonical order: feature branch (W, b), embedding
    /// branch (W, b), head (W, b). Checkpoints and optimizers rely on this
    /// order.
    pub fn params(&self) -> Vec<&Tensor> {
        vec![
            self.branch_feat.weights(),
            self.branch_feat.bias(),
            self.branch_emb.weights(),
            self.branch_emb.bias(),
            self.head.weights(),
            self.head.bias(),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(6);
        let layers: [&mut DenseLayer; 3] =
            [&mut self.branch_feat, &mut self.branch_emb, &mut self.head];
        for l in layers {
            let (w, b) = l.parts_mut();
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        self.params().iter().map(|t| Tensor::zeros_like(t)).collect()
    }

    fn check_inputs(&self, feature: &[f64], embedding: &[f64]) -> Result<()> {
        if feature.len() != self.feature_dim() {
            return Err(Error::dimension(format!(
                "feature length {} != policy feature dim {}",
                feature.len(),
                self.feature_dim()
            )));
        }
        if embedding.len() != EMBEDDING_DIM {
            return Err(Error::dimension(format!(
                "embedding length {} != {}",
                embedding.len(),
                EMBEDDING_DIM
            )));
        }
        Ok(())
    }

    fn forward_cache(&self, feature: &[f64], embedding: &[f64]) -> PolicyCache {
        let mut zf = Vec::new();
        let mut af = Vec::new();
        self.branch_feat.forward(feature, &mut zf, &mut af);
        let mut ze = Vec::new();
        let mut ae = Vec::new();
        self.branch_emb.forward(embedding, &mut ze, &mut ae);
        let hidden: Vec<f64> = af.iter().chain(ae.iter()).cloned().collect();
        let w = self.head.weights().data();
        let mut z = self.head.bias().data()[0];
        for (wi, hi) in w.iter().zip(hidden.iter()) {
            z += wi * hi;
        }
        PolicyCache {
            zf,
            ze,
            hidden,
            out: sigmoid(z),
        }
    }

    /// Raw weight in (0, 1) for one (feature, embedding) pair.
    pub fn weight(&self, feature: &[f64], embedding: &[f64]) -> Result<f64> {
        self.check_inputs(feature, embedding)?;
        Ok(self.forward_cache(feature, embedding).out)
    }

    /// Raw weight plus its gradient with respect to every theta tensor
    /// (manual backprop through sigmoid, concat split, and the ReLU branches).
    pub fn weight_and_grad(&self, feature: &[f64], embedding: &[f64]) -> Result<(f64, Grads)> {
        self.check_inputs(feature, embedding)?;
        let cache = self.forward_cache(feature, embedding);
        let h = self.hidden_dim();
        let s = cache.out;
        let ds = s * (1.0 - s); // sigmoid'(z) in terms of the output

        // Head: d out / d w = ds * hidden, d out / d b = ds.
        let head_w: Vec<f64> = cache.hidden.iter().map(|hi| ds * hi).collect();
        let head_b = vec![ds];

        // Into the branches: v = ds * W_head, split at the concat boundary,
        // gated by ReLU'(z).
        let wh = self.head.weights().data();
        let mut delta_f = vec![0.0; h];
        let mut delta_e = vec![0.0; h];
        for i in 0..h {
            delta_f[i] = ds * wh[i] * Activation::Relu.derivative(cache.zf[i]);
            delta_e[i] = ds * wh[h + i] * Activation::Relu.derivative(cache.ze[i]);
        }
        let outer = |delta: &[f64], input: &[f64]| -> Vec<f64> {
            let mut g = Vec::with_capacity(delta.len() * input.len());
            for d in delta {
                for x in input {
                    g.push(d * x);
                }
            }
            g
        };

        let grads = vec![
            Tensor::new(vec![h, self.feature_dim()], outer(&delta_f, feature))?,
            Tensor::new(vec![h], delta_f)?,
            Tensor::new(vec![h, EMBEDDING_DIM], outer(&delta_e, embedding))?,
            Tensor::new(vec![h], delta_e)?,
            Tensor::new(vec![1, 2 * h], head_w)?,
            Tensor::new(vec![1], head_b)?,
        ];
        Ok((s, grads))
    }
}

struct PolicyCache {
    zf: Vec<f64>,
    ze: Vec<f64>,
    hidden: Vec<f64>,
    out: f64,
}

/// Rescale a batch of raw weights so their mean is exactly 1:
/// `out_i = n * raw_i / sum(raw)`.
///
/// A uniform batch maps to exact ones (the accumulated sum would otherwise be
/// off by an ulp for values like 0.37, and a constant-output policy must
/// reduce training to plain unweighted SGD bit for bit).
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::domain("cannot normalize an empty weight batch"));
    }
    if raw.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::domain("raw weights must be positive and finite"));
    }
    if raw.iter().all(|w| *w == raw[0]) {
        return Ok(vec![1.0; raw.len()]);
    }
    let sum: f64 = raw.iter().sum();
    let n = raw.len() as f64;
    Ok(raw.iter().map(|w| n * w / sum).collect())
}

/// Gradient of the i-th *normalized* weight with respect to theta, over a
/// batch of (feature, embedding) pairs. The quotient rule couples every raw
/// weight in the batch:
///
/// `d(n P_i / S)/d theta = (n / S^2) * sum_j (delta_ij S - P_i) dP_j/d theta`.
pub fn normalized_weight_grad(
    policy: &PolicyNetwork,
    inputs: &[(&[f64], &[f64])],
    i: usize,
) -> Result<Grads> {
    if i >= inputs.len() {
        return Err(Error::domain(format!(
            "sample index {} outside batch of {}",
            i,
            inputs.len()
        )));
    }
    let mut raw = Vec::with_capacity(inputs.len());
    let mut grads = Vec::with_capacity(inputs.len());
    for (f, e) in inputs {
        let (w, g) = policy.weight_and_grad(f, e)?;
        raw.push(w);
        grads.push(g);
    }
    let s: f64 = raw.iter().sum();
    let n = inputs.len() as f64;
    let mut out = policy.zero_grads();
    for (j, gj) in grads.iter().enumerate() {
        let delta = if j == i { s } else { 0.0 };
        let coeff = n * (delta - raw[i]) / (s * s);
        for (o, g) in out.iter_mut().zip(gj.iter()) {
            o.axpy(coeff, g);
        }
    }
    Ok(out)
}
