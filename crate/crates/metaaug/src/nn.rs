//! Minimal dense-network engine: forward passes, per-sample softmax
//! cross-entropy losses and gradients, and momentum SGD.
//!
//! Both the task network and the policy network are built from [`DenseLayer`]s.
//! Everything here is a pure function of explicit state; batch loops reduce in
//! a fixed order so results are bit-reproducible.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients for a parameter list, in the same order as
/// [`TaskNetwork::params`] (layer 0 weights, layer 0 bias, layer 1 weights, ...).
pub type Grads = Vec<Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation `z`.
    /// ReLU uses the subgradient 0 at z == 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// A dense affine layer `y = act(Wx + b)` with row-major weights `[out × in]`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl DenseLayer {
    /// Layer with all parameters zero.
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Tensor::zeros(vec![out_dim, in_dim]),
            bias: Tensor::zeros(vec![out_dim]),
            activation,
        }
    }

    /// Uniform fan-in init: weights ~ U(-1/sqrt(in), 1/sqrt(in)), bias zero.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        DenseLayer {
            weights: Tensor::new(vec![out_dim, in_dim], data).expect("init shape"),
            bias: Tensor::zeros(vec![out_dim]),
            activation,
        }
    }

    /// Build from explicit parameters; shapes must be consistent.
    pub fn from_parts(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 || bias.shape().len() != 1 {
            return Err(Error::dimension("dense layer expects matrix weights and vector bias"));
        }
        if weights.shape()[0] != bias.shape()[0] {
            return Err(Error::dimension(format!(
                "weights rows {} != bias len {}",
                weights.shape()[0],
                bias.shape()[0]
            )));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn parts_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.weights, &mut self.bias)
    }

    /// Pre-activations `z = Wx + b` and activations `a = act(z)`.
    pub fn forward(&self, x: &[f64], z: &mut Vec<f64>, a: &mut Vec<f64>) {
        let (out, inp) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(x.len(), inp);
        z.clear();
        a.clear();
        let w = self.weights.data();
        let b = self.bias.data();
        for o in 0..out {
            let row = &w[o * inp..(o + 1) * inp];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(x.iter()) {
                acc += wi * xi;
            }
            z.push(acc);
            a.push(self.activation.apply(acc));
        }
    }
}

/// Feed-forward classifier with a designated penultimate "feature" layer.
///
/// The last layer emits `num_classes` logits with identity activation; the
/// post-activation output of `layers[feature_index]` is the deep feature fed
/// to the policy network.
#[derive(Debug, Clone)]
pub struct TaskNetwork {
    layers: Vec<DenseLayer>,
    feature_index: usize,
    num_classes: usize,
}

impl TaskNetwork {
    pub fn new(layers: Vec<DenseLayer>, feature_index: usize, num_classes: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::dimension("task network needs at least one layer"));
        }
        if feature_index + 1 >= layers.len() {
            return Err(Error::dimension(format!(
                "feature_index {} must be strictly before the logit layer (len {})",
                feature_index,
                layers.len()
            )));
        }
        let last = layers.last().unwrap();
        if last.out_dim() != num_classes || last.activation() != Activation::Identity {
            return Err(Error::dimension(
                "last layer must emit num_classes logits with identity activation",
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dimension("adjacent layer sizes do not chain"));
            }
        }
        if num_classes == 0 {
            return Err(Error::domain("num_classes must be positive"));
        }
        Ok(TaskNetwork {
            layers,
            feature_index,
            num_classes,
        })
    }

    /// ReLU MLP `input -> hidden[0] -> ... -> hidden[last] -> num_classes`,
    /// feature layer = last hidden layer.
    pub fn init_mlp<R: Rng>(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::config("need at least one hidden layer"));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(DenseLayer::init(prev, h, Activation::Relu, rng));
            prev = h;
        }
        layers.push(DenseLayer::init(prev, num_classes, Activation::Identity, rng));
        TaskNetwork::new(layers, hidden.len() - 1, num_classes)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.feature_index].out_dim()
    }

    pub fn feature_index(&self) -> usize {
        self.feature_index
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Parameter tensors in canonical order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        self.params().iter().map(|t| Tensor::zeros_like(t)).collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dimension(format!(
                "input length {} != network input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Per-layer pre-activations and activations for one input.
    fn forward_cache(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut activs = Vec::with_capacity(self.layers.len());
        let mut cur: &[f64] = x;
        for layer in &self.layers {
            let mut z = Vec::new();
            let mut a = Vec::new();
            layer.forward(cur, &mut z, &mut a);
            zs.push(z);
            activs.push(a);
            cur = activs.last().unwrap();
        }
        (zs, activs)
    }

    /// Feature vector (post-activation of the feature layer) for one input,
    /// without building the full cache past the feature layer.
    pub fn feature_of(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for layer in &self.layers[..=self.feature_index] {
            let mut z = Vec::new();
            let mut a = Vec::new();
            layer.forward(&cur, &mut z, &mut a);
            cur = a;
        }
        Ok(cur)
    }
}

/// Batch forward pass: `features` is `[batch × feature_dim]`, `logits` is
/// `[batch × num_classes]`.
pub fn forward(net: &TaskNetwork, inputs: &[Vec<f64>]) -> Result<(Tensor, Tensor)> {
    let fd = net.feature_dim();
    let c = net.num_classes();
    let mut features = Vec::with_capacity(inputs.len() * fd);
    let mut logits = Vec::with_capacity(inputs.len() * c);
    for x in inputs {
        net.check_input(x)?;
        let (_, activs) = net.forward_cache(x);
        features.extend_from_slice(&activs[net.feature_index]);
        logits.extend_from_slice(activs.last().unwrap());
    }
    Ok((
        Tensor::new(vec![inputs.len(), fd], features)?,
        Tensor::new(vec![inputs.len(), c], logits)?,
    ))
}

/// Stable softmax cross-entropy per row: `loss_i = logsumexp(z_i) - z_i[y_i]`.
pub fn per_sample_loss(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::dimension(format!(
            "logits shape {:?} incompatible with {} labels",
            shape,
            labels.len()
        )));
    }
    let c = shape[1];
    let mut out = Vec::with_capacity(labels.len());
    for (row, &label) in logits.data().chunks_exact(c).zip(labels.iter()) {
        if label >= c {
            return Err(Error::domain(format!("label {} out of range [0, {})", label, c)));
        }
        out.push(log_sum_exp(row) - row[label]);
    }
    Ok(out)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Softmax probabilities of one logit row, computed via the shifted exp.
fn softmax_row(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|z| (z - lse).exp()).collect()
}

/// One sample's forward/backward through the network. Returns
/// (feature, loss, gradient list).
fn backward_single(net: &TaskNetwork, x: &[f64], label: usize) -> Result<(Vec<f64>, f64, Grads)> {
    net.check_input(x)?;
    if label >= net.num_classes() {
        return Err(Error::domain(format!(
            "label {} out of range [0, {})",
            label,
            net.num_classes()
        )));
    }
    let (zs, activs) = net.forward_cache(x);
    let logits = activs.last().unwrap();
    let loss = log_sum_exp(logits) - logits[label];

    // delta at the logits: softmax(z) - onehot(label); the logit layer has
    // identity activation so this is also d loss / d z_last.
    let mut delta = softmax_row(logits);
    delta[label] -= 1.0;

    let nl = net.layers.len();
    let mut grads: Vec<Option<(Tensor, Tensor)>> = (0..nl).map(|_| None).collect();
    for l in (0..nl).rev() {
        let layer = &net.layers[l];
        let input: &[f64] = if l == 0 { x } else { &activs[l - 1] };
        let (out, inp) = (layer.out_dim(), layer.in_dim());
        let mut dw = vec![0.0; out * inp];
        for o in 0..out {
            let d = delta[o];
            let row = &mut dw[o * inp..(o + 1) * inp];
            for (slot, xi) in row.iter_mut().zip(input.iter()) {
                *slot = d * xi;
            }
        }
        let db = delta.clone();
        grads[l] = Some((
            Tensor::new(vec![out, inp], dw)?,
            Tensor::new(vec![out], db)?,
        ));
        if l > 0 {
            // delta_prev = (W^T delta) * act'(z_prev)
            let w = layer.weights.data();
            let mut prev = vec![0.0; inp];
            for o in 0..out {
                let d = delta[o];
                let row = &w[o * inp..(o + 1) * inp];
                for (p, wi) in prev.iter_mut().zip(row.iter()) {
                    *p += d * wi;
                }
            }
            let act = net.layers[l - 1].activation();
            for (p, z) in prev.iter_mut().zip(zs[l - 1].iter()) {
                *p *= act.derivative(*z);
            }
            delta = prev;
        }
    }

    let mut flat = Vec::with_capacity(nl * 2);
    for g in grads {
        let (dw, db) = g.unwrap();
        flat.push(dw);
        flat.push(db);
    }
    Ok((activs[net.feature_index].clone(), loss, flat))
}

/// Per-sample parameter gradients of the softmax cross-entropy loss.
pub fn per_sample_grad(
    net: &TaskNetwork,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<Vec<Grads>> {
    if inputs.is_empty() {
        return Err(Error::domain("per_sample_grad needs a nonempty batch"));
    }
    if inputs.len() != labels.len() {
        return Err(Error::dimension("inputs/labels length mismatch"));
    }
    inputs
        .iter()
        .zip(labels.iter())
        .map(|(x, &y)| backward_single(net, x, y).map(|(_, _, g)| g))
        .collect()
}

/// Per-sample features, losses, and gradients in one pass.
pub struct BatchEval {
    /// Post-activation feature vectors, one per sample.
    pub features: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    pub grads: Vec<Grads>,
}

pub fn batch_eval(net: &TaskNetwork, inputs: &[Vec<f64>], labels: &[usize]) -> Result<BatchEval> {
    if inputs.len() != labels.len() {
        return Err(Error::dimension("inputs/labels length mismatch"));
    }
    let mut features = Vec::with_capacity(inputs.len());
    let mut losses = Vec::with_capacity(inputs.len());
    let mut grads = Vec::with_capacity(inputs.len());
    for (x, &y) in inputs.iter().zip(labels.iter()) {
        let (f, l, g) = backward_single(net, x, y)?;
        features.push(f);
        losses.push(l);
        grads.push(g);
    }
    Ok(BatchEval {
        features,
        losses,
        grads,
    })
}

/// Gradient of the mean loss over a batch, accumulated directly (one gradient
/// buffer, contributions scaled by 1/n). Also returns the mean loss.
pub fn mean_grad(
    net: &TaskNetwork,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<(Grads, f64)> {
    if inputs.is_empty() {
        return Err(Error::domain("mean_grad needs a nonempty batch"));
    }
    let scale = 1.0 / inputs.len() as f64;
    let mut acc = net.zero_grads();
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(labels.iter()) {
        let (_, l, g) = backward_single(net, x, y)?;
        loss += scale * l;
        for (a, gi) in acc.iter_mut().zip(g.iter()) {
            a.axpy(scale, gi);
        }
    }
    Ok((acc, loss))
}

/// Momentum SGD state. Velocities mirror the parameter tensors.
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Vec<Tensor>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
}

impl SgdState {
    pub fn new(params: &[&Tensor], momentum: f64, weight_decay: f64, base_lr: f64) -> Self {
        SgdState {
            velocity: params.iter().map(|t| Tensor::zeros_like(t)).collect(),
            momentum,
            weight_decay,
            base_lr,
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Classical momentum with L2 folded into the gradient:
    /// `g += wd * p; v = mu * v + g; p -= lr * v`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::dimension("sgd_step: parameter/gradient count mismatch"));
        }
        for ((p, g), v) in params.iter_mut().zip(grads.iter()).zip(self.velocity.iter_mut()) {
            if !p.same_shape(g) || !p.same_shape(v) {
                return Err(Error::dimension("sgd_step: tensor shape mismatch"));
            }
            let pd = p.data_mut();
            let gd = g.data();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let g_eff = gd[i] + self.weight_decay * pd[i];
                vd[i] = self.momentum * vd[i] + g_eff;
                pd[i] -= lr * vd[i];
            }
        }
        Ok(())
    }
}

/// Cosine decay: `lr0 * 0.5 * (1 + cos(pi * t / total))`.
pub fn cosine_lr(t: u64, total: u64, lr0: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::domain("cosine_lr: total iterations must be positive"));
    }
    if t > total {
        return Err(Error::domain(format!("cosine_lr: t {} > total {}", t, total)));
    }
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};
    use crate::verify::max_rel_err;
    use rand::Rng;

    fn identity_layer(dim: usize) -> DenseLayer {
        let mut w = Tensor::zeros(vec![dim, dim]);
        for i in 0..dim {
            w.data_mut()[i * dim + i] = 1.0;
        }
        DenseLayer::from_parts(w, Tensor::zeros(vec![dim]), Activation::Identity).unwrap()
    }

    #[test]
    fn forward_identity_network_passes_input_through() {
        // Two stacked identity layers so the feature layer sits before the
        // logit layer.
        let net = TaskNetwork::new(vec![identity_layer(3), identity_layer(3)], 0, 3).unwrap();
        let x = vec![0.25, -1.5, 2.0];
        let (features, logits) = forward(&net, &[x.clone()]).unwrap();
        assert_eq!(logits.data(), x.as_slice());
        assert_eq!(features.data(), x.as_slice());
    }

    #[test]
    fn forward_zero_network_outputs_zero() {
        let net = TaskNetwork::new(
            vec![
                DenseLayer::zeros(4, 5, Activation::Relu),
                DenseLayer::zeros(5, 3, Activation::Identity),
            ],
            0,
            3,
        )
        .unwrap();
        let (_, logits) = forward(&net, &[vec![1.0, -2.0, 3.0, 4.0]]).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_hand_computed_two_layer() {
        let mut rng = stream(11, StreamId::Aux);
        let l1 = DenseLayer::init(3, 4, Activation::Relu, &mut rng);
        let l2 = DenseLayer::init(4, 2, Activation::Identity, &mut rng);
        let x = vec![0.3, -0.8, 1.7];

        // Hand-computed W2 * relu(W1 x + b1) + b2.
        let mut h = vec![0.0; 4];
        for o in 0..4 {
            let mut acc = l1.bias().data()[o];
            for i in 0..3 {
                acc += l1.weights().data()[o * 3 + i] * x[i];
            }
            h[o] = acc.max(0.0);
        }
        let mut expect = vec![0.0; 2];
        for o in 0..2 {
            let mut acc = l2.bias().data()[o];
            for i in 0..4 {
                acc += l2.weights().data()[o * 4 + i] * h[i];
            }
            expect[o] = acc;
        }

        let net = TaskNetwork::new(vec![l1, l2], 0, 2).unwrap();
        let (_, logits) = forward(&net, &[x]).unwrap();
        for (a, b) in logits.data().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_bad_input_length() {
        let net = TaskNetwork::new(vec![identity_layer(3), identity_layer(3)], 0, 3).unwrap();
        assert!(forward(&net, &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn loss_uniform_logits_is_ln_c() {
        for c in [2usize, 5, 10] {
            let logits = Tensor::new(vec![1, c], vec![0.7; c]).unwrap();
            let loss = per_sample_loss(&logits, &[c - 1]).unwrap();
            assert!((loss[0] - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_saturated_logit_is_zero() {
        let logits = Tensor::new(vec![1, 3], vec![0.0, 1000.0, 0.0]).unwrap();
        let loss = per_sample_loss(&logits, &[1]).unwrap();
        assert!(loss[0].abs() < 1e-9);
        assert!(loss[0] >= 0.0);
    }

    #[test]
    fn loss_matches_naive_softmax_oracle() {
        // Direct, unshifted evaluation is the independent route here.
        let logits = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = per_sample_loss(&logits, &[2]).unwrap();
        let z = [1.0f64, 2.0, 3.0];
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let expect = -(z[2].exp() / denom).ln();
        assert!((loss[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn loss_rejects_out_of_range_label() {
        let logits = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(per_sample_loss(&logits, &[3]).is_err());
    }

    #[test]
    fn grad_zero_input_hits_only_biases() {
        let mut rng = stream(5, StreamId::Aux);
        // Identity activations, zero biases: with x = 0 every activation is 0,
        // so both weight-gradient outer products vanish.
        let l1 = DenseLayer::from_parts(
            DenseLayer::init(4, 3, Activation::Identity, &mut rng).weights().clone(),
            Tensor::zeros(vec![3]),
            Activation::Identity,
        )
        .unwrap();
        let l2 = DenseLayer::init(3, 2, Activation::Identity, &mut rng);
        let net = TaskNetwork::new(vec![l1, l2], 0, 2).unwrap();
        let grads = per_sample_grad(&net, &[vec![0.0; 4]], &[0]).unwrap();
        let g = &grads[0];
        assert!(g[0].data().iter().all(|&v| v == 0.0), "layer-0 weights");
        assert!(g[2].data().iter().all(|&v| v == 0.0), "layer-1 weights");
        assert!(g[1].data().iter().any(|&v| v != 0.0), "layer-0 bias");
        assert!(g[3].data().iter().any(|&v| v != 0.0), "layer-1 bias");
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = stream(23, StreamId::Aux);
        let mut net = TaskNetwork::init_mlp(5, &[6, 4], 3, &mut rng).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let label = 2usize;
        let analytic = per_sample_grad(&net, &[x.clone()], &[label]).unwrap().remove(0);

        let h = 1e-5;
        let mut fd = net.zero_grads();
        for ti in 0..fd.len() {
            for i in 0..fd[ti].len() {
                let orig = net.params()[ti].data()[i];
                net.params_mut()[ti].data_mut()[i] = orig + h;
                let (_, lp, _) = super::backward_single(&net, &x, label).unwrap();
                net.params_mut()[ti].data_mut()[i] = orig - h;
                let (_, lm, _) = super::backward_single(&net, &x, label).unwrap();
                net.params_mut()[ti].data_mut()[i] = orig;
                fd[ti].data_mut()[i] = (lp - lm) / (2.0 * h);
            }
        }
        assert!(max_rel_err(&analytic, &fd) <= 1e-5);
    }

    #[test]
    fn grad_deterministic_for_identical_samples() {
        let mut rng = stream(9, StreamId::Aux);
        let net = TaskNetwork::init_mlp(4, &[5], 3, &mut rng).unwrap();
        let x = vec![0.1, 0.5, -0.3, 0.9];
        let batch: Vec<Vec<f64>> = (0..4).map(|_| x.clone()).collect();
        let grads = per_sample_grad(&net, &batch, &[1, 1, 1, 1]).unwrap();
        for g in &grads[1..] {
            for (a, b) in g.iter().zip(grads[0].iter()) {
                assert_eq!(a.data(), b.data());
            }
        }
    }

    #[test]
    fn mean_of_per_sample_grads_equals_grad_of_mean_loss() {
        let mut rng = stream(31, StreamId::Aux);
        let net = TaskNetwork::init_mlp(4, &[6], 3, &mut rng).unwrap();
        let batch: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..3)).collect();

        let per = per_sample_grad(&net, &batch, &labels).unwrap();
        let mut avg = net.zero_grads();
        for g in &per {
            for (a, gi) in avg.iter_mut().zip(g.iter()) {
                a.axpy(1.0 / 8.0, gi);
            }
        }
        let (direct, _) = mean_grad(&net, &batch, &labels).unwrap();
        for (a, b) in avg.iter().zip(direct.iter()) {
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sgd_plain_step() {
        let mut p = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let g = Tensor::new(vec![2], vec![0.5, 0.25]).unwrap();
        let mut st = SgdState::new(&[&p], 0.0, 0.0, 0.1);
        st.step(&mut [&mut p], &[g], 0.1).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
    }

    #[test]
    fn sgd_zero_grad_is_fixed_point() {
        let mut p = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let g = Tensor::zeros(vec![2]);
        let mut st = SgdState::new(&[&p], 0.9, 0.0, 0.1);
        st.step(&mut [&mut p], &[g], 0.1).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn sgd_momentum_matches_unrolled_recurrence() {
        let mut p = Tensor::new(vec![1], vec![2.0]).unwrap();
        let g1 = Tensor::new(vec![1], vec![0.4]).unwrap();
        let g2 = Tensor::new(vec![1], vec![-0.3]).unwrap();
        let (mu, wd, lr) = (0.9, 0.01, 0.05);
        let mut st = SgdState::new(&[&p], mu, wd, lr);
        st.step(&mut [&mut p], &[g1.clone()], lr).unwrap();
        st.step(&mut [&mut p], &[g2.clone()], lr).unwrap();

        // Hand-unrolled recurrence.
        let mut pe = 2.0;
        let mut v = 0.0;
        for g in [0.4, -0.3] {
            let ge = g + wd * pe;
            v = mu * v + ge;
            pe -= lr * v;
        }
        assert!((p.data()[0] - pe).abs() < 1e-15);
    }

    #[test]
    fn cosine_lr_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 0.1).unwrap(), 0.1);
        assert!(cosine_lr(100, 100, 0.1).unwrap().abs() < 1e-17);
        assert!((cosine_lr(50, 100, 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_lr(101, 100, 0.1).is_err());
    }

    #[test]
    fn layer_backward_matches_fd_for_each_activation() {
        // Property from the module contract: analytic backward equals central
        // finite differences for every layer type, randomized trials.
        let mut rng = stream(77, StreamId::Aux);
        for act in [Activation::Relu, Activation::Sigmoid, Activation::Identity] {
            for _ in 0..34 {
                let l1 = DenseLayer::init(4, 5, act, &mut rng);
                let l2 = DenseLayer::init(5, 3, Activation::Identity, &mut rng);
                let mut net = TaskNetwork::new(vec![l1, l2], 0, 3).unwrap();
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let label = rng.gen_range(0..3);
                let analytic = per_sample_grad(&net, &[x.clone()], &[label]).unwrap().remove(0);

                let h = 1e-5;
                let mut fd = net.zero_grads();
                for ti in 0..fd.len() {
                    for i in 0..fd[ti].len() {
                        let orig = net.params()[ti].data()[i];
                        net.params_mut()[ti].data_mut()[i] = orig + h;
                        let lp = per_sample_loss(
                            &forward(&net, &[x.clone()]).unwrap().1,
                            &[label],
                        )
                        .unwrap()[0];
                        net.params_mut()[ti].data_mut()[i] = orig - h;
                        let lm = per_sample_loss(
                            &forward(&net, &[x.clone()]).unwrap().1,
                            &[label],
                        )
                        .unwrap()[0];
                        net.params_mut()[ti].data_mut()[i] = orig;
                        fd[ti].data_mut()[i] = (lp - lm) / (2.0 * h);
                    }
                }
                assert!(
                    max_rel_err(&analytic, &fd) <= 1e-5,
                    "activation {:?} exceeded tolerance",
                    act
                );
            }
        }
    }
}
