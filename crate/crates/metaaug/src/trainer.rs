//! The alternating optimization loop.
//!
//! Each iteration runs three phases on the same augmented mini-batch:
//!
//! 1. a virtual plain-gradient step on the task parameters w using the
//!    batch-normalized policy weights (no momentum, no weight decay);
//! 2. an analytic meta-gradient step on (theta, log alpha), driven by the
//!    validation gradient at the virtual parameters: the update coefficient of
//!    each sample is the inner product between its training gradient and the
//!    mean validation gradient, propagated through the weight normalization by
//!    the quotient rule;
//! 3. the real momentum/weight-decay step on w, reusing the per-sample
//!    gradients but recomputing the weights with the fresh theta.
//!
//! The policy's feature input is treated as a constant when differentiating
//! with respect to w (the weighted loss must not be minimized by shrinking
//! the weights), which keeps the meta-gradient first-order.
//!
//! Alpha is stored and optimized as log alpha so it stays positive.

use rand_chacha::ChaCha8Rng;

use rand::seq::SliceRandom;

use crate::augment::{apply_transform, embed, TransformSpec};
use crate::config::{FeatureSource, RunConfig, RunMode, ScheduleConfig, ScheduleMode};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    batch_eval, cosine_lr, forward, mean_grad, per_sample_loss, Grads, SgdState, TaskNetwork,
};
use crate::policy::{normalize_weights, PolicyNetwork};
use crate::rng::{augment_stream, stream, StreamId};
use crate::sampler::SamplerState;
use crate::tensor::{axpy_all, dot_all, sq_norm_all, Tensor};

/// `(1/n) * sum_i weights[i] * grads[i]`.
pub fn weighted_mean_grads(per_sample: &[Grads], weights: &[f64]) -> Result<Grads> {
    if per_sample.is_empty() || per_sample.len() != weights.len() {
        return Err(Error::Contract(format!(
            "weighted sum over {} gradients with {} weights",
            per_sample.len(),
            weights.len()
        )));
    }
    let scale = 1.0 / per_sample.len() as f64;
    let mut acc: Grads = per_sample[0].iter().map(Tensor::zeros_like).collect();
    for (g, &c) in per_sample.iter().zip(weights.iter()) {
        axpy_all(&mut acc, scale * c, g);
    }
    Ok(acc)
}

/// Virtual inner step: `w_hat = w - alpha * (1/n) * sum_i P~_i grad_i`.
/// Plain gradient descent; the SGD momentum state is untouched.
pub fn inner_step(
    net: &TaskNetwork,
    per_sample: &[Grads],
    weights: &[f64],
    alpha: f64,
) -> Result<TaskNetwork> {
    let d = weighted_mean_grads(per_sample, weights)?;
    let mut hat = net.clone();
    for (p, g) in hat.params_mut().into_iter().zip(d.iter()) {
        p.axpy(-alpha, g);
    }
    Ok(hat)
}

/// Output of the meta-gradient computation.
#[derive(Debug)]
pub struct MetaGrads {
    pub grad_theta: Grads,
    pub grad_log_alpha: f64,
    /// Mini-batch validation loss at the virtual parameters.
    pub val_loss: f64,
    /// Per-sample gradient similarities `R_i = <grad_i, g_val>`.
    pub similarities: Vec<f64>,
}

/// Analytic hypergradient of the validation loss through the virtual step.
///
/// `w_hat` must come from [`inner_step`] on the same `train_grads` and the
/// same policy inputs (feature, embedding) with the current `policy` and
/// `alpha`; the per-sample bookkeeping is the caller's contract.
///
/// With raw outputs `P_i`, their sum `S`, normalized weights
/// `P~_i = n P_i / S`, and `R_i = <grad_i, g_val>`:
///
/// grad_theta     = -(alpha / S^2) * sum_j (R_j S - sum_i R_i P_i) dP_j/dtheta
/// grad_log_alpha = -alpha * <g_val, (1/n) sum_i P~_i grad_i>
pub fn meta_grad(
    w_hat: &TaskNetwork,
    train_grads: &[Grads],
    policy_inputs: &[(Vec<f64>, Vec<f64>)],
    val_inputs: &[Vec<f64>],
    val_labels: &[usize],
    policy: &PolicyNetwork,
    alpha: f64,
) -> Result<MetaGrads> {
    if train_grads.is_empty() || train_grads.len() != policy_inputs.len() {
        return Err(Error::Contract(format!(
            "meta_grad: {} gradients vs {} policy inputs",
            train_grads.len(),
            policy_inputs.len()
        )));
    }
    let (g_val, val_loss) = mean_grad(w_hat, val_inputs, val_labels)?;

    let similarities: Vec<f64> = train_grads.iter().map(|g| dot_all(g, &g_val)).collect();

    let mut raw = Vec::with_capacity(policy_inputs.len());
    let mut policy_grads = Vec::with_capacity(policy_inputs.len());
    for (f, e) in policy_inputs {
        let (w, g) = policy.weight_and_grad(f, e)?;
        raw.push(w);
        policy_grads.push(g);
    }
    let s: f64 = raw.iter().sum();
    let weighted_sim: f64 = similarities.iter().zip(raw.iter()).map(|(r, p)| r * p).sum();

    let mut grad_theta = policy.zero_grads();
    for (j, gj) in policy_grads.iter().enumerate() {
        let coeff = -alpha * (similarities[j] * s - weighted_sim) / (s * s);
        axpy_all(&mut grad_theta, coeff, gj);
    }

    let normalized = normalize_weights(&raw)?;
    let d = weighted_mean_grads(train_grads, &normalized)?;
    let grad_log_alpha = -alpha * dot_all(&g_val, &d);

    Ok(MetaGrads {
        grad_theta,
        grad_log_alpha,
        val_loss,
        similarities,
    })
}

/// Joint momentum/weight-decay optimizer for (theta, log alpha).
///
/// Log alpha shares the optimizer by default; `alpha_exempt` switches it to a
/// plain SGD update.
#[derive(Debug, Clone)]
pub struct PolicyOptimizer {
    velocity: Vec<Tensor>,
    alpha_velocity: f64,
    momentum: f64,
    weight_decay: f64,
    alpha_exempt: bool,
}

impl PolicyOptimizer {
    pub fn new(policy: &PolicyNetwork, momentum: f64, weight_decay: f64, alpha_exempt: bool) -> Self {
        PolicyOptimizer {
            velocity: policy.params().iter().map(|t| Tensor::zeros_like(t)).collect(),
            alpha_velocity: 0.0,
            momentum,
            weight_decay,
            alpha_exempt,
        }
    }

    /// One joint step with rate `beta`. The log-alpha update is skipped when
    /// `update_alpha` is false (fixed-alpha schedules).
    pub fn step(
        &mut self,
        policy: &mut PolicyNetwork,
        log_alpha: &mut f64,
        grads: &MetaGrads,
        beta: f64,
        update_alpha: bool,
    ) -> Result<()> {
        let params = policy.params_mut();
        if params.len() != grads.grad_theta.len() {
            return Err(Error::Contract("policy optimizer: gradient count mismatch".into()));
        }
        for ((p, g), v) in params
            .into_iter()
            .zip(grads.grad_theta.iter())
            .zip(self.velocity.iter_mut())
        {
            let pd = p.data_mut();
            let gd = g.data();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let g_eff = gd[i] + self.weight_decay * pd[i];
                vd[i] = self.momentum * vd[i] + g_eff;
                pd[i] -= beta * vd[i];
            }
        }
        if update_alpha {
            if self.alpha_exempt {
                *log_alpha -= beta * grads.grad_log_alpha;
            } else {
                let g_eff = grads.grad_log_alpha + self.weight_decay * *log_alpha;
                self.alpha_velocity = self.momentum * self.alpha_velocity + g_eff;
                *log_alpha -= beta * self.alpha_velocity;
            }
        }
        Ok(())
    }
}

/// Real step on w: recomputed weights, momentum and weight decay applied,
/// per-sample gradients reused from the inner step. Returns the squared norm
/// of the weighted mini-batch gradient (the quantity the convergence monitors
/// track).
pub fn outer_step_w(
    net: &mut TaskNetwork,
    per_sample: &[Grads],
    weights: &[f64],
    sgd: &mut SgdState,
    gamma: f64,
) -> Result<f64> {
    let d = weighted_mean_grads(per_sample, weights)?;
    let grad_sq = sq_norm_all(&d);
    sgd.step(&mut net.params_mut(), &d, gamma)?;
    Ok(grad_sq)
}

/// Fixed `(alpha, beta, gamma)` from the iteration budget:
/// `alpha = c ln T / T`, `beta = sqrt(c' ln ln T / T)`, `gamma = c'' ln T / T`.
/// Requires `T >= 3` so `ln ln T > 0`, and strictly positive constants.
pub fn theorem_schedule(total: u64, cfg: &ScheduleConfig) -> Result<(f64, f64, f64)> {
    if total < 3 {
        return Err(Error::domain(format!("theorem schedule needs T >= 3, got {}", total)));
    }
    if cfg.c <= 0.0 || cfg.c_prime <= 0.0 || cfg.c_double_prime <= 0.0 {
        return Err(Error::domain("theorem schedule constants must be strictly positive"));
    }
    let t = total as f64;
    let alpha = cfg.c * t.ln() / t;
    let beta = (cfg.c_prime * t.ln().ln() / t).sqrt();
    let gamma = cfg.c_double_prime * t.ln() / t;
    Ok((alpha, beta, gamma))
}

/// One per-iteration log record. CSV column order is part of the output
/// format: t, train_loss_weighted, val_loss, grad_theta_sq, grad_w_sq, alpha,
/// weight_mean, weight_std. `weight_mean`/`weight_std` describe the *raw*
/// policy outputs (the normalized batch mean is 1 by construction).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: u64,
    pub train_loss_weighted: f64,
    pub val_loss: f64,
    pub grad_theta_sq: f64,
    pub grad_w_sq: f64,
    pub alpha: f64,
    pub weight_mean: f64,
    pub weight_std: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str =
        "t,train_loss_weighted,val_loss,grad_theta_sq,grad_w_sq,alpha,weight_mean,weight_std";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.t,
            self.train_loss_weighted,
            self.val_loss,
            self.grad_theta_sq,
            self.grad_w_sq,
            self.alpha,
            self.weight_mean,
            self.weight_std
        )
    }
}

pub fn log_to_csv(log: &[LogRow]) -> String {
    let mut out = String::from(LogRow::CSV_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

/// Everything a finished run hands back.
pub struct RunOutcome {
    pub task_net: TaskNetwork,
    pub policy: PolicyNetwork,
    pub log_alpha: f64,
    pub sampler: SamplerState,
    pub log: Vec<LogRow>,
    /// Max over iterations of |mean(normalized weights) - 1|; the
    /// normalization contract says this stays within 1e-12.
    pub max_weight_mean_dev: f64,
    /// Feature network the policy reads from (the task network itself in
    /// shared mode, the frozen init copy otherwise).
    pub frozen_feature_net: Option<TaskNetwork>,
}

/// Cycles through a shuffled index list, reshuffling at each exhaustion.
struct BatchCycler {
    indices: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchCycler {
    fn new(mut indices: Vec<usize>, mut rng: ChaCha8Rng) -> Self {
        indices.shuffle(&mut rng);
        BatchCycler { indices, pos: 0, rng }
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.pos == self.indices.len() {
                self.indices.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.indices[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn gather_inputs(ds: &Dataset, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let inputs = idx.iter().map(|&i| ds.samples[i].pixels.clone()).collect();
    let labels = idx.iter().map(|&i| ds.samples[i].label).collect();
    (inputs, labels)
}

fn gamma_at(cfg: &RunConfig, t: u64, theorem_gamma: f64) -> Result<f64> {
    match cfg.schedule.mode {
        ScheduleMode::Constant => Ok(cfg.gamma),
        ScheduleMode::Cosine => cosine_lr(t, cfg.iterations, cfg.gamma),
        ScheduleMode::Theorem1 => Ok(theorem_gamma),
    }
}

/// Mean and population standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run the full alternating loop for `cfg.iterations` iterations.
///
/// Per iteration: sample a training mini-batch, draw one transformation per
/// augmented slot from the sampler, augment, sample a validation mini-batch,
/// take the virtual step, the meta step, and the real step, and record the
/// fresh raw policy outputs into the sampler, refreshing its distribution
/// every `refresh_s` iterations. In `RandAugment` mode the policy and meta
/// phases are skipped and all weights are 1.
pub fn run(cfg: &RunConfig, dataset: &Dataset) -> Result<RunOutcome> {
    cfg.validate()?;
    validate_dataset(cfg, dataset)?;

    let mut task = TaskNetwork::init_mlp(
        dataset.input_dim(),
        &cfg.hidden_dims,
        dataset.num_classes,
        &mut stream(cfg.seed, StreamId::TaskInit),
    )?;
    let mut policy = PolicyNetwork::init(
        task.feature_dim(),
        cfg.policy_hidden,
        &mut stream(cfg.seed, StreamId::PolicyInit),
    );
    let frozen_feature_net = match cfg.feature_source {
        FeatureSource::Shared => None,
        FeatureSource::FrozenInit => Some(task.clone()),
    };
    let mut log_alpha = cfg.alpha_init.ln();

    let n_aug = cfg.batch_train * cfg.mt_factor;
    let mut sampler = SamplerState::new(cfg.epsilon, cfg.window_r, cfg.refresh_s, n_aug)?;
    let mut sampler_rng = stream(cfg.seed, StreamId::Sampler);

    let mut task_opt = SgdState::new(&task.params(), cfg.momentum, cfg.weight_decay, cfg.gamma);
    let mut policy_opt = PolicyOptimizer::new(
        &policy,
        cfg.policy_momentum,
        cfg.policy_weight_decay,
        cfg.alpha_exempt,
    );

    let (theorem_alpha, theorem_beta, theorem_gamma) = if cfg.schedule.mode == ScheduleMode::Theorem1
    {
        let rates = theorem_schedule(cfg.iterations, &cfg.schedule)?;
        log_alpha = rates.0.ln();
        rates
    } else {
        (0.0, 0.0, 0.0)
    };
    let _ = theorem_alpha;
    // The theorem schedule analyzes a fixed alpha; disable its learning there.
    let alpha_learnable = cfg.alpha_learnable && cfg.schedule.mode != ScheduleMode::Theorem1;
    let beta = if cfg.schedule.mode == ScheduleMode::Theorem1 {
        theorem_beta
    } else {
        cfg.beta
    };

    let mut train_cycler =
        BatchCycler::new(dataset.train.clone(), stream(cfg.seed, StreamId::TrainBatch));
    let mut val_cycler = if cfg.mode == RunMode::MetaAugment {
        Some(BatchCycler::new(
            dataset.val.clone(),
            stream(cfg.seed, StreamId::ValBatch),
        ))
    } else {
        None
    };

    let mut log = Vec::with_capacity(cfg.iterations as usize);
    let mut max_weight_mean_dev = 0.0f64;

    for t in 0..cfg.iterations {
        let batch_idx = train_cycler.next_batch(cfg.batch_train);

        // Augment: mt_factor independent transformations per sample.
        let mut inputs = Vec::with_capacity(n_aug);
        let mut labels = Vec::with_capacity(n_aug);
        let mut specs: Vec<TransformSpec> = Vec::with_capacity(n_aug);
        let mut embeddings = Vec::with_capacity(n_aug);
        for (slot, &si) in batch_idx
            .iter()
            .flat_map(|i| std::iter::repeat(i).take(cfg.mt_factor))
            .enumerate()
        {
            let spec = sampler.sample(&mut sampler_rng);
            let mut aug_rng = augment_stream(cfg.seed, t, slot);
            let img = apply_transform(&dataset.samples[si], &spec, &mut aug_rng)?;
            inputs.push(img.pixels);
            labels.push(img.label);
            embeddings.push(embed(&spec)?);
            specs.push(spec);
        }

        let row = match cfg.mode {
            RunMode::MetaAugment => {
                let eval = batch_eval(&task, &inputs, &labels)?;
                let policy_inputs: Vec<(Vec<f64>, Vec<f64>)> = match &frozen_feature_net {
                    None => eval
                        .features
                        .iter()
                        .zip(embeddings.iter())
                        .map(|(f, e)| (f.clone(), e.clone()))
                        .collect(),
                    Some(frozen) => {
                        let mut out = Vec::with_capacity(n_aug);
                        for (x, e) in inputs.iter().zip(embeddings.iter()) {
                            out.push((frozen.feature_of(x)?, e.clone()));
                        }
                        out
                    }
                };

                // Phase 1: virtual step with theta^(t) weights.
                let raw: Vec<f64> = policy_inputs
                    .iter()
                    .map(|(f, e)| policy.weight(f, e))
                    .collect::<Result<_>>()?;
                let weights = normalize_weights(&raw)?;
                let alpha = log_alpha.exp();
                let w_hat = inner_step(&task, &eval.grads, &weights, alpha)?;

                // Phase 2: meta step on (theta, log alpha).
                let val_idx = val_cycler.as_mut().unwrap().next_batch(cfg.batch_val);
                let (val_inputs, val_labels) = gather_inputs(dataset, &val_idx);
                let mg = meta_grad(
                    &w_hat,
                    &eval.grads,
                    &policy_inputs,
                    &val_inputs,
                    &val_labels,
                    &policy,
                    alpha,
                )?;
                let grad_theta_sq = sq_norm_all(&mg.grad_theta);
                policy_opt.step(&mut policy, &mut log_alpha, &mg, beta, alpha_learnable)?;

                // Phase 3: real step with theta^(t+1) weights on the same
                // gradients; these fresh raw outputs feed the sampler.
                let raw2: Vec<f64> = policy_inputs
                    .iter()
                    .map(|(f, e)| policy.weight(f, e))
                    .collect::<Result<_>>()?;
                for (spec, &w) in specs.iter().zip(raw2.iter()) {
                    sampler.record(spec.j, spec.k, w)?;
                }
                let weights2 = normalize_weights(&raw2)?;
                let mean_dev =
                    (weights2.iter().sum::<f64>() / weights2.len() as f64 - 1.0).abs();
                max_weight_mean_dev = max_weight_mean_dev.max(mean_dev);
                let train_loss_weighted = weights2
                    .iter()
                    .zip(eval.losses.iter())
                    .map(|(w, l)| w * l)
                    .sum::<f64>()
                    / weights2.len() as f64;
                let gamma_t = gamma_at(cfg, t, theorem_gamma)?;
                let grad_w_sq =
                    outer_step_w(&mut task, &eval.grads, &weights2, &mut task_opt, gamma_t)?;

                let (weight_mean, weight_std) = mean_std(&raw2);
                LogRow {
                    t,
                    train_loss_weighted,
                    val_loss: mg.val_loss,
                    grad_theta_sq,
                    grad_w_sq,
                    alpha: log_alpha.exp(),
                    weight_mean,
                    weight_std,
                }
            }
            RunMode::RandAugment => {
                // Unit weights, no policy: one mean-gradient pass.
                let (grads, train_loss) = mean_grad(&task, &inputs, &labels)?;
                let grad_w_sq = sq_norm_all(&grads);
                let gamma_t = gamma_at(cfg, t, theorem_gamma)?;
                task_opt.step(&mut task.params_mut(), &grads, gamma_t)?;
                LogRow {
                    t,
                    train_loss_weighted: train_loss,
                    val_loss: 0.0,
                    grad_theta_sq: 0.0,
                    grad_w_sq,
                    alpha: 0.0,
                    weight_mean: 1.0,
                    weight_std: 0.0,
                }
            }
        };
        log.push(row);

        if cfg.mode == RunMode::MetaAugment && sampler.due(t) {
            sampler.refresh();
        }
    }

    Ok(RunOutcome {
        task_net: task,
        policy,
        log_alpha,
        sampler,
        log,
        max_weight_mean_dev,
        frozen_feature_net,
    })
}

fn validate_dataset(cfg: &RunConfig, dataset: &Dataset) -> Result<()> {
    if dataset.train.is_empty() {
        return Err(Error::config("dataset has an empty train split"));
    }
    if cfg.mode == RunMode::MetaAugment && dataset.val.is_empty() {
        return Err(Error::config("metaaugment mode needs a validation split"));
    }
    for idx in dataset.train.iter().chain(dataset.val.iter()).chain(dataset.test.iter()) {
        if *idx >= dataset.samples.len() {
            return Err(Error::config(format!("split index {} out of range", idx)));
        }
    }
    Ok(())
}

/// Mean loss and accuracy of a network over the given sample indices.
pub fn evaluate(net: &TaskNetwork, dataset: &Dataset, indices: &[usize]) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::domain("evaluate: empty index list"));
    }
    let (inputs, labels) = gather_inputs(dataset, indices);
    let (_, logits) = forward(net, &inputs)?;
    let losses = per_sample_loss(&logits, &labels)?;
    let c = net.num_classes();
    let mut correct = 0usize;
    for (row, &label) in logits.data().chunks_exact(c).zip(labels.iter()) {
        let mut best = 0usize;
        for i in 1..c {
            if row[i] > row[best] {
                best = i;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    let loss = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((loss, correct as f64 / indices.len() as f64))
}

// ---------------------------------------------------------------------------
// Transfer training
// ---------------------------------------------------------------------------

/// The frozen artifacts transfer training consumes: the trained policy, the
/// task network whose feature extractor feeds it, and the final sampling
/// distribution.
#[derive(Debug, Clone)]
pub struct FrozenBundle {
    pub policy: PolicyNetwork,
    pub feature_net: TaskNetwork,
    pub probabilities: Vec<f64>,
}

/// Train a fresh network with a frozen policy, frozen feature extractor, and
/// frozen sampling distribution. Only the new network's parameters move.
///
/// `force_unit_weights` replaces every policy output with weight 1 (the
/// unweighted-SGD reference; it consumes the same RNG streams, so the two
/// trajectories are comparable draw for draw).
pub fn transfer_train(
    cfg: &RunConfig,
    dataset: &Dataset,
    bundle: &FrozenBundle,
    force_unit_weights: bool,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::config("dataset has an empty train split"));
    }
    if bundle.feature_net.input_dim() != dataset.input_dim() {
        return Err(Error::Checkpoint(format!(
            "frozen feature net expects input {}, dataset provides {}",
            bundle.feature_net.input_dim(),
            dataset.input_dim()
        )));
    }
    if bundle.policy.feature_dim() != bundle.feature_net.feature_dim() {
        return Err(Error::Checkpoint("policy/feature-extractor dimension mismatch".into()));
    }

    let mut net = TaskNetwork::init_mlp(
        dataset.input_dim(),
        &cfg.hidden_dims,
        dataset.num_classes,
        &mut stream(cfg.seed, StreamId::TaskInit),
    )?;
    let mut sgd = SgdState::new(&net.params(), cfg.momentum, cfg.weight_decay, cfg.gamma);

    let n_aug = cfg.batch_train * cfg.mt_factor;
    let mut sampler = SamplerState::new(cfg.epsilon, cfg.window_r, cfg.refresh_s, n_aug)?;
    sampler.set_probabilities(bundle.probabilities.clone())?;
    let mut sampler_rng = stream(cfg.seed, StreamId::Sampler);
    let mut train_cycler =
        BatchCycler::new(dataset.train.clone(), stream(cfg.seed, StreamId::TrainBatch));
    let mut val_cycler = if dataset.val.is_empty() {
        None
    } else {
        Some(BatchCycler::new(
            dataset.val.clone(),
            stream(cfg.seed, StreamId::ValBatch),
        ))
    };

    let mut log = Vec::with_capacity(cfg.iterations as usize);
    let mut max_weight_mean_dev = 0.0f64;

    for t in 0..cfg.iterations {
        let batch_idx = train_cycler.next_batch(cfg.batch_train);
        let mut inputs = Vec::with_capacity(n_aug);
        let mut labels = Vec::with_capacity(n_aug);
        let mut raw = Vec::with_capacity(n_aug);
        for (slot, &si) in batch_idx
            .iter()
            .flat_map(|i| std::iter::repeat(i).take(cfg.mt_factor))
            .enumerate()
        {
            let spec = sampler.sample(&mut sampler_rng);
            let mut aug_rng = augment_stream(cfg.seed, t, slot);
            let img = apply_transform(&dataset.samples[si], &spec, &mut aug_rng)?;
            let weight = if force_unit_weights {
                1.0
            } else {
                let feature = bundle.feature_net.feature_of(&img.pixels)?;
                bundle.policy.weight(&feature, &embed(&spec)?)?
            };
            raw.push(weight);
            inputs.push(img.pixels);
            labels.push(img.label);
        }
        let weights = if force_unit_weights {
            raw.clone()
        } else {
            normalize_weights(&raw)?
        };
        let mean_dev = (weights.iter().sum::<f64>() / weights.len() as f64 - 1.0).abs();
        max_weight_mean_dev = max_weight_mean_dev.max(mean_dev);

        let eval = batch_eval(&net, &inputs, &labels)?;
        let train_loss_weighted = weights
            .iter()
            .zip(eval.losses.iter())
            .map(|(w, l)| w * l)
            .sum::<f64>()
            / weights.len() as f64;
        let gamma_t = gamma_at(cfg, t, 0.0)?;
        let grad_w_sq = outer_step_w(&mut net, &eval.grads, &weights, &mut sgd, gamma_t)?;

        let val_loss = match val_cycler.as_mut() {
            Some(cycler) => {
                let val_idx = cycler.next_batch(cfg.batch_val);
                let (vi, vl) = gather_inputs(dataset, &val_idx);
                let losses = per_sample_loss(&forward(&net, &vi)?.1, &vl)?;
                losses.iter().sum::<f64>() / losses.len() as f64
            }
            None => 0.0,
        };

        let (weight_mean, weight_std) = mean_std(&raw);
        log.push(LogRow {
            t,
            train_loss_weighted,
            val_loss,
            grad_theta_sq: 0.0,
            grad_w_sq,
            alpha: 0.0,
            weight_mean,
            weight_std,
        });
    }

    Ok(RunOutcome {
        task_net: net,
        policy: bundle.policy.clone(),
        log_alpha: 0.0,
        sampler,
        log,
        max_weight_mean_dev,
        frozen_feature_net: Some(bundle.feature_net.clone()),
    })
}
