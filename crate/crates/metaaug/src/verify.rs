//! Independent oracles and monitors: finite-difference hypergradients, a
//! brute-force weighted-loss evaluator, and convergence-trend checks over run
//! logs.
//!
//! Everything here deliberately recomputes quantities through a separate path
//! from the training code so it can stand as evidence against it.

use rand::Rng;

use crate::augment::{apply_transform, embed, ImageSample, TransformSpec};
use crate::config::{FeatureSource, RunConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward, per_sample_grad, per_sample_loss, Grads, TaskNetwork};
use crate::policy::{normalize_weights, PolicyNetwork};
use crate::rng::keyed_stream;
use crate::trainer::{inner_step, meta_grad, run, LogRow, MetaGrads, RunOutcome};
use crate::tensor::Tensor;

/// Max per-coordinate relative error between two aligned tensor lists, with a
/// small-magnitude floor: coordinates below 1e-4 in both are compared against
/// an absolute budget of `tol * 1e-4` instead of a meaningless ratio.
pub fn max_rel_err(a: &[Tensor], b: &[Tensor]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        for (u, v) in x.data().iter().zip(y.data().iter()) {
            let denom = u.abs().max(v.abs()).max(1e-4);
            worst = worst.max((u - v).abs() / denom);
        }
    }
    worst
}

/// A self-contained tiny hypergradient problem: a small task network, a
/// policy, one augmented training batch (with fixed per-sample gradients and
/// policy inputs), and one validation batch.
pub struct TinyInstance {
    pub net: TaskNetwork,
    pub policy: PolicyNetwork,
    pub log_alpha: f64,
    pub train_grads: Vec<Grads>,
    pub policy_inputs: Vec<(Vec<f64>, Vec<f64>)>,
    pub val_inputs: Vec<Vec<f64>>,
    pub val_labels: Vec<usize>,
}

impl TinyInstance {
    /// Random instance with the given feature width and policy hidden width.
    /// The policy head is perturbed away from zero so theta gradients are
    /// exercised everywhere.
    pub fn random(
        feature_dim: usize,
        policy_hidden: usize,
        n_train: usize,
        n_val: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let input_dim = 6;
        let classes = 3;
        let mut net =
            TaskNetwork::init_mlp(input_dim, &[feature_dim + 2, feature_dim], classes, rng).unwrap();
        // Randomized biases keep pre-activations off the exact ReLU kink,
        // where central differences are one-sided.
        for t in net.params_mut() {
            for v in t.data_mut() {
                if *v == 0.0 {
                    *v = rng.gen_range(-0.2..0.2);
                }
            }
        }
        let mut policy = PolicyNetwork::init(feature_dim, policy_hidden, rng);
        for t in policy.params_mut() {
            for v in t.data_mut() {
                if *v == 0.0 {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        }
        let make_batch = |rng: &mut dyn rand::RngCore, n: usize| -> (Vec<Vec<f64>>, Vec<usize>) {
            let inputs = (0..n)
                .map(|_| (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            (inputs, labels)
        };
        let (train_inputs, train_labels) = make_batch(rng, n_train);
        let (val_inputs, val_labels) = make_batch(rng, n_val);
        let train_grads = per_sample_grad(&net, &train_inputs, &train_labels).unwrap();
        let policy_inputs = train_inputs
            .iter()
            .map(|x| {
                let spec = TransformSpec::new(
                    rng.gen_range(1..=14),
                    rng.gen_range(1..=14),
                    rng.gen_range(0.0..=10.0),
                    rng.gen_range(0.0..=10.0),
                )
                .unwrap();
                (net.feature_of(x).unwrap(), embed(&spec).unwrap())
            })
            .collect();
        TinyInstance {
            net,
            policy,
            log_alpha: rng.gen_range(0.05f64..0.3).ln(),
            train_grads,
            policy_inputs,
            val_inputs,
            val_labels,
        }
    }

    /// The composed objective `L^val(w_hat(theta, alpha))` for arbitrary
    /// policy parameters and log alpha, holding the per-sample training
    /// gradients and policy input features fixed (they are constants of the
    /// meta step).
    pub fn val_loss_at(&self, policy: &PolicyNetwork, log_alpha: f64) -> Result<f64> {
        let raw: Vec<f64> = self
            .policy_inputs
            .iter()
            .map(|(f, e)| policy.weight(f, e))
            .collect::<Result<_>>()?;
        let weights = normalize_weights(&raw)?;
        let hat = inner_step(&self.net, &self.train_grads, &weights, log_alpha.exp())?;
        let losses = per_sample_loss(&forward(&hat, &self.val_inputs)?.1, &self.val_labels)?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// The analytic hypergradient for this instance.
    pub fn analytic(&self) -> Result<MetaGrads> {
        let raw: Vec<f64> = self
            .policy_inputs
            .iter()
            .map(|(f, e)| self.policy.weight(f, e))
            .collect::<Result<_>>()?;
        let weights = normalize_weights(&raw)?;
        let alpha = self.log_alpha.exp();
        let hat = inner_step(&self.net, &self.train_grads, &weights, alpha)?;
        meta_grad(
            &hat,
            &self.train_grads,
            &self.policy_inputs,
            &self.val_inputs,
            &self.val_labels,
            &self.policy,
            alpha,
        )
    }

    /// Central finite differences of the composed objective, coordinate-wise
    /// over theta and log alpha.
    pub fn fd_hypergrad(&self, eps: f64) -> Result<(Grads, f64)> {
        if !(1e-6..=1e-4).contains(&eps) {
            return Err(Error::domain(format!("fd step {} outside [1e-6, 1e-4]", eps)));
        }
        let mut policy = self.policy.clone();
        let mut out = policy.zero_grads();
        for ti in 0..out.len() {
            for i in 0..out[ti].len() {
                let orig = policy.params()[ti].data()[i];
                policy.params_mut()[ti].data_mut()[i] = orig + eps;
                let fp = self.val_loss_at(&policy, self.log_alpha)?;
                policy.params_mut()[ti].data_mut()[i] = orig - eps;
                let fm = self.val_loss_at(&policy, self.log_alpha)?;
                policy.params_mut()[ti].data_mut()[i] = orig;
                out[ti].data_mut()[i] = (fp - fm) / (2.0 * eps);
            }
        }
        let ap = self.val_loss_at(&self.policy, self.log_alpha + eps)?;
        let am = self.val_loss_at(&self.policy, self.log_alpha - eps)?;
        Ok((out, (ap - am) / (2.0 * eps)))
    }
}

/// Monte Carlo estimate of the full weighted training objective: an exhaustive
/// sum over every sample and every ordered pair from `funcs`, with `mc`
/// magnitude draws per pair. Returns `(estimate, standard_error)`.
///
/// Draws are keyed by `(replicate, j, k)` rather than consumed sequentially,
/// so the estimate is invariant to dataset order up to floating-point
/// reassociation; within one replicate all samples see the same magnitudes
/// and sign draws.
pub fn weighted_loss_oracle(
    net: &TaskNetwork,
    policy: &PolicyNetwork,
    feature_net: &TaskNetwork,
    samples: &[ImageSample],
    funcs: &[usize],
    mc: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if mc == 0 {
        return Err(Error::domain("mc_samples must be at least 1"));
    }
    if samples.is_empty() || funcs.is_empty() {
        return Err(Error::domain("oracle needs samples and at least one function"));
    }
    let mut replicates = Vec::with_capacity(mc);
    for s in 0..mc {
        let mut acc = 0.0;
        for &j in funcs {
            for &k in funcs {
                let mut pair_rng = keyed_stream(seed, 0x20, s as u64, j as u64, k as u64);
                let m1: f64 = pair_rng.gen_range(0.0..10.0);
                let m2: f64 = pair_rng.gen_range(0.0..10.0);
                let spec = TransformSpec { j, k, m1, m2 };
                let embedding = embed(&spec)?;
                for img in samples {
                    // Every sample replays the same sign draws for this pair.
                    let mut sign_rng = pair_rng.clone();
                    let aug = apply_transform(img, &spec, &mut sign_rng)?;
                    let loss =
                        per_sample_loss(&forward(net, &[aug.pixels.clone()])?.1, &[aug.label])?[0];
                    let feature = feature_net.feature_of(&aug.pixels)?;
                    let weight = policy.weight(&feature, &embedding)?;
                    acc += weight * loss;
                }
            }
        }
        replicates.push(acc / (samples.len() * funcs.len() * funcs.len()) as f64);
    }
    let mean = replicates.iter().sum::<f64>() / mc as f64;
    let var = replicates.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
        / (mc as f64 * (mc as f64 - 1.0).max(1.0));
    Ok((mean, var.sqrt()))
}

/// Per-iteration statistics extracted from a run log.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub stats: Vec<IterStat>,
}

#[derive(Debug, Clone, Copy)]
pub struct IterStat {
    pub t: u64,
    pub grad_theta_sq: f64,
    pub grad_w_sq: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

impl ConvergenceReport {
    pub fn from_log(log: &[LogRow]) -> Self {
        ConvergenceReport {
            stats: log
                .iter()
                .map(|r| IterStat {
                    t: r.t,
                    grad_theta_sq: r.grad_theta_sq,
                    grad_w_sq: r.grad_w_sq,
                    train_loss: r.train_loss_weighted,
                    val_loss: r.val_loss,
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,grad_theta_sq,grad_w_sq,train_loss,val_loss\n");
        for s in &self.stats {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.t, s.grad_theta_sq, s.grad_w_sq, s.train_loss, s.val_loss
            ));
        }
        out
    }
}

/// Decile-window trend verdicts over a completed run.
///
/// * `theta_decreasing` (verdict A): the last-decile mean of
///   `||grad_theta||^2` is below the first-decile mean.
/// * `w_not_increasing` (verdict B): the last-decile mean of `||grad_w||^2`
///   has not grown past 110% of the first-decile mean; a plateau above zero
///   is tolerated (the shared-extractor regime promises no more).
/// * `w_decreasing` (verdict C): strict decrease, expected of the
///   own-extractor regime.
#[derive(Debug, Clone, Copy)]
pub struct Verdicts {
    pub theta_first_mean: f64,
    pub theta_last_mean: f64,
    pub w_first_mean: f64,
    pub w_last_mean: f64,
    pub val_first: f64,
    pub val_last: f64,
    pub theta_decreasing: bool,
    pub w_not_increasing: bool,
    pub w_decreasing: bool,
}

pub fn convergence_check(report: &ConvergenceReport) -> Result<Verdicts> {
    let n = report.stats.len();
    if n < 10 {
        return Err(Error::Contract(format!(
            "convergence check needs at least 10 iterations, got {}",
            n
        )));
    }
    let window = n / 10;
    let mean = |slice: &[IterStat], f: fn(&IterStat) -> f64| -> f64 {
        slice.iter().map(f).sum::<f64>() / slice.len() as f64
    };
    let first = &report.stats[..window];
    let last = &report.stats[n - window..];
    let theta_first_mean = mean(first, |s| s.grad_theta_sq);
    let theta_last_mean = mean(last, |s| s.grad_theta_sq);
    let w_first_mean = mean(first, |s| s.grad_w_sq);
    let w_last_mean = mean(last, |s| s.grad_w_sq);
    Ok(Verdicts {
        theta_first_mean,
        theta_last_mean,
        w_first_mean,
        w_last_mean,
        val_first: report.stats[0].val_loss,
        val_last: report.stats[n - 1].val_loss,
        theta_decreasing: theta_last_mean < theta_first_mean,
        w_not_increasing: w_last_mean <= 1.1 * w_first_mean,
        w_decreasing: w_last_mean < w_first_mean,
    })
}

/// Paired runs contrasting the two feature-extractor regimes with identical
/// seeds: `shared` reads policy features from the live task network,
/// `own` from a copy frozen at initialization.
pub struct FixturePair {
    pub shared: RunOutcome,
    pub own: RunOutcome,
}

pub fn own_extractor_fixture(cfg: &RunConfig, dataset: &Dataset) -> Result<FixturePair> {
    let mut shared_cfg = cfg.clone();
    shared_cfg.feature_source = FeatureSource::Shared;
    let mut own_cfg = cfg.clone();
    own_cfg.feature_source = FeatureSource::FrozenInit;
    Ok(FixturePair {
        shared: run(&shared_cfg, dataset)?,
        own: run(&own_cfg, dataset)?,
    })
}

/// One row of the gradcheck table.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    pub trials: usize,
    pub max_err: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Finite-difference verification of every analytic gradient in the system:
/// task-network backprop, policy backprop, the normalized-weight Jacobian,
/// and both hypergradient components.
pub fn gradcheck(trials: usize, seed: u64) -> Result<Vec<CheckRow>> {
    use crate::rng::{stream, StreamId};
    let mut rng = stream(seed, StreamId::Aux);
    let mut rows = Vec::new();

    // Task network backward.
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut net = TaskNetwork::init_mlp(5, &[6, 4], 3, &mut rng)?;
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let label = rng.gen_range(0..3);
        let analytic = per_sample_grad(&net, &[x.clone()], &[label])?.remove(0);
        let h = 1e-5;
        let mut fd = net.zero_grads();
        for ti in 0..fd.len() {
            for i in 0..fd[ti].len() {
                let orig = net.params()[ti].data()[i];
                net.params_mut()[ti].data_mut()[i] = orig + h;
                let lp = per_sample_loss(&forward(&net, &[x.clone()])?.1, &[label])?[0];
                net.params_mut()[ti].data_mut()[i] = orig - h;
                let lm = per_sample_loss(&forward(&net, &[x.clone()])?.1, &[label])?[0];
                net.params_mut()[ti].data_mut()[i] = orig;
                fd[ti].data_mut()[i] = (lp - lm) / (2.0 * h);
            }
        }
        worst = worst.max(max_rel_err(&analytic, &fd));
    }
    rows.push(CheckRow { name: "task-net backward", trials, max_err: worst, tol: 1e-5, pass: worst <= 1e-5 });

    // Policy backward.
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut policy = PolicyNetwork::init(4, 5, &mut rng);
        for t in policy.params_mut() {
            for v in t.data_mut() {
                if *v == 0.0 {
                    *v = rng.gen_range(-0.7..0.7);
                }
            }
        }
        let feature: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = TransformSpec::new(
            rng.gen_range(1..=14),
            rng.gen_range(1..=14),
            rng.gen_range(0.0..=10.0),
            rng.gen_range(0.0..=10.0),
        )?;
        let embedding = embed(&spec)?;
        let (_, analytic) = policy.weight_and_grad(&feature, &embedding)?;
        let h = 1e-5;
        let mut fd = policy.zero_grads();
        for ti in 0..fd.len() {
            for i in 0..fd[ti].len() {
                let orig = policy.params()[ti].data()[i];
                policy.params_mut()[ti].data_mut()[i] = orig + h;
                let wp = policy.weight(&feature, &embedding)?;
                policy.params_mut()[ti].data_mut()[i] = orig - h;
                let wm = policy.weight(&feature, &embedding)?;
                policy.params_mut()[ti].data_mut()[i] = orig;
                fd[ti].data_mut()[i] = (wp - wm) / (2.0 * h);
            }
        }
        worst = worst.max(max_rel_err(&analytic, &fd));
    }
    rows.push(CheckRow { name: "policy backward", trials, max_err: worst, tol: 1e-5, pass: worst <= 1e-5 });

    // Hypergradients on tiny instances.
    let mut worst_theta = 0.0f64;
    let mut worst_alpha = 0.0f64;
    for _ in 0..trials {
        let instance = TinyInstance::random(6, 8, 4, 4, &mut rng);
        let analytic = instance.analytic()?;
        let (fd_theta, fd_alpha) = instance.fd_hypergrad(1e-5)?;
        worst_theta = worst_theta.max(max_rel_err(&analytic.grad_theta, &fd_theta));
        let denom = analytic
            .grad_log_alpha
            .abs()
            .max(fd_alpha.abs())
            .max(1e-4);
        worst_alpha = worst_alpha.max((analytic.grad_log_alpha - fd_alpha).abs() / denom);
    }
    rows.push(CheckRow {
        name: "hypergradient wrt theta",
        trials,
        max_err: worst_theta,
        tol: 1e-4,
        pass: worst_theta <= 1e-4,
    });
    rows.push(CheckRow {
        name: "hypergradient wrt log alpha",
        trials,
        max_err: worst_alpha,
        tol: 1e-4,
        pass: worst_alpha <= 1e-4,
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::IDENTITY;
    use crate::dataset::synth_digits;
    use crate::rng::{stream, StreamId};
    use crate::tensor::sq_norm_all;

    #[test]
    fn fd_hypergrad_agrees_at_the_zero_head_point() {
        // Zero-head policy: every weight 0.5; the analytic theta gradient has
        // structure (branch grads vanish) and FD must reproduce it.
        let mut rng = stream(21, StreamId::Aux);
        let mut instance = TinyInstance::random(6, 8, 4, 4, &mut rng);
        instance.policy = PolicyNetwork::init(6, 8, &mut rng); // zero head
        let analytic = instance.analytic().unwrap();
        let (fd_theta, fd_alpha) = instance.fd_hypergrad(1e-5).unwrap();
        assert!(max_rel_err(&analytic.grad_theta, &fd_theta) <= 1e-4);
        let denom = analytic.grad_log_alpha.abs().max(fd_alpha.abs()).max(1e-4);
        assert!((analytic.grad_log_alpha - fd_alpha).abs() / denom <= 1e-4);
    }

    #[test]
    fn fd_error_shrinks_quadratically_with_the_step() {
        // Central differences are second order: comparing FD at eps and eps/2
        // against the analytic gradient, the error norm should drop by about
        // 4x while truncation still dominates roundoff. Scaled-up policy
        // parameters and a large alpha push the truncation term well above
        // the roundoff floor.
        let mut rng = stream(22, StreamId::Aux);
        let mut instance = TinyInstance::random(5, 6, 4, 4, &mut rng);
        for t in instance.policy.params_mut() {
            for v in t.data_mut() {
                *v *= 3.0;
            }
        }
        instance.log_alpha = 1.5f64.ln();
        let analytic = instance.analytic().unwrap();
        let err_at = |eps: f64| -> f64 {
            let (fd, _) = instance.fd_hypergrad(eps).unwrap();
            let mut diff = 0.0;
            for (a, b) in analytic.grad_theta.iter().zip(fd.iter()) {
                for (x, y) in a.data().iter().zip(b.data().iter()) {
                    diff += (x - y).powi(2);
                }
            }
            diff.sqrt()
        };
        let e1 = err_at(1e-4);
        let e2 = err_at(5e-5);
        assert!(e1 > 0.0);
        let ratio = e2 / e1;
        assert!(
            (0.1..=0.5).contains(&ratio),
            "expected ~0.25 quadratic ratio, got {} ({} -> {})",
            ratio,
            e1,
            e2
        );
    }

    #[test]
    fn fd_hypergrad_rejects_out_of_range_eps() {
        let mut rng = stream(23, StreamId::Aux);
        let instance = TinyInstance::random(4, 4, 2, 2, &mut rng);
        assert!(instance.fd_hypergrad(1e-7).is_err());
        assert!(instance.fd_hypergrad(1e-3).is_err());
    }

    #[test]
    fn oracle_constant_weight_factors_out() {
        let ds = synth_digits(8, 31).unwrap();
        let mut rng = stream(24, StreamId::Aux);
        let net = TaskNetwork::init_mlp(ds.input_dim(), &[12, 6], ds.num_classes, &mut rng).unwrap();
        // Zero head: weight identically 0.5.
        let policy = PolicyNetwork::init(6, 8, &mut rng);
        let funcs = [3usize, 5, 14];
        let (weighted, se) =
            weighted_loss_oracle(&net, &policy, &net, &ds.samples, &funcs, 16, 99).unwrap();

        // Unweighted expected loss with identical draws, replicated here.
        let mut unweighted_total = 0.0;
        for s in 0..16 {
            for &j in &funcs {
                for &k in &funcs {
                    let mut pair_rng = keyed_stream(99, 0x20, s as u64, j as u64, k as u64);
                    let m1: f64 = pair_rng.gen_range(0.0..10.0);
                    let m2: f64 = pair_rng.gen_range(0.0..10.0);
                    let spec = TransformSpec { j, k, m1, m2 };
                    for img in &ds.samples {
                        let mut sign_rng = pair_rng.clone();
                        let aug = apply_transform(img, &spec, &mut sign_rng).unwrap();
                        unweighted_total += per_sample_loss(
                            &forward(&net, &[aug.pixels.clone()]).unwrap().1,
                            &[aug.label],
                        )
                        .unwrap()[0];
                    }
                }
            }
        }
        let unweighted = unweighted_total / (16.0 * 9.0 * ds.samples.len() as f64);
        assert!(
            (weighted - 0.5 * unweighted).abs() <= 4.0 * se + 1e-12,
            "weighted {} vs 0.5 * unweighted {}",
            weighted,
            0.5 * unweighted
        );
    }

    #[test]
    fn oracle_identity_only_single_sample_has_zero_variance() {
        let ds = synth_digits(6, 32).unwrap();
        let mut rng = stream(25, StreamId::Aux);
        let net = TaskNetwork::init_mlp(ds.input_dim(), &[10, 5], ds.num_classes, &mut rng).unwrap();
        let mut policy = PolicyNetwork::init(5, 6, &mut rng);
        for t in policy.params_mut() {
            for v in t.data_mut() {
                if *v == 0.0 {
                    *v = rng.gen_range(-0.4..0.4);
                }
            }
        }
        let one = &ds.samples[..1];
        let (est, se) = weighted_loss_oracle(&net, &policy, &net, one, &[IDENTITY], 8, 7).unwrap();
        assert_eq!(se, 0.0);

        // Exactly weight * loss of the untransformed sample.
        let img = &ds.samples[0];
        let loss = per_sample_loss(&forward(&net, &[img.pixels.clone()]).unwrap().1, &[img.label])
            .unwrap()[0];
        let feature = net.feature_of(&img.pixels).unwrap();
        let spec = TransformSpec { j: IDENTITY, k: IDENTITY, m1: 0.0, m2: 0.0 };
        let weight = policy.weight(&feature, &embed(&spec).unwrap()).unwrap();
        assert!((est - weight * loss).abs() <= 1e-12);
    }

    #[test]
    fn oracle_is_permutation_invariant_in_dataset_order() {
        let ds = synth_digits(10, 33).unwrap();
        let mut rng = stream(26, StreamId::Aux);
        let net = TaskNetwork::init_mlp(ds.input_dim(), &[10, 5], ds.num_classes, &mut rng).unwrap();
        let policy = PolicyNetwork::init(5, 6, &mut rng);
        let funcs = [1usize, 3, 14];
        let (a, _) =
            weighted_loss_oracle(&net, &policy, &net, &ds.samples, &funcs, 4, 17).unwrap();
        let mut reversed = ds.samples.clone();
        reversed.reverse();
        let (b, _) = weighted_loss_oracle(&net, &policy, &net, &reversed, &funcs, 4, 17).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn minibatch_estimator_is_unbiased_against_the_oracle() {
        let ds = synth_digits(6, 34).unwrap();
        let mut rng = stream(27, StreamId::Aux);
        let net = TaskNetwork::init_mlp(ds.input_dim(), &[10, 5], ds.num_classes, &mut rng).unwrap();
        let mut policy = PolicyNetwork::init(5, 6, &mut rng);
        for t in policy.params_mut() {
            for v in t.data_mut() {
                if *v == 0.0 {
                    *v = rng.gen_range(-0.4..0.4);
                }
            }
        }
        let funcs = [3usize, 8, 14];
        let (oracle, oracle_se) =
            weighted_loss_oracle(&net, &policy, &net, &ds.samples, &funcs, 400, 5).unwrap();

        // Mini-batch estimator: uniform sample, uniform pair, uniform
        // magnitudes; averaged over many resamples.
        let reps = 10_000usize;
        let mut est = Vec::with_capacity(reps);
        let mut mb_rng = stream(28, StreamId::Aux);
        for _ in 0..reps {
            let mut acc = 0.0;
            for _ in 0..4 {
                let img = &ds.samples[mb_rng.gen_range(0..ds.samples.len())];
                let j = funcs[mb_rng.gen_range(0..funcs.len())];
                let k = funcs[mb_rng.gen_range(0..funcs.len())];
                let spec = TransformSpec {
                    j,
                    k,
                    m1: mb_rng.gen_range(0.0..10.0),
                    m2: mb_rng.gen_range(0.0..10.0),
                };
                let aug = apply_transform(img, &spec, &mut mb_rng).unwrap();
                let loss = per_sample_loss(
                    &forward(&net, &[aug.pixels.clone()]).unwrap().1,
                    &[aug.label],
                )
                .unwrap()[0];
                let w = policy
                    .weight(&net.feature_of(&aug.pixels).unwrap(), &embed(&spec).unwrap())
                    .unwrap();
                acc += w * loss;
            }
            est.push(acc / 4.0);
        }
        let mean = est.iter().sum::<f64>() / reps as f64;
        let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
            / (reps as f64 * (reps - 1) as f64);
        let combined = (var + oracle_se * oracle_se).sqrt();
        assert!(
            (mean - oracle).abs() <= 4.0 * combined,
            "estimator {} vs oracle {} (4se {})",
            mean,
            oracle,
            4.0 * combined
        );
    }

    #[test]
    fn convergence_verdicts_on_synthetic_logs() {
        let decaying: Vec<LogRow> = (0..100)
            .map(|t| LogRow {
                t,
                train_loss_weighted: 0.0,
                val_loss: 0.0,
                grad_theta_sq: 1.0 / (t + 1) as f64,
                grad_w_sq: 1.0 / (t + 1) as f64,
                alpha: 0.1,
                weight_mean: 0.5,
                weight_std: 0.0,
            })
            .collect();
        let v = convergence_check(&ConvergenceReport::from_log(&decaying)).unwrap();
        assert!(v.theta_decreasing && v.w_decreasing && v.w_not_increasing);

        let constant: Vec<LogRow> = (0..100)
            .map(|t| LogRow {
                t,
                train_loss_weighted: 0.0,
                val_loss: 0.0,
                grad_theta_sq: 0.7,
                grad_w_sq: 0.7,
                alpha: 0.1,
                weight_mean: 0.5,
                weight_std: 0.0,
            })
            .collect();
        let v = convergence_check(&ConvergenceReport::from_log(&constant)).unwrap();
        assert!(!v.theta_decreasing && !v.w_decreasing && v.w_not_increasing);

        assert!(convergence_check(&ConvergenceReport::from_log(&constant[..5])).is_err());
    }

    #[test]
    fn analytic_theta_gradient_equals_sum_of_normalized_jacobian_rows() {
        // Second algebraic route: sum_i R_i * d(normalized weight_i)/d theta,
        // assembled from the per-sample quotient-rule Jacobian, times
        // -alpha / n.
        let mut rng = stream(29, StreamId::Aux);
        let instance = TinyInstance::random(5, 6, 4, 3, &mut rng);
        let analytic = instance.analytic().unwrap();

        let refs: Vec<(&[f64], &[f64])> = instance
            .policy_inputs
            .iter()
            .map(|(f, e)| (f.as_slice(), e.as_slice()))
            .collect();
        let mut expect = instance.policy.zero_grads();
        let n = refs.len() as f64;
        let alpha = instance.log_alpha.exp();
        for (i, &r) in analytic.similarities.iter().enumerate() {
            let row = crate::policy::normalized_weight_grad(&instance.policy, &refs, i).unwrap();
            for (e, g) in expect.iter_mut().zip(row.iter()) {
                e.axpy(-alpha * r / n, g);
            }
        }
        assert!(max_rel_err(&analytic.grad_theta, &expect) <= 1e-9);
        assert!(sq_norm_all(&analytic.grad_theta) > 0.0);
    }
}
