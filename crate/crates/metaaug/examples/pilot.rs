// Scratch pilot for tuning the toy acceptance configuration.
use std::time::Instant;

use metaaug::augment::{apply_transform, embed, TransformSpec, IDENTITY, ROTATE};
use metaaug::config::{RunConfig, RunMode};
use metaaug::dataset::{split, synth_digits, SYNTH_CHIRALITY};
use metaaug::rng::{stream, StreamId};
use metaaug::trainer::{evaluate, run, RunOutcome};
use metaaug::verify::{convergence_check, ConvergenceReport};
use rand::Rng;

fn probe_weights(outcome: &RunOutcome, ds: &metaaug::dataset::Dataset) -> (f64, f64) {
    // Mean policy weight for Rotate-containing transforms at m >= 8 on the
    // chirality classes vs Identity-Identity on the same images.
    let mut rng = stream(999, StreamId::Aux);
    let feature_net = outcome
        .frozen_feature_net
        .as_ref()
        .unwrap_or(&outcome.task_net);
    let mut rot_sum = 0.0;
    let mut rot_n = 0.0;
    let mut id_sum = 0.0;
    let mut id_n = 0.0;
    for &i in &ds.train {
        let img = &ds.samples[i];
        if img.label != SYNTH_CHIRALITY.0 && img.label != SYNTH_CHIRALITY.1 {
            continue;
        }
        for _ in 0..6 {
            let (j, k, m1, m2) = if rng.gen::<bool>() {
                (ROTATE, rng.gen_range(1..=14), rng.gen_range(8.0..10.0), rng.gen_range(0.0..10.0))
            } else {
                (rng.gen_range(1..=14), ROTATE, rng.gen_range(0.0..10.0), rng.gen_range(8.0..10.0))
            };
            let spec = TransformSpec::new(j, k, m1, m2).unwrap();
            let aug = apply_transform(img, &spec, &mut rng).unwrap();
            let f = feature_net.feature_of(&aug.pixels).unwrap();
            rot_sum += outcome.policy.weight(&f, &embed(&spec).unwrap()).unwrap();
            rot_n += 1.0;
        }
        let spec = TransformSpec::new(IDENTITY, IDENTITY, 0.0, 0.0).unwrap();
        let f = feature_net.feature_of(&img.pixels).unwrap();
        id_sum += outcome.policy.weight(&f, &embed(&spec).unwrap()).unwrap();
        id_n += 1.0;
    }
    (rot_sum / rot_n, id_sum / id_n)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let t_total: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);

    for seed in 0..seeds {
        let data = synth_digits(600, 100 + seed).unwrap();
        let ds = split(&data, (0.8, 0.1, 0.1), 100 + seed).unwrap();
        let cfg = RunConfig {
            seed,
            iterations: t_total,
            batch_train: 32,
            batch_val: 32,
            hidden_dims: vec![64, 32],
            policy_hidden: 100,
            gamma: 0.1,
            alpha_init: 0.1,
            beta: 1e-3,
            epsilon: 0.1,
            refresh_s: 15,
            window_r: 750,
            ..RunConfig::default()
        };
        let start = Instant::now();
        let outcome = run(&cfg, &ds).unwrap();
        let meta_time = start.elapsed();

        let mut base_cfg = cfg.clone();
        base_cfg.mode = RunMode::RandAugment;
        base_cfg.epsilon = 1.0;
        let start = Instant::now();
        let baseline = run(&base_cfg, &ds).unwrap();
        let base_time = start.elapsed();

        let report = ConvergenceReport::from_log(&outcome.log);
        let v = convergence_check(&report).unwrap();
        let (_, meta_acc) = evaluate(&outcome.task_net, &ds, &ds.test).unwrap();
        let (_, base_acc) = evaluate(&baseline.task_net, &ds, &ds.test).unwrap();
        let (rot_w, id_w) = probe_weights(&outcome, &ds);
        let rotate_mass = outcome.sampler.row_plus_col_mass(ROTATE);

        println!(
            "seed {}: meta {:.1?} base {:.1?} | val {:.3} -> {:.3} | theta_sq {:.2e} -> {:.2e} ({}) | acc meta {:.3} base {:.3} | rotW {:.3} idW {:.3} | rotMass {:.4} (unif {:.4}) | alpha {:.4} wdev {:.1e}",
            seed,
            meta_time,
            base_time,
            v.val_first,
            v.val_last,
            v.theta_first_mean,
            v.theta_last_mean,
            if v.theta_decreasing { "dec" } else { "INC" },
            meta_acc,
            base_acc,
            rot_w,
            id_w,
            rotate_mass,
            2.0 * 14.0 / 196.0,
            outcome.log_alpha.exp(),
            outcome.max_weight_mean_dev,
        );
    }
}
