//! Run configuration: every hyperparameter of a training run, parsed from a
//! flat `key = value` file (UTF-8, `#` comments).

use std::path::PathBuf;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Constant,
    Cosine,
    Theorem1,
}

/// Task learning-rate schedule. In `Theorem1` mode the three rates
/// (alpha, beta, gamma) are derived from the iteration budget and the
/// constants below, alpha is held fixed, and the configured rates are ignored.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleConfig {
    pub mode: ScheduleMode,
    pub c: f64,
    pub c_prime: f64,
    pub c_double_prime: f64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == ScheduleMode::Theorem1
            && (self.c <= 0.0 || self.c_prime <= 0.0 || self.c_double_prime <= 0.0)
        {
            return Err(Error::config("theorem1 schedule constants must be strictly positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Full alternating optimization: policy, sampler, and task network.
    MetaAugment,
    /// Uniform transformation sampling with unit weights; no policy training.
    RandAugment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    /// Policy features come from the task network's current feature layer.
    Shared,
    /// Policy features come from a copy of the task network frozen at init
    /// (the "own feature extractor" variant used as a contrast fixture).
    FrozenInit,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    /// Total iterations T.
    pub iterations: u64,
    pub batch_train: usize,
    pub batch_val: usize,
    /// Transformations per training sample in a batch (the MT trick uses 4).
    pub mt_factor: usize,
    /// Initial inner-loop learning rate alpha^(0) (learned in log-space).
    pub alpha_init: f64,
    /// Outer learning rate for (theta, log alpha).
    pub beta: f64,
    /// Outer learning rate for w (peak rate under the cosine schedule).
    pub gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub policy_momentum: f64,
    pub policy_weight_decay: f64,
    /// If set, log alpha is updated by plain SGD, exempt from the policy
    /// optimizer's momentum and weight decay.
    pub alpha_exempt: bool,
    pub alpha_learnable: bool,
    pub schedule: ScheduleConfig,
    /// Sampler mix-in weight for the uniform distribution.
    pub epsilon: f64,
    /// Sampler window r, in iterations.
    pub window_r: u64,
    /// Sampler refresh period s, in iterations.
    pub refresh_s: u64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub hidden_dims: Vec<usize>,
    pub policy_hidden: usize,
    pub mode: RunMode,
    pub feature_source: FeatureSource,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::new(),
            out_dir: None,
            seed: 0,
            iterations: 1000,
            batch_train: 32,
            batch_val: 32,
            mt_factor: 1,
            alpha_init: 0.1,
            beta: 1e-3,
            gamma: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            policy_momentum: 0.9,
            policy_weight_decay: 5e-4,
            alpha_exempt: false,
            alpha_learnable: true,
            schedule: ScheduleConfig {
                mode: ScheduleMode::Cosine,
                c: 1.0,
                c_prime: 1.0,
                c_double_prime: 1.0,
            },
            epsilon: 0.1,
            window_r: 750,
            refresh_s: 15,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
            hidden_dims: vec![256, 64],
            policy_hidden: 100,
            mode: RunMode::MetaAugment,
            feature_source: FeatureSource::Shared,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_init", self.alpha_init),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::config(format!("{} must be > 0, got {}", name, v)));
            }
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("policy_momentum", self.policy_momentum),
            ("policy_weight_decay", self.policy_weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{} must be >= 0, got {}", name, v)));
            }
        }
        if self.batch_train == 0 || self.batch_val == 0 || self.mt_factor == 0 {
            return Err(Error::config("batch sizes and mt_factor must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.window_r == 0 || self.refresh_s == 0 {
            return Err(Error::config("window_r and refresh_s must be positive"));
        }
        let fr = [self.split_train, self.split_val, self.split_test];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || fr.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::config("split fractions must lie in [0,1] and sum to at most 1"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::config("hidden_dims must be nonempty positive sizes"));
        }
        if self.policy_hidden == 0 {
            return Err(Error::config("policy_hidden must be positive"));
        }
        self.schedule.validate()?;
        Ok(())
    }

    /// Parse the `key = value` format. Unknown and duplicate keys are errors.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("line {}: duplicate key `{}`", lineno + 1, key)));
            }
            cfg.apply(key, value)
                .map_err(|e| Error::config(format!("line {}: {}", lineno + 1, e)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("bad value `{}` for `{}`", value, key)))
        }
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "seed" => self.seed = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "batch_train" => self.batch_train = num(key, value)?,
            "batch_val" => self.batch_val = num(key, value)?,
            "mt_factor" => self.mt_factor = num(key, value)?,
            "alpha_init" => self.alpha_init = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "policy_momentum" => self.policy_momentum = num(key, value)?,
            "policy_weight_decay" => self.policy_weight_decay = num(key, value)?,
            "alpha_exempt" => self.alpha_exempt = parse_bool(key, value)?,
            "alpha_learnable" => self.alpha_learnable = parse_bool(key, value)?,
            "schedule" => {
                self.schedule.mode = match value {
                    "constant" => ScheduleMode::Constant,
                    "cosine" => ScheduleMode::Cosine,
                    "theorem1" => ScheduleMode::Theorem1,
                    _ => return Err(Error::config(format!("unknown schedule `{}`", value))),
                }
            }
            "theorem_c" => self.schedule.c = num(key, value)?,
            "theorem_c_prime" => self.schedule.c_prime = num(key, value)?,
            "theorem_c_double_prime" => self.schedule.c_double_prime = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "window_r" => self.window_r = num(key, value)?,
            "refresh_s" => self.refresh_s = num(key, value)?,
            "split_train" => self.split_train = num(key, value)?,
            "split_val" => self.split_val = num(key, value)?,
            "split_test" => self.split_test = num(key, value)?,
            "hidden_dims" => {
                let dims: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(|s| s.trim().parse()).collect();
                self.hidden_dims =
                    dims.map_err(|_| Error::config(format!("bad hidden_dims `{}`", value)))?;
            }
            "policy_hidden" => self.policy_hidden = num(key, value)?,
            "mode" => {
                self.mode = match value {
                    "metaaugment" => RunMode::MetaAugment,
                    "randaugment" => RunMode::RandAugment,
                    _ => return Err(Error::config(format!("unknown mode `{}`", value))),
                }
            }
            "feature_source" => {
                self.feature_source = match value {
                    "shared" => FeatureSource::Shared,
                    "frozen_init" => FeatureSource::FrozenInit,
                    _ => return Err(Error::config(format!("unknown feature_source `{}`", value))),
                }
            }
            _ => return Err(Error::config(format!("unknown key `{}`", key))),
        }
        Ok(())
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("bad bool `{}` for `{}`", value, key))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_small_config() {
        let text = "\
# toy run
dataset = data/toy.maug
seed = 7
iterations = 50
batch_train = 8   # comment after value
hidden_dims = 32, 16
mode = randaugment
schedule = constant
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.iterations, 50);
        assert_eq!(cfg.batch_train, 8);
        assert_eq!(cfg.hidden_dims, vec![32, 16]);
        assert_eq!(cfg.mode, RunMode::RandAugment);
        assert_eq!(cfg.schedule.mode, ScheduleMode::Constant);
    }

    #[test]
    fn rejects_unknown_duplicate_and_invalid() {
        assert!(RunConfig::parse("no_such_key = 1").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("gamma = -0.5").is_err());
        assert!(RunConfig::parse("epsilon = 1.5").is_err());
        assert!(RunConfig::parse("split_train = 0.9\nsplit_val = 0.2").is_err());
        assert!(RunConfig::parse("batch_train = zero").is_err());
    }

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
    }
}
