//! Line-oriented `key = value` configuration covering the trainer, network,
//! memory and loss settings. Unknown keys are errors.

use std::path::Path;

use memnet_core::memory::MemoryConfig;
use memnet_core::network::NetConfig;
use memnet_core::objective::LossConfig;
use memnet_core::optim::AdamConfig;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Normality-recording iterations: clean-image reconstruction only.
    pub phase_a_iters: u64,
    /// Full-objective iterations on degraded/clean pairs.
    pub phase_b_iters: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub val_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 5e-4,
            phase_a_iters: 100,
            phase_b_iters: 400,
            batch_size: 2,
            seed: 0,
            checkpoint_every: 500,
            val_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct FullConfig {
    pub train: TrainConfig,
    pub net: NetConfig,
    pub loss: LossConfig,
}

impl Default for FullConfig {
    fn default() -> Self {
        FullConfig {
            train: TrainConfig::default(),
            net: NetConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl FullConfig {
    pub fn parse(text: &str) -> Result<FullConfig> {
        let mut cfg = FullConfig::default();
        let mut memory_channels: Option<usize> = None;
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |message: String| -> CliError {
                CliError::Config(format!("line {}: {message}", line_no + 1))
            };
            let Some((key, value)) = line.split_once('=') else {
                return Err(fail(format!("expected `key = value`, got {line:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            let f = || -> Result<f64> {
                value
                    .parse()
                    .map_err(|_| fail(format!("{key}: not a number: {value:?}")))
            };
            let n = || -> Result<usize> {
                value
                    .parse()
                    .map_err(|_| fail(format!("{key}: not an integer: {value:?}")))
            };
            let u = || -> Result<u64> {
                value
                    .parse()
                    .map_err(|_| fail(format!("{key}: not an integer: {value:?}")))
            };
            let b = || -> Result<bool> {
                value
                    .parse()
                    .map_err(|_| fail(format!("{key}: not a boolean: {value:?}")))
            };
            match key {
                "learning_rate" => cfg.train.learning_rate = f()?,
                "beta1" => cfg.train.beta1 = f()?,
                "beta2" => cfg.train.beta2 = f()?,
                "weight_decay" => cfg.train.weight_decay = f()?,
                "phase_a_iters" => cfg.train.phase_a_iters = u()?,
                "phase_b_iters" => cfg.train.phase_b_iters = u()?,
                "batch_size" => cfg.train.batch_size = n()?,
                "seed" => cfg.train.seed = u()?,
                "checkpoint_every" => cfg.train.checkpoint_every = u()?,
                "val_every" => cfg.train.val_every = u()?,
                "base_channels" => cfg.net.base_channels = n()?,
                "depth" => cfg.net.depth = n()?,
                "memory_enabled" => cfg.net.memory_enabled = b()?,
                "parts" => cfg.net.memory.parts = n()?,
                "instances" => cfg.net.memory.instances = n()?,
                "semantics" => cfg.net.memory.semantics = n()?,
                "classes" => cfg.net.memory.classes = n()?,
                "memory_channels" => memory_channels = Some(n()?),
                "banks" => cfg.net.memory.banks = n()?,
                "alpha" => cfg.net.memory.alpha = f()?,
                "charbonnier_eps" => cfg.loss.epsilon = f()?,
                "lambda_edge" => cfg.loss.lambda_edge = f()?,
                "lambda_contrast" => cfg.loss.lambda_contrast = f()?,
                "contrast_eps" => cfg.loss.contrast_eps = f()?,
                "enable_contrast" => cfg.loss.enable_contrast = b()?,
                "enable_memory" => cfg.loss.enable_memory = b()?,
                other => return Err(fail(format!("unknown key {other:?}"))),
            }
        }
        // the memory operates on the network's feature channels
        cfg.net.memory.channels = memory_channels.unwrap_or(cfg.net.base_channels);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FullConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        FullConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.loss.validate()?;
        self.train.adam().validate()?;
        if self.train.batch_size == 0 {
            return Err(CliError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn memory(&self) -> &MemoryConfig {
        &self.net.memory
    }
}
