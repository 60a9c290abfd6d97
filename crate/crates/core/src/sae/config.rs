use alloc::format;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// One seeded shuffle, first 80 % train, last 20 % validation.
    Split,
    /// Train and evaluate on the whole dataset.
    Single,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Split => "split",
            Regime::Single => "single",
        }
    }
}

impl core::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(Regime::Split),
            "single" => Ok(Regime::Single),
            _ => Err(Error::InvalidConfig(format!("unknown regime `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl OptimizerKind {
    pub const ADAM: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub sparsity_weight: f64,
    pub seed: u64,
    pub regime: Regime,
    pub optimizer: OptimizerKind,
}

impl SaeConfig {
    /// 80/20 split training: batch 4, learning rate 5e-4.
    pub fn split(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 100,
            learning_rate: 5e-4,
            batch_size: 4,
            epochs: 5,
            sparsity_weight: 1e-5,
            seed: 42,
            regime: Regime::Split,
            optimizer: OptimizerKind::ADAM,
        }
    }

    /// Single exposure over the whole dataset: batch 1, learning rate 1e-4.
    pub fn single(input_dim: usize) -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 1,
            regime: Regime::Single,
            ..Self::split(input_dim)
        }
    }

    pub fn for_regime(regime: Regime, input_dim: usize) -> Self {
        match regime {
            Regime::Split => Self::split(input_dim),
            Regime::Single => Self::single(input_dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.sparsity_weight >= 0.0 && self.sparsity_weight.is_finite()) {
            return bad("sparsity_weight must be nonnegative");
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return bad("adam moments must lie in [0, 1) and eps > 0");
            }
        }
        Ok(())
    }
}
