use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supervised training budget for the baselines and the importance phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 32,
        }
    }
}

impl FitConfig {
    fn validate(&self, what: &str) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "{what}.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{what}.batch_size must be at least 1")));
        }
        Ok(())
    }
}

/// How `meta_train` applies each task's meta-gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterOptimizer {
    /// `θ ← θ − s·g`, the literal update.
    Sgd,
    /// Adam with learning rate `s` for that update.
    Adam,
}

/// Every knob of the meta-learners and baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Inner step size α.
    pub alpha: f64,
    /// Outer (meta) step size β.
    pub beta: f64,
    /// Importance intensity γ.
    pub gamma: f64,
    pub inner_steps: usize,
    /// Support shots per reference point.
    pub shots: usize,
    pub meta_iterations: usize,
    /// Tasks sampled per meta-iteration.
    pub meta_batch: usize,
    /// Floor on the effective step `β + γ·u`.
    pub step_floor: f64,
    pub outer_optimizer: OuterOptimizer,
    /// Global-norm cap on each outer gradient before it is applied; 0 disables it.
    pub max_grad_norm: f64,
    /// Query samples per reference point drawn for each meta-training episode.
    pub query_per_rp: usize,
    /// Samples per reference point held out of every scenario for testing.
    pub holdout_per_rp: usize,
    /// Iterations per moving-average window; 0 disables the convergence test.
    pub convergence_window: usize,
    /// Minimum improvement between consecutive windows to keep going.
    pub convergence_tol: f64,
    /// Per-task models of the importance phase and the transfer source.
    pub base: FitConfig,
    /// Fits on a k-shot support set (conventional and transfer fine-tuning).
    pub finetune: FitConfig,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.03,
            gamma: 0.015,
            inner_steps: 5,
            shots: 5,
            meta_iterations: 1000,
            meta_batch: 4,
            step_floor: 1e-6,
            outer_optimizer: OuterOptimizer::Sgd,
            max_grad_norm: 1.0,
            query_per_rp: 5,
            holdout_per_rp: 10,
            convergence_window: 50,
            convergence_tol: 1e-4,
            base: FitConfig::default(),
            finetune: FitConfig::default(),
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        positive("step_floor", self.step_floor)?;
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        if self.gamma > self.beta {
            return Err(Error::Config(format!(
                "gamma {} exceeds beta {}; beta + gamma*u could turn negative",
                self.gamma, self.beta
            )));
        }
        if !(self.max_grad_norm.is_finite() && self.max_grad_norm >= 0.0) {
            return Err(Error::Config(format!(
                "max_grad_norm must be non-negative, got {}",
                self.max_grad_norm
            )));
        }
        if self.step_floor > self.beta {
            return Err(Error::Config(format!(
                "step_floor {} exceeds beta {}",
                self.step_floor, self.beta
            )));
        }
        if self.shots == 0 {
            return Err(Error::Config("shots must be at least 1".into()));
        }
        if self.meta_batch == 0 || self.query_per_rp == 0 || self.holdout_per_rp == 0 {
            return Err(Error::Config(
                "meta_batch, query_per_rp and holdout_per_rp must be at least 1".into(),
            ));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol >= 0.0) {
            return Err(Error::Config(format!(
                "convergence_tol must be non-negative, got {}",
                self.convergence_tol
            )));
        }
        self.base.validate("base")?;
        self.finetune.validate("finetune")
    }

    /// Outer step for a task of importance `u`, and whether it hit the floor.
    pub fn effective_step(&self, u: f64) -> (f64, bool) {
        let raw = self.beta + self.gamma * u;
        if raw < self.step_floor {
            (self.step_floor, true)
        } else {
            (raw, false)
        }
    }
}

/// The five trainers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Conventional,
    Transfer,
    Maml,
    Fomaml,
    TbMaml,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Conventional,
        Algorithm::Transfer,
        Algorithm::Maml,
        Algorithm::Fomaml,
        Algorithm::TbMaml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Conventional => "conventional",
            Algorithm::Transfer => "transfer",
            Algorithm::Maml => "maml",
            Algorithm::Fomaml => "fomaml",
            Algorithm::TbMaml => "tb-maml",
        }
    }

    pub fn is_meta(self) -> bool {
        matches!(self, Algorithm::Maml | Algorithm::Fomaml | Algorithm::TbMaml)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown algorithm {s:?}; expected one of conventional, transfer, maml, fomaml, tb-maml"
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        MetaConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = MetaConfig::default();
        for cfg in [
            MetaConfig { alpha: 0.0, ..base.clone() },
            MetaConfig { beta: -1.0, ..base.clone() },
            MetaConfig { gamma: -1e-4, ..base.clone() },
            MetaConfig { gamma: 0.04, ..base.clone() },
            MetaConfig { max_grad_norm: -1.0, ..base.clone() },
            MetaConfig { shots: 0, ..base.clone() },
            MetaConfig { alpha: f64::NAN, ..base.clone() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn effective_step_examples() {
        let cfg = MetaConfig { beta: 0.001, gamma: 0.0005, ..MetaConfig::default() };
        assert!((cfg.effective_step(1.0).0 - 0.0015).abs() < 1e-18);
        assert!((cfg.effective_step(-1.0).0 - 0.0005).abs() < 1e-18);
        assert_eq!(cfg.effective_step(0.0), (0.001, false));
        let bad = MetaConfig { gamma: 0.002, ..cfg };
        assert_eq!(bad.effective_step(-1.0), (1e-6, true));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{a}\""));
        }
        assert!("reptile".parse::<Algorithm>().is_err());
    }
}
