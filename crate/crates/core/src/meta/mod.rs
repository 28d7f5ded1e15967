//! The five trainers (conventional, transfer, MAML, FOMAML, TB-MAML), the
//! task-importance vector and few-shot evaluation.
//!
//! The scalar toy below is the closed form the second-order machinery is
//! tested against: for `L(θ) = (θ − c)²`, one inner step of size `α` gives
//! `θ' = θ − 2α(θ − c)`, so `d L(θ')/dθ = 2(θ' − c)(1 − 2α)`.
//!
//! ```
//! use metaloc::autodiff::{Graph, Tensor, Var};
//! use metaloc::meta::{maml_step, Episode, MetaConfig, TaskLoss};
//!
//! struct Quadratic;
//! impl TaskLoss for Quadratic {
//!     type Data = f64;
//!     fn loss(&self, g: &mut Graph, p: &[Var], c: &f64) -> metaloc::Result<Var> {
//!         let c = g.constant(Tensor::scalar(*c));
//!         let d = g.sub(p[0], c)?;
//!         g.mul(d, d)
//!     }
//! }
//!
//! let cfg = MetaConfig { alpha: 0.25, inner_steps: 1, ..MetaConfig::default() };
//! let tasks = [Episode { support: 1.0, query: 1.0 }, Episode { support: 0.0, query: 0.0 }];
//! let mut theta = vec![Tensor::scalar(0.0)];
//! let step = maml_step(&Quadratic, &mut theta, &tasks, &cfg)?;
//! assert!((step.gradient[0].data()[0] + 0.5).abs() < 1e-12);
//! # Ok::<(), metaloc::Error>(())
//! ```

pub mod adapt;
mod config;
mod data;
mod fit;
mod importance;
mod train;

pub use adapt::{
    first_order_gradient, inner_adapt, inner_adapt_on, second_order_gradient, value_and_grad,
    Episode, LocalizationLoss, TaskGradient, TaskLoss,
};
pub use config::{Algorithm, FitConfig, MetaConfig, OuterOptimizer};
pub use data::PreparedTask;
pub use fit::{fit, Adam};
pub use importance::{compute_importance, importance_from_losses, ImportanceVector};
pub use train::{
    adapt_and_eval, clip_grad_norm, evaluate, finetune, fomaml_step, maml_step, meta_init, meta_train, pretrain_source,
    tb_maml_step, train_conventional, train_transfer, MetaRun, StepReport, TraceRow,
};
