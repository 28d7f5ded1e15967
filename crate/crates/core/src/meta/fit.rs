use rand::seq::SliceRandom;

use super::config::FitConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{self, Batch, ParamSet};
use crate::rng::{self, Stream};

/// Adam state for one parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(params: &[Tensor], lr: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            lr,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        self.step_with_lr(params, grads, self.lr)
    }

    /// One update with a learning rate other than the configured one.
    pub fn step_with_lr(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * gi;
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("parameters after Adam step {}", self.t),
                });
            }
        }
        Ok(())
    }
}

/// Minibatch Adam on the m² objective. Returns the mean objective of the
/// last epoch, or `None` when `epochs` is 0.
pub fn fit(params: &mut ParamSet, data: &Batch, cfg: &FitConfig, seed: u64) -> Result<Option<f64>> {
    let mut adam = Adam::new(params.tensors(), cfg.learning_rate);
    let mut rng = rng::stream(seed, Stream::Sampling, 0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last = None;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mb = data.select(chunk)?;
            let (l, grads) = model::objective_and_grad(params, &mb)?;
            adam.step(params.tensors_mut(), &grads)?;
            total += l * chunk.len() as f64;
        }
        last = Some(total / data.len() as f64);
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{generate_scenario, ChannelConfig};

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![Tensor::new(vec![2], vec![3.0, -2.0]).unwrap()];
        let mut adam = Adam::new(&p, 0.1);
        for _ in 0..500 {
            let g = Tensor::new(vec![2], p[0].data().iter().map(|x| 2.0 * x).collect()).unwrap();
            adam.step(&mut p, &[g]).unwrap();
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-2), "{:?}", p[0].data());
    }

    #[test]
    fn fit_reduces_training_loss_and_is_deterministic() {
        let s = generate_scenario(2, &ChannelConfig::default()).unwrap();
        let idx: Vec<usize> = (0..s.samples.len()).step_by(4).collect();
        let data = s.batch(&idx).unwrap();
        let cfg = FitConfig {
            epochs: 20,
            ..FitConfig::default()
        };
        let init = ParamSet::init(1);
        let before = model::objective(&init, &data).unwrap();
        let mut a = init.clone();
        fit(&mut a, &data, &cfg, 5).unwrap();
        let mut b = init.clone();
        fit(&mut b, &data, &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert!(model::objective(&a, &data).unwrap() < before);
        let mut c = init.clone();
        let zero = FitConfig { epochs: 0, ..cfg };
        assert_eq!(fit(&mut c, &data, &zero, 5).unwrap(), None);
        assert_eq!(c, init);
    }
}
