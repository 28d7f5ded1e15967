use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adapt::{inner_adapt, LocalizationLoss};
use super::config::MetaConfig;
use super::data::PreparedTask;
use super::fit::fit;
use crate::error::{Error, Result};
use crate::model::{self, ParamSet};
use crate::rng;

/// Per-training-task weights for TB-MAML and the losses they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub task_ids: Vec<String>,
    /// In `[-1, 1]`, aligned with `task_ids`.
    pub u: Vec<f64>,
    /// `L_i`: mean of row `i` of `pairwise`.
    pub average_losses: Vec<f64>,
    /// `pairwise[i][j] = L_i(θ_ij)` in m²; the diagonal is empty.
    pub pairwise: Vec<Vec<Option<f64>>>,
}

/// Min-max maps losses onto `[-1, 1]` and negates, so the lowest loss gets
/// `+1` and the highest `-1`. Equal losses give all zeros.
pub fn importance_from_losses(losses: &[f64]) -> Result<Vec<f64>> {
    if let Some(l) = losses.iter().find(|l| !l.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("importance input loss {l}"),
        });
    }
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(vec![0.0; losses.len()]);
    }
    Ok(losses
        .iter()
        .map(|l| (1.0 - 2.0 * (l - lo) / (hi - lo)).clamp(-1.0, 1.0))
        .collect())
}

const BASE_SEED: u64 = 0x1A;

/// Trains a fresh model per task on its training portion, fine-tunes each on
/// every other task's k-shot support with the inner loop, and scores it on
/// that task's held-out samples.
pub fn compute_importance(tasks: &[PreparedTask], cfg: &MetaConfig) -> Result<ImportanceVector> {
    cfg.validate()?;
    let n = tasks.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "importance needs at least 2 training tasks, got {n}"
        )));
    }
    let root = rng::derive(cfg.seed, BASE_SEED);
    let bases = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = rng::derive(root, i as u64);
            let mut p = ParamSet::init(seed);
            fit(&mut p, &tasks[i].train_batch()?, &cfg.base, seed)?;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let eval_sets = tasks
        .iter()
        .map(|t| Ok((t.shots(cfg.shots)?, t.test_batch()?)))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let losses = cells
        .par_iter()
        .map(|&(i, j)| {
            let (support, query) = &eval_sets[j];
            let adapted = inner_adapt(
                &LocalizationLoss,
                bases[i].tensors(),
                support,
                cfg.alpha,
                cfg.inner_steps,
            )?;
            model::objective(&ParamSet::from_tensors(adapted)?, query)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pairwise = vec![vec![None; n]; n];
    for (&(i, j), l) in cells.iter().zip(losses) {
        pairwise[i][j] = Some(l);
    }
    let average_losses: Vec<f64> = pairwise
        .iter()
        .map(|row| row.iter().flatten().sum::<f64>() / (n - 1) as f64)
        .collect();
    Ok(ImportanceVector {
        task_ids: tasks.iter().map(|t| t.id.clone()).collect(),
        u: importance_from_losses(&average_losses)?,
        average_losses,
        pairwise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::config::FitConfig;
    use crate::tasks::{generate_scenario, ChannelConfig};
    use proptest::prelude::*;

    #[test]
    fn mapping_examples() {
        assert_eq!(importance_from_losses(&[1.0, 2.0, 3.0]).unwrap(), [1.0, 0.0, -1.0]);
        assert_eq!(importance_from_losses(&[0.5, 1.5]).unwrap(), [1.0, -1.0]);
        assert_eq!(importance_from_losses(&[4.0; 5]).unwrap(), [0.0; 5]);
        assert!(importance_from_losses(&[1.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_equivariant(
            losses in prop::collection::vec(0.0f64..1e3, 2..12),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..losses.len()).collect();
            perm.shuffle(&mut rng::stream(seed, rng::Stream::Sampling, 0));
            let u = importance_from_losses(&losses).unwrap();
            let permuted: Vec<f64> = perm.iter().map(|&i| losses[i]).collect();
            let up = importance_from_losses(&permuted).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(up[k], u[i]);
            }
        }
    }

    #[test]
    fn computed_on_small_task_set() {
        let cfg = MetaConfig {
            base: FitConfig {
                epochs: 2,
                ..FitConfig::default()
            },
            ..MetaConfig::default()
        };
        let ch = ChannelConfig {
            samples_per_rp: 16,
            ..ChannelConfig::default()
        };
        let tasks: Vec<PreparedTask> = (0..3)
            .map(|s| PreparedTask::new(&generate_scenario(s, &ch).unwrap(), 4, s).unwrap())
            .collect();
        let iv = compute_importance(&tasks, &cfg).unwrap();
        assert_eq!(iv.u.len(), 3);
        assert_eq!(iv.pairwise.len(), 3);
        for (i, row) in iv.pairwise.iter().enumerate() {
            assert!(row[i].is_none());
            assert_eq!(row.iter().flatten().count(), 2);
        }
        assert_eq!(iv.u.iter().copied().fold(f64::MIN, f64::max), 1.0);
        assert_eq!(iv.u.iter().copied().fold(f64::MAX, f64::min), -1.0);
        assert_eq!(compute_importance(&tasks, &cfg).unwrap(), iv);
        assert!(matches!(compute_importance(&tasks[..1], &cfg), Err(Error::Config(_))));
    }
}
