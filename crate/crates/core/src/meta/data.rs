use rand::seq::SliceRandom;
use rand::Rng;

use super::adapt::Episode;
use crate::error::{Error, Result};
use crate::model::Batch;
use crate::tasks::{split_task, Scenario, TaskSplit};

/// A scenario normalized once and split into a training portion and a
/// held-out test portion.
///
/// `split.support` is the training portion (`split.shots` samples per
/// reference point, grouped by point); `split.query` is the held-out rest.
/// The k-shot support of a test task is the first `k` training samples of
/// each point, so every trainer sees the same shots for a given seed.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub id: String,
    pub split: TaskSplit,
    data: Batch,
}

impl PreparedTask {
    pub fn new(scenario: &Scenario, holdout_per_rp: usize, seed: u64) -> Result<Self> {
        let groups = scenario.by_reference_point();
        let fewest = groups.iter().map(Vec::len).min().unwrap_or(0);
        if fewest <= holdout_per_rp {
            return Err(Error::Data(format!(
                "{}: a reference point has {fewest} samples; holding out {holdout_per_rp} leaves none for training",
                scenario.id
            )));
        }
        let all: Vec<usize> = (0..scenario.samples.len()).collect();
        Ok(Self {
            id: scenario.id.clone(),
            split: split_task(scenario, fewest - holdout_per_rp, seed)?,
            data: scenario.batch(&all)?,
        })
    }

    /// Training samples per reference point.
    pub fn train_per_rp(&self) -> usize {
        self.split.shots
    }

    pub fn train_batch(&self) -> Result<Batch> {
        self.data.select(&self.split.support)
    }

    pub fn test_batch(&self) -> Result<Batch> {
        self.data.select(&self.split.query)
    }

    /// The fixed k-shot support set.
    pub fn shots(&self, k: usize) -> Result<Batch> {
        self.data.select(&self.split.support_subset(k)?)
    }

    /// A fresh episode drawn from the training portion: `k` support and up
    /// to `query_per_rp` disjoint query samples per reference point.
    pub fn episode<R: Rng>(
        &self,
        k: usize,
        query_per_rp: usize,
        rng: &mut R,
    ) -> Result<Episode<Batch>> {
        let per = self.train_per_rp();
        if k >= per {
            return Err(Error::Data(format!(
                "{}: {k} shots leave no query among {per} training samples per point",
                self.id
            )));
        }
        let q = query_per_rp.min(per - k);
        let mut support = Vec::new();
        let mut query = Vec::new();
        for group in self.split.support.chunks(per) {
            let mut g = group.to_vec();
            g.shuffle(rng);
            support.extend_from_slice(&g[..k]);
            query.extend_from_slice(&g[k..k + q]);
        }
        Ok(Episode {
            support: self.data.select(&support)?,
            query: self.data.select(&query)?,
        })
    }
}
