//! Scenarios (one indoor location each), few-shot task splits and the
//! scenario file format.

mod channel;
mod io;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use channel::{generate_scenario, generate_suite, ChannelConfig, SUBCARRIER_INDICES};
pub use io::{load_dir, load_scenario, save_scenario};

use crate::error::{Error, Result};
use crate::model::{Batch, SAMPLE_LEN};
use crate::rng::{self, Stream};

/// Reference-point lattice. Point `(r, c)` sits at `(r·spacing, c·spacing)` cm
/// and has index `r·cols + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub spacing_cm: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 4,
            spacing_cm: 60.0,
        }
    }
}

impl Grid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, rp: usize) -> [f64; 2] {
        let (r, c) = (rp / self.cols, rp % self.cols);
        [r as f64 * self.spacing_cm, c as f64 * self.spacing_cm]
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.position(i)).collect()
    }

    pub fn centroid(&self) -> [f64; 2] {
        [
            (self.rows - 1) as f64 * self.spacing_cm / 2.0,
            (self.cols - 1) as f64 * self.spacing_cm / 2.0,
        ]
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.rows * self.cols < 2 {
            return Err(Error::Config(format!(
                "grid {}x{} has fewer than 2 reference points",
                self.rows, self.cols
            )));
        }
        if !(self.spacing_cm.is_finite() && self.spacing_cm > 0.0) {
            return Err(Error::Config(format!(
                "grid spacing must be positive, got {}",
                self.spacing_cm
            )));
        }
        Ok(())
    }
}

/// One CSI capture: raw amplitudes, antenna-major `3 × 30`, and its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub rp: usize,
    pub pos_cm: [f64; 2],
    pub amp: Vec<f64>,
}

/// All labeled captures of one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub grid: Grid,
    pub samples: Vec<Sample>,
}

impl Scenario {
    /// Checks labels against the grid and the amplitude layout.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        for (i, s) in self.samples.iter().enumerate() {
            if s.rp >= self.grid.len() {
                return Err(Error::Data(format!(
                    "{}: sample {i} has rp {} outside a grid of {}",
                    self.id,
                    s.rp,
                    self.grid.len()
                )));
            }
            if s.pos_cm != self.grid.position(s.rp) {
                return Err(Error::Data(format!(
                    "{}: sample {i} label {:?} is not grid point {}",
                    self.id, s.pos_cm, s.rp
                )));
            }
            if s.amp.len() != SAMPLE_LEN {
                return Err(Error::Data(format!(
                    "{}: sample {i} has {} amplitudes, expected {SAMPLE_LEN}",
                    self.id,
                    s.amp.len()
                )));
            }
            if let Some(v) = s.amp.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::Data(format!(
                    "{}: sample {i} has invalid amplitude {v}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Sample indices grouped by reference point.
    pub fn by_reference_point(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.grid.len()];
        for (i, s) in self.samples.iter().enumerate() {
            groups[s.rp].push(i);
        }
        groups
    }

    /// Normalized inputs and labels for the samples at `idx`.
    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let inputs = idx
            .iter()
            .map(|&i| normalize(&self.samples[i].amp))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let labels: Vec<[f64; 2]> = idx.iter().map(|&i| self.samples[i].pos_cm).collect();
        Batch::new(&refs, &labels)
    }

    /// Mean raw amplitude at each reference point.
    pub fn mean_amplitude_per_rp(&self) -> Vec<f64> {
        self.by_reference_point()
            .iter()
            .map(|idx| {
                let total: f64 = idx.iter().flat_map(|&i| &self.samples[i].amp).sum();
                total / (idx.len() * SAMPLE_LEN).max(1) as f64
            })
            .collect()
    }
}

/// Divides every entry by the sample's maximum so the largest becomes 1.
pub fn normalize(amp: &[f64]) -> Result<Vec<f64>> {
    if amp.len() != SAMPLE_LEN {
        return Err(Error::Shape {
            op: "normalize",
            detail: format!("expected {SAMPLE_LEN} amplitudes, got {}", amp.len()),
        });
    }
    let max = amp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::Data(format!(
            "sample has no positive finite amplitude (max {max})"
        )));
    }
    Ok(amp.iter().map(|v| v / max).collect())
}

/// Support and query sample indices of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub scenario: String,
    pub shots: usize,
    pub seed: u64,
    /// `shots` indices per reference point, grouped by point.
    pub support: Vec<usize>,
    /// Every remaining index, grouped by point.
    pub query: Vec<usize>,
}

impl TaskSplit {
    /// The first `k` support samples of each reference point.
    pub fn support_subset(&self, k: usize) -> Result<Vec<usize>> {
        if k > self.shots {
            return Err(Error::Config(format!(
                "requested {k} shots from a split with {}",
                self.shots
            )));
        }
        Ok(self
            .support
            .chunks(self.shots.max(1))
            .flat_map(|c| c[..k].iter().copied())
            .collect())
    }

    /// At most `per_rp` query samples of each reference point.
    pub fn query_subset(&self, scenario: &Scenario, per_rp: usize) -> Vec<usize> {
        let mut taken = vec![0; scenario.grid.len()];
        self.query
            .iter()
            .copied()
            .filter(|&i| {
                let rp = scenario.samples[i].rp;
                taken[rp] += 1;
                taken[rp] <= per_rp
            })
            .collect()
    }
}

/// Draws `k` support samples per reference point without replacement; the
/// rest become the query set.
pub fn split_task(scenario: &Scenario, k: usize, seed: u64) -> Result<TaskSplit> {
    let mut rng = rng::stream(seed, Stream::Split, 0);
    let mut support = Vec::with_capacity(k * scenario.grid.len());
    let mut query = Vec::with_capacity(scenario.samples.len());
    for (rp, mut idx) in scenario.by_reference_point().into_iter().enumerate() {
        if idx.len() <= k {
            return Err(Error::Data(format!(
                "{}: reference point {rp} has {} samples, need more than {k}",
                scenario.id,
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        support.extend_from_slice(&idx[..k]);
        query.extend_from_slice(&idx[k..]);
    }
    Ok(TaskSplit {
        scenario: scenario.id.clone(),
        shots: k,
        seed,
        support,
        query,
    })
}

/// Scenarios partitioned into meta-training and meta-testing members.
#[derive(Debug, Clone)]
pub struct TaskSet {
    pub scenarios: Vec<Scenario>,
    /// Indices into `scenarios`, ascending.
    pub train: Vec<usize>,
    /// Indices into `scenarios`, ascending.
    pub test: Vec<usize>,
    pub seed: u64,
}

impl TaskSet {
    /// Randomly holds out `n_test` scenarios for meta-testing.
    pub fn partition(scenarios: Vec<Scenario>, n_test: usize, seed: u64) -> Result<Self> {
        if n_test >= scenarios.len() {
            return Err(Error::Config(format!(
                "cannot hold out {n_test} of {} scenarios",
                scenarios.len()
            )));
        }
        let mut order: Vec<usize> = (0..scenarios.len()).collect();
        order.shuffle(&mut rng::stream(seed, Stream::Split, 1));
        let mut test = order[..n_test].to_vec();
        let mut train = order[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        Ok(Self {
            scenarios,
            train,
            test,
            seed,
        })
    }

    pub fn train_scenarios(&self) -> Vec<&Scenario> {
        self.train.iter().map(|&i| &self.scenarios[i]).collect()
    }

    pub fn test_scenarios(&self) -> Vec<&Scenario> {
        self.test.iter().map(|&i| &self.scenarios[i]).collect()
    }
}
