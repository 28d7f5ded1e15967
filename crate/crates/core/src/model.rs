//! The localization network: a `3 × 30` CSI amplitude map in, an `(x, y)`
//! position in centimeters out.
//!
//! | layer   | input   | output  | activation |
//! |---------|---------|---------|------------|
//! | conv1   | 3×30    | 10×30   | relu       |
//! | pool    | 10×30   | 10×15   |            |
//! | conv2   | 10×15   | 15×15   | relu       |
//! | pool    | 15×15   | 15×7    |            |
//! | dense1  | 105     | 128     | relu       |
//! | dense2  | 128     | 64      | relu       |
//! | dense3  | 64      | 32      | relu       |
//! | dense4  | 32      | 8       | relu       |
//! | dense5  | 8       | 2       |            |
//!
//! The head works in meters and [`forward`] converts its output to cm. The
//! trainers minimize [`objective_on`], the same MSE expressed in m², which
//! keeps plain SGD stable at step sizes around `1e-2`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const ANTENNAS: usize = 3;
pub const SUBCARRIERS: usize = 30;
pub const SAMPLE_LEN: usize = ANTENNAS * SUBCARRIERS;
/// Centimeters per unit of the dense head's raw output.
pub const HEAD_UNIT_CM: f64 = 100.0;

/// Parameter names and shapes, in checkpoint order.
pub const LAYOUT: [(&str, &[usize]); LAYER_COUNT] = [
    ("conv1.weight", &[10, 3, 3]),
    ("conv1.bias", &[10]),
    ("conv2.weight", &[15, 10, 3]),
    ("conv2.bias", &[15]),
    ("dense1.weight", &[128, 105]),
    ("dense1.bias", &[128]),
    ("dense2.weight", &[64, 128]),
    ("dense2.bias", &[64]),
    ("dense3.weight", &[32, 64]),
    ("dense3.bias", &[32]),
    ("dense4.weight", &[8, 32]),
    ("dense4.bias", &[8]),
    ("dense5.weight", &[2, 8]),
    ("dense5.bias", &[2]),
];

pub const LAYER_COUNT: usize = 14;

fn layout() -> impl Iterator<Item = (&'static str, &'static [usize])> {
    LAYOUT.iter().copied()
}

/// Weights of the network as an ordered list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
}

impl ParamSet {
    /// Fan-in scaled uniform weights (`±sqrt(6 / fan_in)`), zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = rng::stream(seed, Stream::Init, 0);
        let tensors = layout()
            .map(|(name, shape)| {
                if name.ends_with(".bias") {
                    return Tensor::zeros(shape);
                }
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape.to_vec(), data).expect("layout shapes are valid")
            })
            .collect();
        Self { tensors }
    }

    pub fn zeros() -> Self {
        Self {
            tensors: layout().map(|(_, s)| Tensor::zeros(s)).collect(),
        }
    }

    /// Builds a set from tensors in [`LAYOUT`] order, checking every shape.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != LAYER_COUNT {
            return Err(Error::Checkpoint(format!(
                "expected {LAYER_COUNT} tensors, got {}",
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout().zip(&tensors) {
            if t.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { tensors })
    }

    pub fn names() -> impl Iterator<Item = &'static str> {
        layout().map(|(n, _)| n)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        Self::names().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Total number of scalars.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// `self -= step * grads`, failing if any result is non-finite.
    pub fn descend(&mut self, grads: &[Tensor], step: f64) -> Result<()> {
        debug_assert_eq!(grads.len(), self.tensors.len());
        for (t, g) in self.tensors.iter_mut().zip(grads) {
            t.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(v, d)| *v -= step * d);
        }
        if !self.is_finite() {
            return Err(Error::NonFinite {
                context: format!("parameters after update with step {step}"),
            });
        }
        Ok(())
    }

    /// Adds every tensor as a tracked leaf of `g`.
    pub fn attach(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Reads the values of `vars` back into a set.
    pub fn from_graph(g: &Graph, vars: &[Var]) -> Self {
        Self {
            tensors: vars.iter().map(|v| g.value(*v).clone()).collect(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            layers: Self::names()
                .zip(&self.tensors)
                .map(|(name, t)| CheckpointLayer {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.layers.len() != LAYER_COUNT {
            return Err(Error::Checkpoint(format!(
                "expected {LAYER_COUNT} layers, got {}",
                ck.layers.len()
            )));
        }
        let mut tensors = Vec::with_capacity(LAYER_COUNT);
        for ((name, shape), layer) in layout().zip(ck.layers) {
            if layer.name != name || layer.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    layer.name, layer.shape
                )));
            }
            tensors.push(
                Tensor::new(layer.shape, layer.values)
                    .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?,
            );
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Self::from_checkpoint(ck)
    }
}

pub const CHECKPOINT_FORMAT: &str = "metaloc-params-v1";

/// On-disk parameter container: layer name, shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Inputs `(B, 3, 30)` and position labels `(B, 2)` in centimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
}

impl Batch {
    /// Stacks flat `3 × 30` inputs with their labels.
    pub fn new(inputs: &[&[f64]], labels: &[[f64; 2]]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let mut x = Vec::with_capacity(inputs.len() * SAMPLE_LEN);
        for s in inputs {
            if s.len() != SAMPLE_LEN {
                return Err(Error::Shape {
                    op: "batch",
                    detail: format!("sample has {} values, expected {SAMPLE_LEN}", s.len()),
                });
            }
            x.extend_from_slice(s);
        }
        let y = labels.iter().flat_map(|l| l.iter().copied()).collect();
        Ok(Self {
            x: Tensor::new(vec![inputs.len(), ANTENNAS, SUBCARRIERS], x)?,
            y: Tensor::new(vec![labels.len(), 2], y)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.y.data().chunks(2).map(|c| [c[0], c[1]])
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let xs: Vec<&[f64]> = idx
            .iter()
            .map(|&i| &self.x.data()[i * SAMPLE_LEN..(i + 1) * SAMPLE_LEN])
            .collect();
        let ys: Vec<[f64; 2]> = idx
            .iter()
            .map(|&i| [self.y.data()[2 * i], self.y.data()[2 * i + 1]])
            .collect();
        Self::new(&xs, &ys)
    }
}

/// Records the forward pass for inputs `x` of shape `(B, 3, 30)`; returns `(B, 2)`.
pub fn forward(g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
    if params.len() != LAYER_COUNT {
        return Err(Error::Checkpoint(format!(
            "forward needs {LAYER_COUNT} parameter tensors, got {}",
            params.len()
        )));
    }
    let xs = g.shape(x);
    if xs.len() != 3 || xs[1] != ANTENNAS || xs[2] != SUBCARRIERS {
        return Err(Error::Shape {
            op: "forward",
            detail: format!("input must be (batch, {ANTENNAS}, {SUBCARRIERS}), got {xs:?}"),
        });
    }
    let mut h = g.conv1d(x, params[0], params[1], 1)?;
    h = g.relu(h);
    h = g.maxpool1d(h, 2)?;
    h = g.conv1d(h, params[2], params[3], 1)?;
    h = g.relu(h);
    h = g.maxpool1d(h, 2)?;
    h = g.flatten(h)?;
    for layer in 0..4 {
        h = g.dense(h, params[4 + 2 * layer], params[5 + 2 * layer])?;
        h = g.relu(h);
    }
    let out = g.dense(h, params[12], params[13])?;
    Ok(g.scale(out, HEAD_UNIT_CM))
}

/// Records the batch MSE loss (cm²) on `g`.
pub fn loss_on(g: &mut Graph, params: &[Var], batch: &Batch) -> Result<Var> {
    let x = g.constant(batch.x.clone());
    let y = g.constant(batch.y.clone());
    let pred = forward(g, params, x)?;
    let l = g.mse(pred, y)?;
    check_finite_loss(g.value(l).item().expect("scalar loss"))?;
    Ok(l)
}

/// Records the training objective: the batch MSE in m².
pub fn objective_on(g: &mut Graph, params: &[Var], batch: &Batch) -> Result<Var> {
    let l = loss_on(g, params, batch)?;
    Ok(g.scale(l, 1.0 / (HEAD_UNIT_CM * HEAD_UNIT_CM)))
}

pub(crate) fn check_finite_loss(l: f64) -> Result<()> {
    if l.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("loss evaluated to {l}"),
        })
    }
}

/// Position estimates `(x, y)` in cm for every row of `x` (`(B, 3, 30)`).
pub fn predict(params: &ParamSet, x: &Tensor) -> Result<Vec<[f64; 2]>> {
    let mut g = Graph::new();
    let ps: Vec<Var> = params.tensors.iter().map(|t| g.constant(t.clone())).collect();
    let xv = g.constant(x.clone());
    let out = forward(&mut g, &ps, xv)?;
    Ok(g.value(out).data().chunks(2).map(|c| [c[0], c[1]]).collect())
}

/// Mean squared error over both coordinates and every sample.
pub fn loss(params: &ParamSet, batch: &Batch) -> Result<f64> {
    let mut g = Graph::new();
    let ps: Vec<Var> = params.tensors.iter().map(|t| g.constant(t.clone())).collect();
    let l = loss_on(&mut g, &ps, batch)?;
    Ok(g.value(l).item().expect("scalar"))
}

/// Loss and its gradient with respect to every parameter tensor.
pub fn loss_and_grad(params: &ParamSet, batch: &Batch) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let ps = params.attach(&mut g);
    let l = loss_on(&mut g, &ps, batch)?;
    let grads = g.grad(l, &ps, false)?;
    let out = grads.grads.iter().map(|v| g.value(*v).clone()).collect();
    Ok((g.value(l).item().expect("scalar"), out))
}

/// The training objective (m²) at `params`.
pub fn objective(params: &ParamSet, batch: &Batch) -> Result<f64> {
    let mut g = Graph::new();
    let ps: Vec<Var> = params.tensors.iter().map(|t| g.constant(t.clone())).collect();
    let l = objective_on(&mut g, &ps, batch)?;
    Ok(g.value(l).item().expect("scalar"))
}

/// The training objective and its gradient.
pub fn objective_and_grad(params: &ParamSet, batch: &Batch) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let ps = params.attach(&mut g);
    let l = objective_on(&mut g, &ps, batch)?;
    let grads = g.grad(l, &ps, false)?;
    let out = grads.grads.iter().map(|v| g.value(*v).clone()).collect();
    Ok((g.value(l).item().expect("scalar"), out))
}
