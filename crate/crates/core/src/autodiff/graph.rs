use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Sentinel gather index that reads as zero (used for convolution padding).
pub const PAD: u32 = u32::MAX;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `op(a) · op(b)` where `op` transposes when the flag is set.
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    /// `(n, m) + (m)` broadcast over rows.
    AddRowBias(Var, Var),
    /// `(n, m) -> (m)`.
    SumRows(Var),
    /// `(m) -> (n, m)`.
    BroadcastRows(Var),
    /// Elementwise product with a fixed 0/1 mask.
    Gate(Var, Arc<[bool]>),
    /// `out[k] = in[idx[k]]`, zero where `idx[k] == PAD`.
    Gather(Var, Arc<[u32]>),
    /// `out[idx[k]] += in[k]`, skipping `PAD`.
    Scatter(Var, Arc<[u32]>),
    Reshape(Var),
    SumAll(Var),
    /// Scalar broadcast to the node's shape.
    Expand(Var),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRowBias(a, b) => {
                [Some(a), Some(b)]
            }
            Op::MatMul { a, b, .. } => [Some(a), Some(b)],
            Op::Scale(a, _)
            | Op::SumRows(a)
            | Op::BroadcastRows(a)
            | Op::Gate(a, _)
            | Op::Gather(a, _)
            | Op::Scatter(a, _)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::Expand(a) => [Some(a), None],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    tracks: bool,
}

/// Result of [`Graph::grad`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// One gradient node per requested variable, in request order.
    pub grads: Vec<Var>,
    /// Positions (into the request list) of variables with no path to the output.
    /// Their gradient is a zero constant.
    pub detached: Vec<usize>,
}

/// Append-only tape of tensor operations with reverse-mode differentiation.
///
/// Nodes are stored in creation order, so every input precedes its consumer.
/// When [`Graph::grad`] is called with `create_graph`, the backward pass is
/// itself recorded from the same differentiable ops, and the returned
/// gradients can be differentiated again.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    no_record: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].tracks
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, tracks: bool) -> Var {
        self.nodes.push(Node { value, op, tracks });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op) -> Var {
        let tracks = !self.no_record
            && op
                .inputs()
                .iter()
                .flatten()
                .any(|v| self.nodes[v.0].tracks);
        self.push(value, op, tracks)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push_op(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push_op(t, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push_op(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * c).collect();
        let t = Tensor::from_parts(x.shape().to_vec(), data);
        self.push_op(t, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// General 2-D product `op(a) · op(b)`.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("operands must be 2-D, got {sa:?} and {sb:?}"),
            });
        }
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!(
                    "inner extents differ: {sa:?}{} x {sb:?}{}",
                    if ta { "ᵀ" } else { "" },
                    if tb { "ᵀ" } else { "" }
                ),
            });
        }
        let mut out = vec![0.0; m * n];
        let (ca, cb) = (sa[1] as isize, sb[1] as isize);
        let (rsa, csa) = if ta { (1, ca) } else { (ca, 1) };
        let (rsb, csb) = if tb { (1, cb) } else { (cb, 1) };
        // SAFETY: strides describe in-bounds row-major views of `a`, `b` and `out`
        // with the extents checked above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.value(a).data().as_ptr(),
                rsa,
                csa,
                self.value(b).data().as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        let t = Tensor::from_parts(vec![m, n], out);
        Ok(self.push_op(t, Op::MatMul { a, b, ta, tb }))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::Shape {
                op: "add_row_bias",
                detail: format!("{sx:?} + {sb:?}"),
            });
        }
        let m = sb[0];
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(m) {
            row.iter_mut().zip(&b).for_each(|(v, c)| *v += c);
        }
        let t = Tensor::from_parts(self.shape(x).to_vec(), data);
        Ok(self.push_op(t, Op::AddRowBias(x, bias)))
    }

    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 {
            return Err(Error::Shape {
                op: "sum_rows",
                detail: format!("expected 2-D, got {sx:?}"),
            });
        }
        let m = sx[1];
        let mut out = vec![0.0; m];
        for row in self.value(x).data().chunks(m) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        Ok(self.push_op(Tensor::from_parts(vec![m], out), Op::SumRows(x)))
    }

    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 1 || rows == 0 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                detail: format!("expected 1-D source and rows > 0, got {sx:?} x {rows}"),
            });
        }
        let m = sx[0];
        let src = self.value(x).data();
        let data = (0..rows).flat_map(|_| src.iter().copied()).collect();
        Ok(self.push_op(Tensor::from_parts(vec![rows, m], data), Op::BroadcastRows(x)))
    }

    /// Multiplies by a fixed 0/1 mask; the mask is not differentiated.
    pub fn gate(&mut self, x: Var, mask: Arc<[bool]>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::Shape {
                op: "gate",
                detail: format!("mask length {} vs {:?}", mask.len(), self.shape(x)),
            });
        }
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(x, &m)| if m { *x } else { 0.0 })
            .collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        Ok(self.push_op(t, Op::Gate(x, mask)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mask: Arc<[bool]> = self.value(x).data().iter().map(|v| *v > 0.0).collect();
        self.gate(x, mask).expect("mask built from input")
    }

    /// Reads `x` at fixed flat indices into a tensor of `shape`.
    pub fn gather(&mut self, x: Var, idx: Arc<[u32]>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let src = self.value(x).data();
        if idx.len() != n || idx.iter().any(|&i| i != PAD && i as usize >= src.len()) {
            return Err(Error::Shape {
                op: "gather",
                detail: format!(
                    "{} indices for output {shape:?} from source of {} values",
                    idx.len(),
                    src.len()
                ),
            });
        }
        let data = idx
            .iter()
            .map(|&i| if i == PAD { 0.0 } else { src[i as usize] })
            .collect();
        Ok(self.push_op(Tensor::from_parts(shape.to_vec(), data), Op::Gather(x, idx)))
    }

    /// Adjoint of [`Graph::gather`]: accumulates `x[k]` into `out[idx[k]]`.
    pub fn scatter(&mut self, x: Var, idx: Arc<[u32]>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let src = self.value(x).data();
        if idx.len() != src.len() || idx.iter().any(|&i| i != PAD && i as usize >= n) {
            return Err(Error::Shape {
                op: "scatter",
                detail: format!(
                    "{} indices from source of {} values into {shape:?}",
                    idx.len(),
                    src.len()
                ),
            });
        }
        let mut out = vec![0.0; n];
        for (&i, v) in idx.iter().zip(src) {
            if i != PAD {
                out[i as usize] += v;
            }
        }
        Ok(self.push_op(Tensor::from_parts(shape.to_vec(), out), Op::Scatter(x, idx)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push_op(t, Op::Reshape(x)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).item().ok_or_else(|| Error::Shape {
            op: "expand",
            detail: format!("source must hold one value, got {:?}", self.shape(x)),
        })?;
        Ok(self.push_op(Tensor::filled(shape, v), Op::Expand(x)))
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the backward computation is recorded, so the returned
    /// gradient nodes depend differentiably on the graph's tracked leaves.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::NonScalarOutput {
                shape: self.shape(output).to_vec(),
            });
        }
        let prev = self.no_record;
        self.no_record = !create_graph;
        let res = self.backward(output, wrt);
        self.no_record = prev;
        res
    }

    fn backward(&mut self, output: Var, wrt: &[Var]) -> Result<Gradients> {
        let end = output.0 + 1;
        // Only nodes on some path from a requested leaf need adjoints.
        let lo = wrt.iter().map(|v| v.0).min().unwrap_or(end).min(end);
        let mut adj: Vec<Option<Var>> = vec![None; end - lo];
        let seed = Tensor::filled(self.shape(output), 1.0);
        adj[output.0 - lo] = Some(self.constant(seed));

        for i in (lo..end).rev() {
            let Some(g) = adj[i - lo] else { continue };
            if !self.nodes[i].tracks {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (input, contrib) in self.vjp(Var(i), &op, g)? {
                if input.0 < lo || !self.nodes[input.0].tracks {
                    continue;
                }
                let slot = &mut adj[input.0 - lo];
                *slot = Some(match *slot {
                    Some(acc) => self.add(acc, contrib)?,
                    None => contrib,
                });
            }
        }

        let mut grads = Vec::with_capacity(wrt.len());
        let mut detached = Vec::new();
        for (k, &w) in wrt.iter().enumerate() {
            match (w.0 < end).then(|| adj[w.0 - lo]).flatten() {
                Some(g) if self.nodes[w.0].tracks => grads.push(g),
                _ => {
                    detached.push(k);
                    let z = Tensor::zeros(self.shape(w));
                    grads.push(self.constant(z));
                }
            }
        }
        Ok(Gradients { grads, detached })
    }

    /// Vector-Jacobian products of one node, expressed as graph ops.
    fn vjp(&mut self, out: Var, op: &Op, g: Var) -> Result<Vec<(Var, Var)>> {
        let tracked = |s: &Self, v: Var| s.nodes[v.0].tracks;
        let mut res = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                res.push((*a, g));
                res.push((*b, g));
            }
            Op::Sub(a, b) => {
                res.push((*a, g));
                if tracked(self, *b) {
                    res.push((*b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if tracked(self, *a) {
                    res.push((*a, self.mul(g, *b)?));
                }
                if tracked(self, *b) {
                    res.push((*b, self.mul(g, *a)?));
                }
            }
            Op::Scale(a, c) => res.push((*a, self.scale(g, *c))),
            &Op::MatMul { a, b, ta, tb } => {
                if tracked(self, a) {
                    let da = match (ta, tb) {
                        (false, false) => self.matmul_t(g, b, false, true)?,
                        (true, false) => self.matmul_t(b, g, false, true)?,
                        (false, true) => self.matmul_t(g, b, false, false)?,
                        (true, true) => self.matmul_t(b, g, true, true)?,
                    };
                    res.push((a, da));
                }
                if tracked(self, b) {
                    let db = match (ta, tb) {
                        (false, false) => self.matmul_t(a, g, true, false)?,
                        (true, false) => self.matmul_t(a, g, false, false)?,
                        (false, true) => self.matmul_t(g, a, true, false)?,
                        (true, true) => self.matmul_t(g, a, true, true)?,
                    };
                    res.push((b, db));
                }
            }
            Op::AddRowBias(x, b) => {
                res.push((*x, g));
                if tracked(self, *b) {
                    res.push((*b, self.sum_rows(g)?));
                }
            }
            Op::SumRows(x) => {
                let rows = self.shape(*x)[0];
                res.push((*x, self.broadcast_rows(g, rows)?));
            }
            Op::BroadcastRows(x) => res.push((*x, self.sum_rows(g)?)),
            Op::Gate(x, mask) => res.push((*x, self.gate(g, mask.clone())?)),
            Op::Gather(x, idx) => {
                let shape = self.shape(*x).to_vec();
                res.push((*x, self.scatter(g, idx.clone(), &shape)?));
            }
            Op::Scatter(x, idx) => {
                let shape = self.shape(*x).to_vec();
                res.push((*x, self.gather(g, idx.clone(), &shape)?));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                res.push((*x, self.reshape(g, &shape)?));
            }
            Op::SumAll(x) => {
                let shape = self.shape(*x).to_vec();
                res.push((*x, self.expand(g, &shape)?));
            }
            Op::Expand(x) => {
                let s = self.sum_all(g);
                let shape = self.shape(*x).to_vec();
                res.push((*x, self.reshape(s, &shape)?));
            }
        }
        debug_assert!(res.iter().all(|(i, _)| i.0 < out.0));
        Ok(res)
    }
}
