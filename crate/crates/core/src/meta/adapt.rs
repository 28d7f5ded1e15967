//! Inner-loop adaptation and the per-task gradients the outer loop consumes.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;
use crate::model::{self, Batch};

/// A differentiable per-task objective over a list of parameter tensors.
pub trait TaskLoss: Sync {
    type Data: Sync;

    fn loss(&self, g: &mut Graph, params: &[Var], data: &Self::Data) -> Result<Var>;
}

/// The localization network's batch MSE in m².
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalizationLoss;

impl TaskLoss for LocalizationLoss {
    type Data = Batch;

    fn loss(&self, g: &mut Graph, params: &[Var], data: &Batch) -> Result<Var> {
        model::objective_on(g, params, data)
    }
}

/// Support and query data of one task.
#[derive(Debug, Clone)]
pub struct Episode<D> {
    pub support: D,
    pub query: D,
}

/// Records `steps` full-batch gradient steps `θ ← θ − α∇L_support(θ)` on `g`.
///
/// With `second_order` the backward passes are recorded, so the returned
/// nodes stay differentiable functions of `params`.
pub fn inner_adapt_on<L: TaskLoss>(
    g: &mut Graph,
    task: &L,
    params: &[Var],
    support: &L::Data,
    alpha: f64,
    steps: usize,
    second_order: bool,
) -> Result<Vec<Var>> {
    let mut cur = params.to_vec();
    for _ in 0..steps {
        let l = task.loss(g, &cur, support)?;
        let grads = g.grad(l, &cur, second_order)?.grads;
        cur = cur
            .iter()
            .zip(&grads)
            .map(|(&p, &d)| {
                let s = g.scale(d, alpha);
                g.sub(p, s)
            })
            .collect::<Result<_>>()?;
    }
    Ok(cur)
}

/// Plain-value inner adaptation: returns `θ'` after `steps` steps.
pub fn inner_adapt<L: TaskLoss>(
    task: &L,
    params: &[Tensor],
    support: &L::Data,
    alpha: f64,
    steps: usize,
) -> Result<Vec<Tensor>> {
    let mut cur = params.to_vec();
    for _ in 0..steps {
        let (_, grads) = value_and_grad(task, &cur, support)?;
        descend(&mut cur, &grads, alpha)?;
    }
    Ok(cur)
}

/// Loss and gradient at `params`.
pub fn value_and_grad<L: TaskLoss>(
    task: &L,
    params: &[Tensor],
    data: &L::Data,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let ps: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let l = task.loss(&mut g, &ps, data)?;
    let grads = g.grad(l, &ps, false)?;
    let value = g.value(l).item().expect("scalar loss");
    Ok((value, grads.grads.iter().map(|v| g.value(*v).clone()).collect()))
}

pub(crate) fn descend(params: &mut [Tensor], grads: &[Tensor], step: f64) -> Result<()> {
    for (p, d) in params.iter_mut().zip(grads) {
        p.data_mut()
            .iter_mut()
            .zip(d.data())
            .for_each(|(v, g)| *v -= step * g);
        if !p.is_finite() {
            return Err(crate::Error::NonFinite {
                context: format!("parameters after a step of size {step}"),
            });
        }
    }
    Ok(())
}

/// Query loss after adaptation and its gradient with respect to the
/// pre-adaptation parameters.
#[derive(Debug, Clone)]
pub struct TaskGradient {
    pub query_loss: f64,
    pub grads: Vec<Tensor>,
}

/// `∇_θ L_query(adapt(θ))`, differentiating through the inner loop.
pub fn second_order_gradient<L: TaskLoss>(
    task: &L,
    params: &[Tensor],
    episode: &Episode<L::Data>,
    alpha: f64,
    steps: usize,
) -> Result<TaskGradient> {
    let mut g = Graph::new();
    let theta: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let adapted = inner_adapt_on(&mut g, task, &theta, &episode.support, alpha, steps, true)?;
    let l = task.loss(&mut g, &adapted, &episode.query)?;
    let grads = g.grad(l, &theta, false)?;
    Ok(TaskGradient {
        query_loss: g.value(l).item().expect("scalar loss"),
        grads: grads.grads.iter().map(|v| g.value(*v).clone()).collect(),
    })
}

/// `∇_θ' L_query(θ')` evaluated at the adapted parameters and used as the
/// gradient for `θ` (the inner loop is treated as constant).
pub fn first_order_gradient<L: TaskLoss>(
    task: &L,
    params: &[Tensor],
    episode: &Episode<L::Data>,
    alpha: f64,
    steps: usize,
) -> Result<TaskGradient> {
    let adapted = inner_adapt(task, params, &episode.support, alpha, steps)?;
    let (query_loss, grads) = value_and_grad(task, &adapted, &episode.query)?;
    Ok(TaskGradient { query_loss, grads })
}
