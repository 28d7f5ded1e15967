//! Compares the tape's gradient of the network loss with central finite
//! differences on a few coordinates of every layer, then checks a
//! second-order quantity the same way.

use metaloc::autodiff::{Graph, Tensor};
use metaloc::model::{self, Batch, ParamSet};
use metaloc::tasks::{generate_scenario, ChannelConfig};

fn main() -> metaloc::Result<()> {
    let scenario = generate_scenario(7, &ChannelConfig::default())?;
    let idx: Vec<usize> = (0..scenario.samples.len()).step_by(40).collect();
    let batch: Batch = scenario.batch(&idx)?;
    let params = ParamSet::init(11);
    println!("{} parameters, batch of {}", params.param_count(), batch.len());

    let (_, grads) = model::objective_and_grad(&params, &batch)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (layer, (name, _)) in model::LAYOUT.iter().enumerate() {
        let n = params.tensors()[layer].len();
        for &i in &[0, n / 2, n - 1] {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[layer].data_mut()[i] += delta;
                model::objective(&p, &batch)
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let analytic = grads[layer].data()[i];
            let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8);
            worst = worst.max(rel);
            println!("{name:<14}[{i:>5}] tape {analytic:+.6e}  fd {numeric:+.6e}  rel {rel:.1e}");
        }
    }
    println!("worst relative difference {worst:.2e}");

    // d/dw of (d w³/dw)², differentiated through the first backward pass.
    let hvp = |w: f64| -> metaloc::Result<(f64, f64)> {
        let mut g = Graph::new();
        let p = g.param(Tensor::scalar(w));
        let cube = g.mul(p, p)?;
        let cube = g.mul(cube, p)?;
        let d = g.grad(cube, &[p], true)?.grads[0];
        let sq = g.mul(d, d)?;
        let dd = g.grad(sq, &[p], false)?.grads[0];
        Ok((g.value(sq).item().unwrap(), g.value(dd).item().unwrap()))
    };
    let w = 0.7;
    let numeric = (hvp(w + h)?.0 - hvp(w - h)?.0) / (2.0 * h);
    println!("second order: tape {:.8} fd {numeric:.8} closed form {:.8}", hvp(w)?.1, 36.0 * w.powi(3));
    Ok(())
}
