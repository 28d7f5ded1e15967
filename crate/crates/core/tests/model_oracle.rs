//! The network's forward pass against a plain-loop reimplementation, and
//! the loss gradient against finite differences of that reimplementation.

use metaloc::model::{self, Batch, ParamSet, ANTENNAS, SAMPLE_LEN, SUBCARRIERS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Same-padded, kernel-3 cross-correlation: `x` is `cin × len`.
fn conv(x: &[Vec<f64>], w: &[f64], b: &[f64], cout: usize) -> Vec<Vec<f64>> {
    let cin = x.len();
    let len = x[0].len();
    (0..cout)
        .map(|o| {
            (0..len)
                .map(|t| {
                    let mut s = b[o];
                    for c in 0..cin {
                        for k in 0..3 {
                            let pos = t as isize + k as isize - 1;
                            if pos >= 0 && (pos as usize) < len {
                                s += w[(o * cin + c) * 3 + k] * x[c][pos as usize];
                            }
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn pool(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| (0..row.len() / 2).map(|i| row[2 * i].max(row[2 * i + 1])).collect())
        .collect()
}

fn dense(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, &bias)| bias + x.iter().enumerate().map(|(i, v)| w[o * x.len() + i] * v).sum::<f64>())
        .collect()
}

fn oracle(p: &ParamSet, sample: &[f64]) -> [f64; 2] {
    let t = |i: usize| p.tensors()[i].data();
    let x: Vec<Vec<f64>> = sample.chunks(SUBCARRIERS).map(<[f64]>::to_vec).collect();
    assert_eq!(x.len(), ANTENNAS);
    let mut h = conv(&x, t(0), t(1), 10);
    h.iter_mut().flatten().for_each(|v| *v = relu(*v));
    h = pool(&h);
    h = conv(&h, t(2), t(3), 15);
    h.iter_mut().flatten().for_each(|v| *v = relu(*v));
    h = pool(&h);
    let mut flat: Vec<f64> = h.concat();
    assert_eq!(flat.len(), 105);
    for layer in 0..4 {
        flat = dense(&flat, t(4 + 2 * layer), t(5 + 2 * layer)).into_iter().map(relu).collect();
    }
    let out = dense(&flat, t(12), t(13));
    [out[0] * 100.0, out[1] * 100.0]
}

fn random_params(rng: &mut ChaCha8Rng) -> ParamSet {
    let mut p = ParamSet::init(rng.random());
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    p
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Batch {
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..SAMPLE_LEN).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let ys: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(0.0..120.0), rng.random_range(0.0..180.0)])
        .collect();
    Batch::new(&refs, &ys).unwrap()
}

#[test]
fn forward_matches_loop_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let p = random_params(&mut rng);
        let batch = random_batch(&mut rng, 6);
        let pred = model::predict(&p, &batch.x).unwrap();
        for (i, sample) in batch.x.data().chunks(SAMPLE_LEN).enumerate() {
            let want = oracle(&p, sample);
            for d in 0..2 {
                assert!(
                    (pred[i][d] - want[d]).abs() <= 1e-9 * (1.0 + want[d].abs()),
                    "sample {i} coord {d}: {} vs {}",
                    pred[i][d],
                    want[d]
                );
            }
        }
    }
}

#[test]
fn loss_is_mse_in_square_centimeters() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_params(&mut rng);
    let batch = random_batch(&mut rng, 4);
    let want: f64 = batch
        .x
        .data()
        .chunks(SAMPLE_LEN)
        .zip(batch.labels())
        .map(|(s, y)| {
            let o = oracle(&p, s);
            (o[0] - y[0]).powi(2) + (o[1] - y[1]).powi(2)
        })
        .sum::<f64>()
        / (2.0 * batch.len() as f64);
    let got = model::loss(&p, &batch).unwrap();
    assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    let objective = model::objective(&p, &batch).unwrap();
    assert!((objective - want / 1e4).abs() <= 1e-9 * objective);
}

#[test]
fn gradient_matches_oracle_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = random_params(&mut rng);
    let batch = random_batch(&mut rng, 3);
    let oracle_loss = |q: &ParamSet| -> f64 {
        batch
            .x
            .data()
            .chunks(SAMPLE_LEN)
            .zip(batch.labels())
            .map(|(s, y)| {
                let o = oracle(q, s);
                (o[0] - y[0]).powi(2) + (o[1] - y[1]).powi(2)
            })
            .sum::<f64>()
            / (2.0 * batch.len() as f64)
    };
    let (_, grads) = model::loss_and_grad(&p, &batch).unwrap();
    let h = 1e-5;
    for layer in 0..p.tensors().len() {
        let i = rng.random_range(0..p.tensors()[layer].len());
        let mut plus = p.clone();
        plus.tensors_mut()[layer].data_mut()[i] += h;
        let mut minus = p.clone();
        minus.tensors_mut()[layer].data_mut()[i] -= h;
        let numeric = (oracle_loss(&plus) - oracle_loss(&minus)) / (2.0 * h);
        let analytic = grads[layer].data()[i];
        let scale = numeric.abs().max(analytic.abs()).max(1e-3);
        assert!((numeric - analytic).abs() / scale <= 1e-4, "layer {layer}[{i}]: {analytic} vs {numeric}");
    }
}
