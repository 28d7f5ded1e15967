//! Layer-level ops built from the primitive graph ops, so every layer is
//! twice differentiable without its own backward rule.

use std::sync::Arc;

use super::graph::{Graph, Var, PAD};
use crate::error::{Error, Result};

/// Splits `(B, C, L)` or `(C, L)` into `(B, C, L)`.
fn batched_cl(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, c, l] => Ok((b, c, l)),
        [c, l] => Ok((1, c, l)),
        _ => Err(Error::Shape {
            op,
            detail: format!("expected (channels, length) or (batch, channels, length), got {shape:?}"),
        }),
    }
}

impl Graph {
    /// 1-D cross-correlation with zero padding and unit stride.
    ///
    /// `x` is `(B, Cin, L)` or `(Cin, L)`, `weight` is `(Cout, Cin, K)` and
    /// `bias` is `(Cout)`. The output keeps the batch convention of the input.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, cin, len) = batched_cl(&xs, "conv1d")?;
        let ws = self.shape(weight).to_vec();
        let [cout, wcin, k] = ws[..] else {
            return Err(Error::Shape {
                op: "conv1d",
                detail: format!("weight must be (out, in, kernel), got {ws:?}"),
            });
        };
        if wcin != cin {
            return Err(Error::Shape {
                op: "conv1d",
                detail: format!("input has {cin} channels, weight expects {wcin}"),
            });
        }
        if self.shape(bias) != [cout] {
            return Err(Error::Shape {
                op: "conv1d",
                detail: format!("bias {:?} for {cout} output channels", self.shape(bias)),
            });
        }
        if len + 2 * padding < k {
            return Err(Error::Shape {
                op: "conv1d",
                detail: format!("length {len} with padding {padding} shorter than kernel {k}"),
            });
        }
        let out_len = len + 2 * padding - k + 1;

        let mut cols = Vec::with_capacity(batch * out_len * cin * k);
        for b in 0..batch {
            for l in 0..out_len {
                for c in 0..cin {
                    for j in 0..k {
                        let pos = (l + j) as isize - padding as isize;
                        cols.push(if pos < 0 || pos as usize >= len {
                            PAD
                        } else {
                            (b * cin * len + c * len + pos as usize) as u32
                        });
                    }
                }
            }
        }
        let cols = self.gather(x, cols.into(), &[batch * out_len, cin * k])?;
        let w2 = self.reshape(weight, &[cout, cin * k])?;
        let y = self.matmul_t(cols, w2, false, true)?;
        let y = self.add_row_bias(y, bias)?;

        // (B·L, Cout) rows back to channel-major (B, Cout, L).
        let mut perm = Vec::with_capacity(batch * cout * out_len);
        for b in 0..batch {
            for o in 0..cout {
                for l in 0..out_len {
                    perm.push(((b * out_len + l) * cout + o) as u32);
                }
            }
        }
        let shape: Vec<usize> = if xs.len() == 3 {
            vec![batch, cout, out_len]
        } else {
            vec![cout, out_len]
        };
        self.gather(y, perm.into(), &shape)
    }

    /// Non-overlapping max pooling along the length axis; a trailing partial
    /// window is dropped (length 15 pools to 7).
    pub fn maxpool1d(&mut self, x: Var, kernel: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, ch, len) = batched_cl(&xs, "maxpool1d")?;
        if kernel == 0 || len < kernel {
            return Err(Error::Shape {
                op: "maxpool1d",
                detail: format!("kernel {kernel} on length {len}"),
            });
        }
        let out_len = len / kernel;
        let src = self.value(x).data();
        let mut idx = Vec::with_capacity(batch * ch * out_len);
        for row in 0..batch * ch {
            let base = row * len;
            for l in 0..out_len {
                let start = base + l * kernel;
                let mut best = start;
                for i in start + 1..start + kernel {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                idx.push(best as u32);
            }
        }
        let mut shape = xs;
        *shape.last_mut().expect("rank checked") = out_len;
        self.gather(x, Arc::from(idx), &shape)
    }

    /// `(B, C, L) -> (B, C·L)`, channel-major.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (b, c, l) = batched_cl(&xs, "flatten")?;
        self.reshape(x, &[b, c * l])
    }

    /// Affine layer `x · Wᵀ + b` with `W` stored as `(out, in)`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul_t(x, weight, false, true)?;
        self.add_row_bias(y, bias)
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target).map_err(|_| Error::Shape {
            op: "mse",
            detail: format!(
                "prediction {:?} vs target {:?}",
                self.shape(pred),
                self.shape(target)
            ),
        })?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }
}
