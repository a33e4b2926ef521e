use crate::error::{arg_err, shape_err, Result};
use crate::graph::{GradAcc, Graph, Node, Op, Var};
use crate::scalar::Scalar;

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, the quantity folded into running estimates.
    pub var: Vec<T>,
}

/// `(batch, channels, positions)` for `[B, C]` or `[B, C, N]` inputs.
fn bn_dims(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [b, c] => Some((b, c, 1)),
        [b, c, n] => Some((b, c, n)),
        _ => None,
    }
}

impl<T: Scalar> Graph<T> {
    /// Batch normalization over `[B, C]` or `[B, C, N]`, statistics taken
    /// per channel across the batch and position axes.
    ///
    /// Training graphs normalize with batch statistics and return them so
    /// the caller can update its running estimates; inference graphs use
    /// `running = (mean, var)`, which is then required.
    pub fn batch_norm_1d(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        if self.is_training() {
            let (y, stats) = self.batch_norm_train(x, gamma, beta, eps)?;
            Ok((y, Some(stats)))
        } else {
            let Some((mean, var)) = running else {
                return arg_err("batch_norm_1d", "running statistics required in inference");
            };
            Ok((self.batch_norm_eval(x, gamma, beta, mean, var, eps)?, None))
        }
    }

    pub fn batch_norm_train(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats<T>)> {
        let (shape, value, xhat, inv_std, stats) = {
            let nodes = self.nodes();
            let nx = &nodes[x.0];
            let (b, c, n) = self.bn_check(&nodes, x, gamma, beta)?;
            let count = b * n;
            if count == 0 {
                return arg_err("batch_norm_1d", "empty batch");
            }
            let cnt = T::from_f64(count as f64);
            let mut mean = vec![T::zero(); c];
            for bi in 0..b {
                for ci in 0..c {
                    let row = &nx.value[(bi * c + ci) * n..(bi * c + ci + 1) * n];
                    mean[ci] += row.iter().copied().sum::<T>();
                }
            }
            for m in &mut mean {
                *m /= cnt;
            }
            let mut var = vec![T::zero(); c];
            for bi in 0..b {
                for ci in 0..c {
                    let row = &nx.value[(bi * c + ci) * n..(bi * c + ci + 1) * n];
                    var[ci] += row.iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<T>();
                }
            }
            let unbiased: Vec<T> = var
                .iter()
                .map(|&s| {
                    if count > 1 {
                        s / T::from_f64((count - 1) as f64)
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let eps = T::from_f64(eps);
            let inv_std: Vec<T> = var
                .iter()
                .map(|&s| T::one() / (s / cnt + eps).sqrt())
                .collect();
            let (xhat, out) = normalize(&nodes, nx, gamma, beta, &mean, &inv_std, b, c, n);
            (
                nx.shape.clone(),
                out,
                xhat,
                inv_std,
                BatchStats {
                    mean,
                    var: unbiased,
                },
            )
        };
        let rg = self.any_grad(&[x, gamma, beta]);
        let y = self.push(
            shape,
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
            rg,
        )?;
        Ok((y, stats))
    }

    pub fn batch_norm_eval(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let (shape, value, xhat, inv_std) = {
            let nodes = self.nodes();
            let nx = &nodes[x.0];
            let (b, c, n) = self.bn_check(&nodes, x, gamma, beta)?;
            if mean.len() != c || var.len() != c {
                return shape_err("batch_norm_1d", &[c], &[mean.len(), var.len()]);
            }
            let eps = T::from_f64(eps);
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let (xhat, out) = normalize(&nodes, nx, gamma, beta, mean, &inv_std, b, c, n);
            (nx.shape.clone(), out, xhat, inv_std)
        };
        let rg = self.any_grad(&[x, gamma, beta]);
        self.push(
            shape,
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
            rg,
        )
    }

    fn bn_check(
        &self,
        nodes: &[Node<T>],
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(usize, usize, usize)> {
        let sx = &nodes[x.0].shape;
        let Some((b, c, n)) = bn_dims(sx) else {
            return shape_err("batch_norm_1d", sx, &[]);
        };
        for p in [gamma, beta] {
            if nodes[p.0].shape != [c] {
                return shape_err("batch_norm_1d", sx, &nodes[p.0].shape);
            }
        }
        Ok((b, c, n))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (shape, value, xhat, inv_std) = {
            let nodes = self.nodes();
            let nx = &nodes[x.0];
            let Some(&d) = nx.shape.last() else {
                return arg_err("layer_norm", "input must have at least one axis");
            };
            for p in [gamma, beta] {
                if nodes[p.0].shape != [d] {
                    return shape_err("layer_norm", &nx.shape, &nodes[p.0].shape);
                }
            }
            if d == 0 {
                return arg_err("layer_norm", "empty feature axis");
            }
            let dt = T::from_f64(d as f64);
            let eps = T::from_f64(eps);
            let (gv, bv) = (&nodes[gamma.0].value, &nodes[beta.0].value);
            let rows = nx.value.len() / d;
            let mut xhat = Vec::with_capacity(nx.value.len());
            let mut out = Vec::with_capacity(nx.value.len());
            let mut inv_std = Vec::with_capacity(rows);
            for row in nx.value.chunks(d) {
                let mean = row.iter().copied().sum::<T>() / dt;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
                let is = T::one() / (var + eps).sqrt();
                inv_std.push(is);
                for (j, &v) in row.iter().enumerate() {
                    let h = (v - mean) * is;
                    xhat.push(h);
                    out.push(h * gv[j] + bv[j]);
                }
            }
            (nx.shape.clone(), out, xhat, inv_std)
        };
        let rg = self.any_grad(&[x, gamma, beta]);
        self.push(
            shape,
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn normalize<T: Scalar>(
    nodes: &[Node<T>],
    nx: &Node<T>,
    gamma: Var,
    beta: Var,
    mean: &[T],
    inv_std: &[T],
    b: usize,
    c: usize,
    n: usize,
) -> (Vec<T>, Vec<T>) {
    let (gv, bv) = (&nodes[gamma.0].value, &nodes[beta.0].value);
    let mut xhat = vec![T::zero(); nx.value.len()];
    let mut out = vec![T::zero(); nx.value.len()];
    for bi in 0..b {
        for ci in 0..c {
            let r = (bi * c + ci) * n..(bi * c + ci + 1) * n;
            for ((h, o), &v) in xhat[r.clone()]
                .iter_mut()
                .zip(&mut out[r.clone()])
                .zip(&nx.value[r])
            {
                *h = (v - mean[ci]) * inv_std[ci];
                *o = *h * gv[ci] + bv[ci];
            }
        }
    }
    (xhat, out)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn batch_norm_backward<T: Scalar>(
    nodes: &[Node<T>],
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let (b, c, n) = bn_dims(&nodes[x.0].shape).unwrap();
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            let r = (bi * c + ci) * n..(bi * c + ci + 1) * n;
            for (&gv, &h) in g[r.clone()].iter().zip(&xhat[r]) {
                sum_g[ci] += gv;
                sum_gx[ci] += gv * h;
            }
        }
    }
    if acc.wants(gamma) {
        for (d, &s) in acc.slot(gamma).iter_mut().zip(&sum_gx) {
            *d += s;
        }
    }
    if acc.wants(beta) {
        for (d, &s) in acc.slot(beta).iter_mut().zip(&sum_g) {
            *d += s;
        }
    }
    if acc.wants(x) {
        let gv = &nodes[gamma.0].value;
        let cnt = T::from_f64((b * n) as f64);
        let gx = acc.slot(x);
        for bi in 0..b {
            for ci in 0..c {
                let r = (bi * c + ci) * n..(bi * c + ci + 1) * n;
                let k = gv[ci] * inv_std[ci];
                for ((d, &gg), &h) in gx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                    if batch_stats {
                        *d += k * (gg - sum_g[ci] / cnt - h * sum_gx[ci] / cnt);
                    } else {
                        *d += k * gg;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn layer_norm_backward<T: Scalar>(
    nodes: &[Node<T>],
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let d = *nodes[x.0].shape.last().unwrap();
    if acc.wants(gamma) {
        let s = acc.slot(gamma);
        for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
            for ((o, &gv), &h) in s.iter_mut().zip(grow).zip(hrow) {
                *o += gv * h;
            }
        }
    }
    if acc.wants(beta) {
        let s = acc.slot(beta);
        for grow in g.chunks(d) {
            for (o, &gv) in s.iter_mut().zip(grow) {
                *o += gv;
            }
        }
    }
    if acc.wants(x) {
        let gam = &nodes[gamma.0].value;
        let dt = T::from_f64(d as f64);
        let s = acc.slot(x);
        for (((srow, grow), hrow), &is) in s
            .chunks_mut(d)
            .zip(g.chunks(d))
            .zip(xhat.chunks(d))
            .zip(inv_std)
        {
            let mut sum_dh = T::zero();
            let mut sum_dh_h = T::zero();
            for ((&gv, &h), &w) in grow.iter().zip(hrow).zip(gam) {
                let dh = gv * w;
                sum_dh += dh;
                sum_dh_h += dh * h;
            }
            for (((o, &gv), &h), &w) in srow.iter_mut().zip(grow).zip(hrow).zip(gam) {
                let dh = gv * w;
                *o += is * (dh - sum_dh / dt - h * sum_dh_h / dt);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_output_is_standardized_per_channel() {
        let g = Graph::<f64>::training();
        let xs: Vec<f64> = (0..24).map(|v| ((v * 7) % 11) as f64).collect();
        let x = g.constant(xs, &[2, 3, 4]).unwrap();
        let gamma = g.constant(vec![1.0; 3], &[3]).unwrap();
        let beta = g.constant(vec![0.0; 3], &[3]).unwrap();
        let (y, stats) = g.batch_norm_1d(x, gamma, beta, None, 1e-5).unwrap();
        assert!(stats.is_some());
        let v = g.to_vec(y);
        for c in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| v[(b * 3 + c) * 4..(b * 3 + c + 1) * 4].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 8.0;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_mode_requires_running_stats() {
        let g = Graph::<f32>::new();
        let x = g.constant(vec![0.0; 6], &[2, 3]).unwrap();
        let p = g.constant(vec![1.0; 3], &[3]).unwrap();
        assert!(g.batch_norm_1d(x, p, p, None, 1e-5).is_err());
    }
}
