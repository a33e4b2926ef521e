use crate::error::{arg_err, shape_err, Result};
use crate::graph::{GradAcc, Graph, Node, Op, Var};
use crate::scalar::Scalar;

impl<T: Scalar> Graph<T> {
    /// Mean softmax cross-entropy of `logits[B, C]` against class indices.
    pub fn cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = {
            let nodes = self.nodes();
            let nl = &nodes[logits.0];
            let [b, c] = nl.shape[..] else {
                return shape_err("cross_entropy", &nl.shape, &[labels.len()]);
            };
            if b != labels.len() {
                return shape_err("cross_entropy", &nl.shape, &[labels.len()]);
            }
            if b == 0 {
                return arg_err("cross_entropy", "empty batch");
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
                return arg_err("cross_entropy", format!("label {bad} out of range for {c} classes"));
            }
            let mut probs = Vec::with_capacity(b * c);
            let mut total = T::zero();
            for (row, &label) in nl.value.chunks(c).zip(labels) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
                let lse = max + sum.ln();
                total += lse - row[label];
                probs.extend(row.iter().map(|&v| (v - lse).exp()));
            }
            (total / T::from_f64(b as f64), probs)
        };
        let rg = self.any_grad(&[logits]);
        self.push(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Mean squared error over all elements.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var> {
        let loss = {
            let nodes = self.nodes();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            if na.shape != nb.shape {
                return shape_err("mse", &na.shape, &nb.shape);
            }
            if na.value.is_empty() {
                return arg_err("mse", "empty operands");
            }
            let s: T = na
                .value
                .iter()
                .zip(&nb.value)
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            s / T::from_f64(na.value.len() as f64)
        };
        let rg = self.any_grad(&[a, b]);
        self.push(Vec::new(), vec![loss], Op::Mse { a, b }, rg)
    }
}

pub(super) fn cross_entropy_backward<T: Scalar>(
    logits: Var,
    labels: &[usize],
    probs: &[T],
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if !acc.wants(logits) {
        return;
    }
    let b = labels.len();
    let c = probs.len() / b;
    let k = g[0] / T::from_f64(b as f64);
    let s = acc.slot(logits);
    for (i, &label) in labels.iter().enumerate() {
        for j in 0..c {
            let onehot = if j == label { T::one() } else { T::zero() };
            s[i * c + j] += k * (probs[i * c + j] - onehot);
        }
    }
}

pub(super) fn mse_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    b: Var,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
    let k = g[0] * T::from_f64(2.0 / va.len() as f64);
    if acc.wants(a) {
        let s = acc.slot(a);
        for ((d, &x), &y) in s.iter_mut().zip(va).zip(vb) {
            *d += k * (x - y);
        }
    }
    if acc.wants(b) {
        let s = acc.slot(b);
        for ((d, &x), &y) in s.iter_mut().zip(va).zip(vb) {
            *d -= k * (x - y);
        }
    }
}
