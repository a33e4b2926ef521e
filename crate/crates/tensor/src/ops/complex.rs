//! Ops over interleaved complex data: the last axis holds (re, im) pairs.

use crate::error::{arg_err, Result};
use crate::graph::{GradAcc, Graph, Node, Op, Var};
use crate::scalar::Scalar;

impl<T: Scalar> Graph<T> {
    /// Scales each frame (index along the leading axis) by one real factor so
    /// that its mean complex power, `sum(re^2 + im^2) / n_symbols`, is 1.
    ///
    /// The factor is part of the graph: gradients flow through it.
    pub fn normalize_power(&self, x: Var) -> Result<Var> {
        let (shape, value, scale, sumsq) = {
            let nodes = self.nodes();
            let nx = &nodes[x.0];
            if nx.shape.len() < 2 || nx.shape.last() != Some(&2) || nx.value.is_empty() {
                return arg_err(
                    "normalize_power",
                    format!("expected a non-empty [B, .., 2] frame, got {:?}", nx.shape),
                );
            }
            let frames = nx.shape[0];
            let per = nx.value.len() / frames;
            let n_sym = T::from_f64((per / 2) as f64);
            let mut out = Vec::with_capacity(nx.value.len());
            let mut scale = Vec::with_capacity(frames);
            let mut sumsq = Vec::with_capacity(frames);
            for frame in nx.value.chunks(per) {
                let s: T = frame.iter().map(|&v| v * v).sum();
                if s <= T::zero() {
                    return arg_err("normalize_power", "all-zero frame has no defined power");
                }
                let k = (n_sym / s).sqrt();
                out.extend(frame.iter().map(|&v| v * k));
                scale.push(k);
                sumsq.push(s);
            }
            (nx.shape.clone(), out, scale, sumsq)
        };
        let rg = self.any_grad(&[x]);
        self.push(shape, value, Op::NormalizePower { x, scale, sumsq }, rg)
    }

    /// Multiplies every complex sample by the constant `re + i*im`.
    pub fn complex_scale(&self, x: Var, re: T, im: T) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let nx = &nodes[x.0];
            if nx.shape.last() != Some(&2) {
                return arg_err(
                    "complex_scale",
                    format!("last axis must hold (re, im) pairs, got {:?}", nx.shape),
                );
            }
            let mut out = Vec::with_capacity(nx.value.len());
            for p in nx.value.chunks(2) {
                out.push(re * p[0] - im * p[1]);
                out.push(im * p[0] + re * p[1]);
            }
            (nx.shape.clone(), out)
        };
        let rg = self.any_grad(&[x]);
        self.push(shape, value, Op::ComplexScale { x, re, im }, rg)
    }
}

pub(super) fn normalize_power_backward<T: Scalar>(
    nodes: &[Node<T>],
    x: Var,
    scale: &[T],
    sumsq: &[T],
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if !acc.wants(x) {
        return;
    }
    let xv = &nodes[x.0].value;
    let per = xv.len() / scale.len();
    let s = acc.slot(x);
    // y = k x with k = sqrt(n / S), S = sum x^2:
    // dL/dx = k g - (k / S) x <g, x>
    for (f, (&k, &ss)) in scale.iter().zip(sumsq).enumerate() {
        let r = f * per..(f + 1) * per;
        let dot: T = g[r.clone()].iter().zip(&xv[r.clone()]).map(|(&a, &b)| a * b).sum();
        let c = k / ss * dot;
        for ((d, &gv), &xx) in s[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xv[r]) {
            *d += k * gv - c * xx;
        }
    }
}

pub(super) fn complex_scale_backward<T: Scalar>(
    x: Var,
    re: T,
    im: T,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if !acc.wants(x) {
        return;
    }
    // Adjoint of multiplication by h is multiplication by conj(h).
    let s = acc.slot(x);
    for (d, p) in s.chunks_mut(2).zip(g.chunks(2)) {
        d[0] += re * p[0] + im * p[1];
        d[1] += re * p[1] - im * p[0];
    }
}
