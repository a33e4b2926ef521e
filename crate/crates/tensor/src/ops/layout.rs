use crate::error::{arg_err, shape_err, Result};
use crate::graph::{GradAcc, Graph, Node, Op, Var};
use crate::scalar::Scalar;
use crate::shape::{inverse_perm, numel, permute_copy, split_at_axis};

impl<T: Scalar> Graph<T> {
    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = {
            let nodes = self.nodes();
            let nx = &nodes[x.0];
            if numel(shape) != nx.value.len() {
                return shape_err("reshape", &nx.shape, shape);
            }
            nx.value.clone()
        };
        let rg = self.any_grad(&[x]);
        self.push(shape.to_vec(), value, Op::Reshape { x }, rg)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let nx = &nodes[x.0];
            let mut seen = vec![false; nx.shape.len()];
            if perm.len() != nx.shape.len()
                || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true))
            {
                return shape_err("permute", &nx.shape, perm);
            }
            let shape: Vec<usize> = perm.iter().map(|&p| nx.shape[p]).collect();
            (shape, permute_copy(&nx.value, &nx.shape, perm))
        };
        let rg = self.any_grad(&[x]);
        self.push(
            shape,
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        )
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let Some(first) = xs.first() else {
                return arg_err("concat", "no inputs");
            };
            let base = &nodes[first.0].shape;
            if axis >= base.len() {
                return arg_err("concat", format!("axis {axis} out of range for {base:?}"));
            }
            let mut total = 0;
            for v in xs {
                let s = &nodes[v.0].shape;
                if s.len() != base.len()
                    || s.iter()
                        .zip(base)
                        .enumerate()
                        .any(|(i, (a, b))| i != axis && a != b)
                {
                    return shape_err("concat", base, s);
                }
                total += s[axis];
            }
            let (outer, _, inner) = split_at_axis(base, axis);
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for v in xs {
                    let nv = &nodes[v.0];
                    let len = nv.shape[axis] * inner;
                    out.extend_from_slice(&nv.value[o * len..(o + 1) * len]);
                }
            }
            let mut shape = base.clone();
            shape[axis] = total;
            (shape, out)
        };
        let rg = self.any_grad(xs);
        self.push(
            shape,
            value,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Slice `start..start + len` of `axis`.
    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let nx = &nodes[x.0];
            if axis >= nx.shape.len() || start + len > nx.shape[axis] {
                return arg_err(
                    "narrow",
                    format!("{start}..{} out of range on axis {axis} of {:?}", start + len, nx.shape),
                );
            }
            let (outer, full, inner) = split_at_axis(&nx.shape, axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * full + start) * inner;
                out.extend_from_slice(&nx.value[base..base + len * inner]);
            }
            let mut shape = nx.shape.clone();
            shape[axis] = len;
            (shape, out)
        };
        let rg = self.any_grad(&[x]);
        self.push(shape, value, Op::Narrow { x, axis, start }, rg)
    }

    /// Inserts a new axis of extent `n` at position `axis`, repeating `x`.
    pub fn expand(&self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let nx = &nodes[x.0];
            if axis > nx.shape.len() {
                return arg_err("expand", format!("axis {axis} out of range for {:?}", nx.shape));
            }
            let outer = numel(&nx.shape[..axis]);
            let inner = numel(&nx.shape[axis..]);
            let mut out = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                let src = &nx.value[o * inner..(o + 1) * inner];
                for _ in 0..n {
                    out.extend_from_slice(src);
                }
            }
            let mut shape = nx.shape.clone();
            shape.insert(axis, n);
            (shape, out)
        };
        let rg = self.any_grad(&[x]);
        self.push(shape, value, Op::Expand { x, axis }, rg)
    }

    /// Maximum over `axis`, which is removed from the shape. Ties resolve to
    /// the lowest index, and only that position receives gradient.
    pub fn max_pool(&self, x: Var, axis: usize) -> Result<Var> {
        let (shape, value, argmax) = {
            let nodes = self.nodes();
            let nx = &nodes[x.0];
            if axis >= nx.shape.len() || nx.shape[axis] == 0 {
                return arg_err("max_pool", format!("cannot pool axis {axis} of {:?}", nx.shape));
            }
            let (outer, len, inner) = split_at_axis(&nx.shape, axis);
            let mut out = Vec::with_capacity(outer * inner);
            let mut argmax = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                let base = o * len * inner;
                for i in 0..inner {
                    let mut best = base + i;
                    for l in 1..len {
                        let idx = base + l * inner + i;
                        if nx.value[idx] > nx.value[best] {
                            best = idx;
                        }
                    }
                    out.push(nx.value[best]);
                    argmax.push(best);
                }
            }
            let mut shape = nx.shape.clone();
            shape.remove(axis);
            (shape, out, argmax)
        };
        let rg = self.any_grad(&[x]);
        self.push(shape, value, Op::MaxPool { x, argmax }, rg)
    }
}

pub(super) fn reshape_backward<T: Scalar>(x: Var, g: &[T], acc: &mut GradAcc<'_, T>) {
    if acc.wants(x) {
        acc.add(x, g.to_vec());
    }
}

pub(super) fn permute_backward<T: Scalar>(
    out: &Node<T>,
    x: Var,
    perm: &[usize],
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if acc.wants(x) {
        acc.add(x, permute_copy(g, &out.shape, &inverse_perm(perm)));
    }
}

pub(super) fn concat_backward<T: Scalar>(
    nodes: &[Node<T>],
    out: &Node<T>,
    xs: &[Var],
    axis: usize,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let (outer, total, inner) = split_at_axis(&out.shape, axis);
    let mut offset = 0;
    for &v in xs {
        let len = nodes[v.0].shape[axis];
        if acc.wants(v) {
            let s = acc.slot(v);
            for o in 0..outer {
                let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                for (d, &gv) in s[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                    *d += gv;
                }
            }
        }
        offset += len;
    }
}

pub(super) fn narrow_backward<T: Scalar>(
    nodes: &[Node<T>],
    out: &Node<T>,
    x: Var,
    axis: usize,
    start: usize,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if !acc.wants(x) {
        return;
    }
    let (outer, full, inner) = split_at_axis(&nodes[x.0].shape, axis);
    let len = out.shape[axis];
    let s = acc.slot(x);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        for (d, &gv) in s[base..base + len * inner]
            .iter_mut()
            .zip(&g[o * len * inner..(o + 1) * len * inner])
        {
            *d += gv;
        }
    }
}

pub(super) fn expand_backward<T: Scalar>(
    out: &Node<T>,
    x: Var,
    axis: usize,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if !acc.wants(x) {
        return;
    }
    let (outer, n, inner_rest) = split_at_axis(&out.shape, axis);
    let inner = inner_rest;
    let s = acc.slot(x);
    for o in 0..outer {
        let dst = &mut s[o * inner..(o + 1) * inner];
        for r in 0..n {
            let src = &g[(o * n + r) * inner..(o * n + r + 1) * inner];
            for (d, &gv) in dst.iter_mut().zip(src) {
                *d += gv;
            }
        }
    }
}

pub(super) fn max_pool_backward<T: Scalar>(
    x: Var,
    argmax: &[usize],
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if acc.wants(x) {
        let s = acc.slot(x);
        for (&idx, &gv) in argmax.iter().zip(g) {
            s[idx] += gv;
        }
    }
}
