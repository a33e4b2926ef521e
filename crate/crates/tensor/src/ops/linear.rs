use crate::error::{arg_err, shape_err, Result};
use crate::graph::{GradAcc, Graph, Node, Op, Var};
use crate::scalar::{gemm, Mat, Scalar};
use crate::shape::numel;

impl<T: Scalar> Graph<T> {
    /// Fully connected layer over the last axis: `x[.., in] * w[out, in]^T + b[out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let (nx, nw) = (&nodes[x.0], &nodes[w.0]);
            if nw.shape.len() != 2 || nx.shape.last() != Some(&nw.shape[1]) {
                return shape_err("linear", &nx.shape, &nw.shape);
            }
            let (out_f, in_f) = (nw.shape[0], nw.shape[1]);
            if let Some(b) = b {
                if nodes[b.0].shape != [out_f] {
                    return shape_err("linear", &nw.shape, &nodes[b.0].shape);
                }
            }
            let rows = if in_f == 0 {
                numel(&nx.shape[..nx.shape.len() - 1])
            } else {
                nx.value.len() / in_f
            };
            let mut out = vec![T::zero(); rows * out_f];
            gemm(
                Mat::new(&nx.value, rows, in_f),
                Mat::new(&nw.value, out_f, in_f).t(),
                T::zero(),
                &mut out,
            );
            if let Some(b) = b {
                add_rows(&mut out, &nodes[b.0].value);
            }
            let mut shape = nx.shape.clone();
            *shape.last_mut().unwrap() = out_f;
            (shape, out)
        };
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push(shape, value, Op::Linear { x, w, b }, rg)
    }

    /// Kernel-size-1 convolution over a channel-first batch:
    /// `out[b, o, n] = sum_i w[o, i] * x[b, i, n] + bias[o]`.
    pub fn pointwise_linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let (nx, nw) = (&nodes[x.0], &nodes[w.0]);
            if nx.shape.len() != 3 || nw.shape.len() != 2 || nx.shape[1] != nw.shape[1] {
                return shape_err("pointwise_linear", &nx.shape, &nw.shape);
            }
            let (batch, c_in, n) = (nx.shape[0], nx.shape[1], nx.shape[2]);
            let c_out = nw.shape[0];
            if let Some(b) = b {
                if nodes[b.0].shape != [c_out] {
                    return shape_err("pointwise_linear", &nw.shape, &nodes[b.0].shape);
                }
            }
            let mut out = vec![T::zero(); batch * c_out * n];
            let wm = Mat::new(&nw.value, c_out, c_in);
            if n > 0 {
                for (xb, ob) in nx
                    .value
                    .chunks(c_in * n)
                    .zip(out.chunks_mut(c_out * n))
                {
                    gemm(wm, Mat::new(xb, c_in, n), T::zero(), ob);
                    if let Some(b) = b {
                        for (row, &bias) in ob.chunks_mut(n).zip(&nodes[b.0].value) {
                            for v in row {
                                *v += bias;
                            }
                        }
                    }
                }
            }
            (vec![batch, c_out, n], out)
        };
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push(shape, value, Op::PointwiseLinear { x, w, b }, rg)
    }

    /// Batched `a * b`: `a[.., m, k]` times `b[k, n]` (shared) or `b[.., k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// Batched `a * b^T` with `b[.., n, k]`.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (shape, value, shared_b) = {
            let nodes = self.nodes();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            let (ra, rb) = (na.shape.len(), nb.shape.len());
            if ra < 2 || rb < 2 {
                return arg_err("matmul", "operands need at least two axes");
            }
            let (m, k) = (na.shape[ra - 2], na.shape[ra - 1]);
            let (kb, n) = if trans_b {
                (nb.shape[rb - 1], nb.shape[rb - 2])
            } else {
                (nb.shape[rb - 2], nb.shape[rb - 1])
            };
            let shared = rb == 2;
            if k != kb || (!shared && na.shape[..ra - 2] != nb.shape[..rb - 2]) {
                return shape_err("matmul", &na.shape, &nb.shape);
            }
            let groups = numel(&na.shape[..ra - 2]);
            let mut out = vec![T::zero(); groups * m * n];
            if m * n > 0 {
                for g in 0..groups {
                    let am = Mat::new(&na.value[g * m * k..], m, k);
                    let boff = if shared { 0 } else { g * k * n };
                    let bm = if trans_b {
                        Mat::new(&nb.value[boff..], n, k).t()
                    } else {
                        Mat::new(&nb.value[boff..], k, n)
                    };
                    gemm(am, bm, T::zero(), &mut out[g * m * n..(g + 1) * m * n]);
                }
            }
            let mut shape = na.shape.clone();
            shape[ra - 1] = n;
            (shape, out, shared)
        };
        let rg = self.any_grad(&[a, b]);
        self.push(
            shape,
            value,
            Op::MatMul {
                a,
                b,
                trans_b,
                shared_b,
            },
            rg,
        )
    }
}

fn add_rows<T: Scalar>(out: &mut [T], bias: &[T]) {
    if bias.is_empty() {
        return;
    }
    for row in out.chunks_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn column_sums_into<T: Scalar>(dst: &mut [T], g: &[T]) {
    let cols = dst.len();
    if cols == 0 {
        return;
    }
    for row in g.chunks(cols) {
        for (d, &v) in dst.iter_mut().zip(row) {
            *d += v;
        }
    }
}

pub(super) fn linear_backward<T: Scalar>(
    nodes: &[Node<T>],
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let (out_f, in_f) = (nodes[w.0].shape[0], nodes[w.0].shape[1]);
    let rows = if out_f == 0 { 0 } else { g.len() / out_f };
    let gm = Mat::new(g, rows, out_f);
    if acc.wants(x) && in_f > 0 {
        let wv = &nodes[w.0].value;
        gemm(gm, Mat::new(wv, out_f, in_f), T::one(), acc.slot(x));
    }
    if acc.wants(w) {
        let xv = &nodes[x.0].value;
        gemm(gm.t(), Mat::new(xv, rows, in_f), T::one(), acc.slot(w));
    }
    if let Some(b) = b {
        if acc.wants(b) {
            column_sums_into(acc.slot(b), g);
        }
    }
}

pub(super) fn pointwise_linear_backward<T: Scalar>(
    nodes: &[Node<T>],
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let xs = &nodes[x.0].shape;
    let (c_in, n) = (xs[1], xs[2]);
    let c_out = nodes[w.0].shape[0];
    if n == 0 {
        return;
    }
    if acc.wants(x) {
        let wm = Mat::new(&nodes[w.0].value, c_out, c_in);
        let gx = acc.slot(x);
        for (gb, gxb) in g.chunks(c_out * n).zip(gx.chunks_mut(c_in * n)) {
            gemm(wm.t(), Mat::new(gb, c_out, n), T::one(), gxb);
        }
    }
    if acc.wants(w) {
        let xv = &nodes[x.0].value;
        let gw = acc.slot(w);
        for (gb, xb) in g.chunks(c_out * n).zip(xv.chunks(c_in * n)) {
            gemm(
                Mat::new(gb, c_out, n),
                Mat::new(xb, c_in, n).t(),
                T::one(),
                gw,
            );
        }
    }
    if let Some(b) = b {
        if acc.wants(b) {
            let gbias = acc.slot(b);
            for gb in g.chunks(c_out * n) {
                for (d, row) in gbias.iter_mut().zip(gb.chunks(n)) {
                    *d += row.iter().copied().sum::<T>();
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn matmul_backward<T: Scalar>(
    nodes: &[Node<T>],
    out: &Node<T>,
    a: Var,
    b: Var,
    trans_b: bool,
    shared_b: bool,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let sa = &nodes[a.0].shape;
    let ra = sa.len();
    let (m, k) = (sa[ra - 2], sa[ra - 1]);
    let n = *out.shape.last().unwrap();
    let groups = numel(&sa[..ra - 2]);
    let av = &nodes[a.0].value;
    let bv = &nodes[b.0].value;
    let bmat = |gi: usize| {
        let off = if shared_b { 0 } else { gi * k * n };
        if trans_b {
            Mat::new(&bv[off..], n, k).t()
        } else {
            Mat::new(&bv[off..], k, n)
        }
    };
    if m * n * k == 0 {
        return;
    }
    if acc.wants(a) {
        let ga = acc.slot(a);
        for gi in 0..groups {
            let gm = Mat::new(&g[gi * m * n..], m, n);
            gemm(gm, bmat(gi).t(), T::one(), &mut ga[gi * m * k..(gi + 1) * m * k]);
        }
    }
    if acc.wants(b) {
        let gb = acc.slot(b);
        for gi in 0..groups {
            let gm = Mat::new(&g[gi * m * n..], m, n);
            let am = Mat::new(&av[gi * m * k..], m, k);
            let off = if shared_b { 0 } else { gi * k * n };
            let dst = &mut gb[off..off + k * n];
            if trans_b {
                // d(b^T) = a^T g, so d(b) = g^T a, stored n x k.
                gemm(gm.t(), am, T::one(), dst);
            } else {
                gemm(am.t(), gm, T::one(), dst);
            }
        }
    }
}
