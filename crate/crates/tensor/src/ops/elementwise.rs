use rand::Rng;

use crate::error::{arg_err, shape_err, Result};
use crate::graph::{GradAcc, Graph, Node, Op, Var};
use crate::scalar::Scalar;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

impl<T: Scalar> Graph<T> {
    /// `a + b`, where `b`'s shape is a suffix of `a`'s shape and is broadcast
    /// over the leading axes.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            let ra = na.shape.len();
            let rb = nb.shape.len();
            if rb > ra || na.shape[ra - rb..] != nb.shape[..] {
                return shape_err("add", &na.shape, &nb.shape);
            }
            let blen = nb.value.len();
            let mut out = na.value.clone();
            if blen > 0 {
                for chunk in out.chunks_mut(blen) {
                    for (o, &v) in chunk.iter_mut().zip(&nb.value) {
                        *o += v;
                    }
                }
            }
            (na.shape.clone(), out)
        };
        let rg = self.any_grad(&[a, b]);
        self.push(shape, value, Op::Add { a, b }, rg)
    }

    /// `c * x` for a constant `c`.
    pub fn scale(&self, x: Var, c: T) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let n = &nodes[x.0];
            (n.shape.clone(), n.value.iter().map(|&v| v * c).collect())
        };
        let rg = self.any_grad(&[x]);
        self.push(shape, value, Op::Scale { x, c }, rg)
    }

    /// Sum of all elements, as a scalar tensor of shape `[]`.
    pub fn sum(&self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum::<T>();
        let rg = self.any_grad(&[x]);
        self.push(Vec::new(), vec![s], Op::SumAll { x }, rg)
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let n = &nodes[x.0];
            let z = T::zero();
            (
                n.shape.clone(),
                n.value.iter().map(|&v| if v > z { v } else { z }).collect(),
            )
        };
        let rg = self.any_grad(&[x]);
        self.push(shape, value, Op::Relu { x }, rg)
    }

    /// GELU, tanh approximation:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&self, x: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let n = &nodes[x.0];
            (n.shape.clone(), n.value.iter().map(|&v| gelu(v)).collect())
        };
        let rg = self.any_grad(&[x]);
        self.push(shape, value, Op::Gelu { x }, rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let n = &nodes[x.0];
            let Some(&last) = n.shape.last() else {
                return arg_err("softmax", "input must have at least one axis");
            };
            let mut out = n.value.clone();
            if last > 0 {
                for row in out.chunks_mut(last) {
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= total;
                    }
                }
            }
            (n.shape.clone(), out)
        };
        let rg = self.any_grad(&[x]);
        self.push(shape, value, Op::Softmax { x }, rg)
    }

    /// Inverted dropout. Identity in inference mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return arg_err("dropout", format!("probability {p} outside [0, 1)"));
        }
        if !self.is_training() || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let (shape, value, mask) = {
            let nodes = self.nodes();
            let n = &nodes[x.0];
            let mask: Vec<T> = (0..n.value.len())
                .map(|_| {
                    if rng.random::<f64>() < p {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect();
            let value = n.value.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (n.shape.clone(), value, mask)
        };
        let rg = self.any_grad(&[x]);
        self.push(shape, value, Op::Dropout { x, mask }, rg)
    }
}

fn gelu<T: Scalar>(v: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(SQRT_2_OVER_PI);
    let a = T::from_f64(GELU_CUBIC);
    half * v * (T::one() + (c * (v + a * v * v * v)).tanh())
}

fn gelu_grad<T: Scalar>(v: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(SQRT_2_OVER_PI);
    let a = T::from_f64(GELU_CUBIC);
    let three = T::from_f64(3.0);
    let t = (c * (v + a * v * v * v)).tanh();
    half * (T::one() + t) + half * v * (T::one() - t * t) * c * (T::one() + three * a * v * v)
}

pub(super) fn add_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    b: Var,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if acc.wants(a) {
        let s = acc.slot(a);
        for (o, &v) in s.iter_mut().zip(g) {
            *o += v;
        }
    }
    if acc.wants(b) {
        let blen = nodes[b.0].value.len();
        let s = acc.slot(b);
        if blen > 0 {
            for chunk in g.chunks(blen) {
                for (o, &v) in s.iter_mut().zip(chunk) {
                    *o += v;
                }
            }
        }
    }
}

pub(super) fn scale_backward<T: Scalar>(x: Var, c: T, g: &[T], acc: &mut GradAcc<'_, T>) {
    if acc.wants(x) {
        acc.add(x, g.iter().map(|&v| v * c).collect());
    }
}

pub(super) fn sum_backward<T: Scalar>(
    nodes: &[Node<T>],
    x: Var,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if acc.wants(x) {
        let n = nodes[x.0].value.len();
        for o in acc.slot(x).iter_mut().take(n) {
            *o += g[0];
        }
    }
}

pub(super) fn relu_backward<T: Scalar>(
    nodes: &[Node<T>],
    x: Var,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if acc.wants(x) {
        let xv = &nodes[x.0].value;
        let z = T::zero();
        let s = acc.slot(x);
        for ((o, &gv), &v) in s.iter_mut().zip(g).zip(xv) {
            if v > z {
                *o += gv;
            }
        }
    }
}

pub(super) fn gelu_backward<T: Scalar>(
    nodes: &[Node<T>],
    x: Var,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if acc.wants(x) {
        let xv = &nodes[x.0].value;
        let s = acc.slot(x);
        for ((o, &gv), &v) in s.iter_mut().zip(g).zip(xv) {
            *o += gv * gelu_grad(v);
        }
    }
}

pub(super) fn softmax_backward<T: Scalar>(
    out: &Node<T>,
    x: Var,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if !acc.wants(x) {
        return;
    }
    let last = *out.shape.last().unwrap();
    if last == 0 {
        return;
    }
    let s = acc.slot(x);
    for ((srow, grow), yrow) in s
        .chunks_mut(last)
        .zip(g.chunks(last))
        .zip(out.value.chunks(last))
    {
        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
        for ((o, &gv), &y) in srow.iter_mut().zip(grow).zip(yrow) {
            *o += y * (gv - dot);
        }
    }
}

pub(super) fn dropout_backward<T: Scalar>(
    x: Var,
    mask: &[T],
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if acc.wants(x) {
        acc.add(x, g.iter().zip(mask).map(|(&a, &m)| a * m).collect());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_matches_reference_values() {
        // Reference values of the tanh approximation.
        assert!((gelu(1.0f64) - 0.841_191_990_607_477_2).abs() < 1e-12);
        assert!((gelu(-1.0f64) + 0.158_808_009_392_522_8).abs() < 1e-12);
        assert_eq!(gelu(0.0f64), 0.0);
    }

    #[test]
    fn add_rejects_non_suffix_broadcast() {
        let g = Graph::<f64>::new();
        let a = g.constant(vec![0.0; 6], &[2, 3]).unwrap();
        let b = g.constant(vec![0.0; 2], &[2]).unwrap();
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let g = Graph::<f64>::new();
        let x = g
            .constant(vec![1.0, 2.0, 3.0, -5.0, 0.0, 800.0], &[2, 3])
            .unwrap();
        let y = g.softmax(x).unwrap();
        let v = g.to_vec(y);
        assert!((v[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((v[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((v[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let g = Graph::<f32>::new();
        let x = g.constant(vec![1.0; 8], &[8]).unwrap();
        let mut rng = rand::rng();
        assert_eq!(g.dropout(x, 0.5, &mut rng).unwrap(), x);
    }
}
