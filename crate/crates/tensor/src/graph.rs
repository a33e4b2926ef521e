//! Define-by-run tape.
//!
//! Every op appends a node holding its output value and whatever it needs for
//! the backward pass. Nodes are appended in dependency order, so walking the
//! tape backwards from the loss is a reverse topological traversal.

use std::cell::{Ref, RefCell};

use crate::error::{arg_err, shape_err, Result, TensorError};
use crate::scalar::Scalar;
use crate::shape::numel;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    SumAll {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    PointwiseLinear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        shared_b: bool,
    },
    Relu {
        x: Var,
    },
    Gelu {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Expand {
        x: Var,
        axis: usize,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Mse {
        a: Var,
        b: Var,
    },
    NormalizePower {
        x: Var,
        scale: Vec<T>,
        sumsq: Vec<T>,
    },
    ComplexScale {
        x: Var,
        re: T,
        im: T,
    },
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::SumAll { .. } => "sum",
            Op::Linear { .. } => "linear",
            Op::PointwiseLinear { .. } => "pointwise_linear",
            Op::MatMul { .. } => "matmul",
            Op::Relu { .. } => "relu",
            Op::Gelu { .. } => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::Dropout { .. } => "dropout",
            Op::BatchNorm { .. } => "batch_norm_1d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MaxPool { .. } => "max_pool",
            Op::Concat { .. } => "concat",
            Op::Expand { .. } => "expand",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Narrow { .. } => "narrow",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse { .. } => "mse",
            Op::NormalizePower { .. } => "normalize_power",
            Op::ComplexScale { .. } => "complex_scale",
        }
    }
}

pub(crate) struct Node<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Gradient sink handed to each op's backward rule.
pub(crate) struct GradAcc<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> GradAcc<'_, T> {
    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Zero-initialized (on first touch) accumulation buffer for `v`.
    pub fn slot(&mut self, v: Var) -> &mut [T] {
        let len = self.nodes[v.0].value.len();
        self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    /// Adds `grad` into the buffer of `v`, taking ownership when it is the
    /// first contribution.
    pub fn add(&mut self, v: Var, grad: Vec<T>) {
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (e, g) in existing.iter_mut().zip(grad) {
                    *e += g;
                }
            }
            slot @ None => *slot = Some(grad),
        }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    /// Gradient of the loss with respect to a `requires_grad` leaf, or `None`
    /// when the leaf is not reachable from the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// A tape of tensor operations.
///
/// `Graph` is single-threaded; build one per forward pass.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    training: bool,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// Inference-mode graph.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            training: false,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Training-mode graph: batch norm uses batch statistics and dropout is
    /// active.
    pub fn training() -> Self {
        Graph {
            training: true,
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Toggles the NaN/Inf tripwire (on by default in debug builds).
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn param(&self, values: Vec<T>, shape: &[usize]) -> Result<Var> {
        self.leaf(values, shape, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, values: Vec<T>, shape: &[usize]) -> Result<Var> {
        self.leaf(values, shape, false)
    }

    fn leaf(&self, values: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Var> {
        if values.len() != numel(shape) {
            return shape_err("leaf", &[values.len()], shape);
        }
        self.push(shape.to_vec(), values, Op::Leaf, requires_grad)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn value(&self, v: Var) -> Ref<'_, [T]> {
        Ref::map(self.nodes.borrow(), |n| n[v.0].value.as_slice())
    }

    pub fn to_vec(&self, v: Var) -> Vec<T> {
        self.value(v).to_vec()
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node<T>>> {
        self.nodes.borrow()
    }

    pub(crate) fn push(
        &self,
        shape: Vec<usize>,
        value: Vec<T>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Result<Var> {
        debug_assert_eq!(value.len(), numel(&shape));
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Whether any of `vars` requires a gradient.
    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Returns the gradient of every `requires_grad` leaf reachable from
    /// `loss`. Leaves created with [`Graph::constant`] never get a buffer.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if loss.0 >= nodes.len() {
            return arg_err("backward", "unknown variable");
        }
        if nodes[loss.0].value.len() != 1 {
            return arg_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", nodes[loss.0].shape),
            );
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        if !nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = GradAcc {
                nodes: &nodes,
                grads: &mut grads,
            };
            crate::ops::backward(&nodes, node, &g, &mut acc);
        }
        Ok(Gradients { grads })
    }
}
