mod complex;
mod elementwise;
mod layout;
mod linear;
mod loss;
mod norm;

pub use norm::BatchStats;

use crate::graph::{GradAcc, Node, Op};
use crate::scalar::Scalar;

pub(crate) fn backward<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    match &node.op {
        Op::Leaf => {}
        Op::Add { a, b } => elementwise::add_backward(nodes, *a, *b, g, acc),
        Op::Scale { x, c } => elementwise::scale_backward(*x, *c, g, acc),
        Op::SumAll { x } => elementwise::sum_backward(nodes, *x, g, acc),
        Op::Relu { x } => elementwise::relu_backward(nodes, *x, g, acc),
        Op::Gelu { x } => elementwise::gelu_backward(nodes, *x, g, acc),
        Op::Softmax { x } => elementwise::softmax_backward(node, *x, g, acc),
        Op::Dropout { x, mask } => elementwise::dropout_backward(*x, mask, g, acc),
        Op::Linear { x, w, b } => linear::linear_backward(nodes, *x, *w, *b, g, acc),
        Op::PointwiseLinear { x, w, b } => {
            linear::pointwise_linear_backward(nodes, *x, *w, *b, g, acc)
        }
        Op::MatMul {
            a,
            b,
            trans_b,
            shared_b,
        } => linear::matmul_backward(nodes, node, *a, *b, *trans_b, *shared_b, g, acc),
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => norm::batch_norm_backward(
            nodes,
            *x,
            *gamma,
            *beta,
            xhat,
            inv_std,
            *batch_stats,
            g,
            acc,
        ),
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => norm::layer_norm_backward(nodes, *x, *gamma, *beta, xhat, inv_std, g, acc),
        Op::MaxPool { x, argmax } => layout::max_pool_backward(*x, argmax, g, acc),
        Op::Concat { xs, axis } => layout::concat_backward(nodes, node, xs, *axis, g, acc),
        Op::Expand { x, axis } => layout::expand_backward(node, *x, *axis, g, acc),
        Op::Reshape { x } => layout::reshape_backward(*x, g, acc),
        Op::Permute { x, perm } => layout::permute_backward(node, *x, perm, g, acc),
        Op::Narrow { x, axis, start } => {
            layout::narrow_backward(nodes, node, *x, *axis, *start, g, acc)
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => loss::cross_entropy_backward(*logits, labels, probs, g, acc),
        Op::Mse { a, b } => loss::mse_backward(nodes, *a, *b, g, acc),
        Op::NormalizePower { x, scale, sumsq } => {
            complex::normalize_power_backward(nodes, *x, scale, sumsq, g, acc)
        }
        Op::ComplexScale { x, re, im } => complex::complex_scale_backward(*x, *re, *im, g, acc),
    }
}
