//! Central finite differences, the reference for every backward rule.
//!
//! These helpers only ever evaluate the forward function, so they stay
//! independent of the code paths they are used to check. [`op_cases`] is the
//! per-op conformance catalog run by the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::AttentionParams;
use crate::error::Result;
use crate::graph::{Graph, Var};

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn numerical_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)` in the Euclidean norm; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}


type Builder = Box<dyn Fn(&Graph<f64>, &[Var]) -> Result<Var>>;

/// One gradient-check scenario: inputs become differentiable leaves, `build`
/// maps them to an output tensor, and the check differentiates
/// `mse(output, fixed random target)`.
pub struct GradCase {
    pub name: &'static str,
    pub training: bool,
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    build: Builder,
}

impl GradCase {
    pub fn new(
        name: &'static str,
        training: bool,
        inputs: Vec<(Vec<usize>, Vec<f64>)>,
        build: impl Fn(&Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        GradCase {
            name,
            training,
            inputs,
            build: Box::new(build),
        }
    }

    fn graph(&self) -> Graph<f64> {
        let g = if self.training {
            Graph::training()
        } else {
            Graph::new()
        };
        g.with_finite_check(true)
    }

    fn target(len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7a26_e7);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn loss_with(&self, values: &[Vec<f64>]) -> Result<f64> {
        let g = self.graph();
        let vars = self
            .inputs
            .iter()
            .zip(values)
            .map(|((shape, _), v)| g.constant(v.clone(), shape))
            .collect::<Result<Vec<_>>>()?;
        let y = (self.build)(&g, &vars)?;
        let len = g.value(y).len();
        let target = g.constant(Self::target(len), &g.shape(y))?;
        let loss = g.mse(y, target)?;
        Ok(g.scalar(loss))
    }

    /// Worst relative error between the backward pass and central differences
    /// across all inputs.
    pub fn max_relative_error(&self, h: f64) -> Result<f64> {
        let g = self.graph();
        let vars = self
            .inputs
            .iter()
            .map(|(shape, v)| g.param(v.clone(), shape))
            .collect::<Result<Vec<_>>>()?;
        let y = (self.build)(&g, &vars)?;
        let len = g.value(y).len();
        let target = g.constant(Self::target(len), &g.shape(y))?;
        let loss = g.mse(y, target)?;
        let grads = g.backward(loss)?;

        let base: Vec<Vec<f64>> = self.inputs.iter().map(|(_, v)| v.clone()).collect();
        let mut worst = 0.0f64;
        for (i, var) in vars.iter().enumerate() {
            let analytic = grads
                .get(*var)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; base[i].len()]);
            let mut err = None;
            let numeric = numerical_gradient(
                |x| {
                    let mut vals = base.clone();
                    vals[i] = x.to_vec();
                    match self.loss_with(&vals) {
                        Ok(l) => l,
                        Err(e) => {
                            err = Some(e);
                            f64::NAN
                        }
                    }
                },
                &base[i],
                h,
            );
            if let Some(e) = err {
                return Err(e);
            }
            worst = worst.max(relative_error(&analytic, &numeric));
        }
        Ok(worst)
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn input(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let n = shape.iter().product();
    (shape.to_vec(), rand_vec(rng, n))
}

/// Values bounded away from zero, so ReLU kinks are not straddled.
fn input_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let (s, v) = input(rng, shape);
    let v = v
        .into_iter()
        .map(|x| if x.abs() < 0.05 { x.signum() * 0.05 + x } else { x })
        .collect();
    (s, v)
}

/// Every differentiable op in the engine, on randomized small shapes.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases = Vec::new();

    cases.push(GradCase::new("add_broadcast", false, vec![input(r, &[2, 3, 4]), input(r, &[3, 4])], |g, v| g.add(v[0], v[1])));
    cases.push(GradCase::new("scale", false, vec![input(r, &[5])], |g, v| g.scale(v[0], -1.7)));
    cases.push(GradCase::new("sum", false, vec![input(r, &[2, 3])], |g, v| g.sum(v[0])));
    cases.push(GradCase::new("matmul_shared", false, vec![input(r, &[2, 3, 4]), input(r, &[4, 5])], |g, v| g.matmul(v[0], v[1])));
    cases.push(GradCase::new("matmul_batched", false, vec![input(r, &[3, 2, 4]), input(r, &[3, 4, 2])], |g, v| g.matmul(v[0], v[1])));
    cases.push(GradCase::new("matmul_nt", false, vec![input(r, &[2, 3, 4]), input(r, &[2, 5, 4])], |g, v| g.matmul_nt(v[0], v[1])));
    cases.push(GradCase::new("linear", false, vec![input(r, &[2, 3, 4]), input(r, &[5, 4]), input(r, &[5])], |g, v| g.linear(v[0], v[1], Some(v[2]))));
    cases.push(GradCase::new("pointwise_linear", false, vec![input(r, &[2, 3, 5]), input(r, &[4, 3]), input(r, &[4])], |g, v| g.pointwise_linear(v[0], v[1], Some(v[2]))));
    cases.push(GradCase::new("batch_norm_1d_train", true, vec![input(r, &[3, 4, 5]), input(r, &[4]), input(r, &[4])], |g, v| Ok(g.batch_norm_1d(v[0], v[1], v[2], None, 1e-5)?.0)));
    cases.push(GradCase::new("batch_norm_1d_train_2d", true, vec![input(r, &[6, 3]), input(r, &[3]), input(r, &[3])], |g, v| Ok(g.batch_norm_1d(v[0], v[1], v[2], None, 1e-5)?.0)));
    let (mean, var) = (rand_vec(r, 4), rand_vec(r, 4).into_iter().map(|x| x.abs() + 0.5).collect::<Vec<_>>());
    cases.push(GradCase::new("batch_norm_1d_eval", false, vec![input(r, &[3, 4, 5]), input(r, &[4]), input(r, &[4])], move |g, v| g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)));
    cases.push(GradCase::new("relu", false, vec![input_off_zero(r, &[3, 7])], |g, v| g.relu(v[0])));
    cases.push(GradCase::new("gelu", false, vec![input(r, &[3, 7])], |g, v| g.gelu(v[0])));
    cases.push(GradCase::new("softmax", false, vec![input(r, &[3, 6])], |g, v| g.softmax(v[0])));
    cases.push(GradCase::new("layer_norm", false, vec![input(r, &[2, 3, 6]), input(r, &[6]), input(r, &[6])], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)));
    cases.push(GradCase::new("max_pool", false, vec![input(r, &[2, 5, 3])], |g, v| g.max_pool(v[0], 1)));
    cases.push(GradCase::new("concat", false, vec![input(r, &[2, 3, 2]), input(r, &[2, 1, 2]), input(r, &[2, 4, 2])], |g, v| g.concat(&[v[0], v[1], v[2]], 1)));
    cases.push(GradCase::new("expand", false, vec![input(r, &[2, 3])], |g, v| g.expand(v[0], 1, 4)));
    cases.push(GradCase::new("narrow", false, vec![input(r, &[2, 5, 3])], |g, v| g.narrow(v[0], 1, 1, 3)));
    cases.push(GradCase::new("permute", false, vec![input(r, &[2, 3, 4])], |g, v| g.permute(v[0], &[2, 0, 1])));
    cases.push(GradCase::new("reshape", false, vec![input(r, &[2, 6])], |g, v| g.reshape(v[0], &[3, 4])));
    cases.push(GradCase::new("dropout", true, vec![input(r, &[4, 5])], |g, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        g.dropout(v[0], 0.3, &mut rng)
    }));
    cases.push(GradCase::new("cross_entropy", false, vec![input(r, &[4, 5])], |g, v| g.cross_entropy(v[0], &[0, 4, 2, 2])));
    cases.push(GradCase::new("mse", false, vec![input(r, &[3, 4]), input(r, &[3, 4])], |g, v| g.mse(v[0], v[1])));
    cases.push(GradCase::new("normalize_power", false, vec![input(r, &[2, 5, 2])], |g, v| g.normalize_power(v[0])));
    cases.push(GradCase::new("complex_scale", false, vec![input(r, &[2, 3, 2])], |g, v| g.complex_scale(v[0], 0.6, -0.8)));
    cases.push(GradCase::new(
        "multi_head_self_attention",
        false,
        vec![input(r, &[2, 5, 12]), input(r, &[36, 12]), input(r, &[36]), input(r, &[12, 12]), input(r, &[12])],
        |g, v| {
            let p = AttentionParams { qkv_weight: v[1], qkv_bias: Some(v[2]), proj_weight: v[3], proj_bias: Some(v[4]) };
            g.multi_head_self_attention(v[0], 3, &p)
        },
    ));
    cases
}
