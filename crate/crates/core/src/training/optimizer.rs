use std::collections::BTreeMap;

use pcsc_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

/// Adam with decoupled weight decay. State exists only for parameters that
/// have received a gradient, so frozen parameters never appear in it.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Default for AdamW<T> {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> AdamW<T> {
    pub fn has_state(&self, name: &str) -> bool {
        self.state.contains_key(name)
    }

    pub fn state_names(&self) -> impl Iterator<Item = &str> {
        self.state.keys().map(String::as_str)
    }

    /// One update of every parameter named in `grads`:
    /// `p -= lr * m_hat / (sqrt(v_hat) + eps) + lr * weight_decay * p`.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &BTreeMap<String, Vec<T>>,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one, eps) = (T::one(), T::from_f64(self.eps));
        let (lr_t, decay) = (T::from_f64(lr), T::from_f64(lr * weight_decay));
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name}")))?;
            if p.len() != g.len() {
                return Err(Error::Contract(format!(
                    "{name}: {} gradient values for {} parameters",
                    g.len(),
                    p.len()
                )));
            }
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![T::zero(); g.len()],
                v: vec![T::zero(); g.len()],
                t: 0,
            });
            st.t += 1;
            let c1 = one - b1.powi(st.t);
            let c2 = one - b2.powi(st.t);
            for (((w, &gi), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                *m = b1 * *m + (one - b1) * gi;
                *v = b2 * *v + (one - b2) * gi * gi;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w - lr_t * m_hat / (v_hat.sqrt() + eps) - decay * *w;
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping. `max_norm <= 0` disables clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut BTreeMap<String, Vec<T>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flatten()
        .map(|&g| {
            let g = Scalar::to_f64(g);
            g * g
        })
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = T::from_f64(max_norm / norm);
        for g in grads.values_mut().flatten() {
            *g *= k;
        }
    }
    norm
}
