use super::ParamStore;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer with weight decay applied to the weights
/// directly rather than folded into the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub bias_correction: bool,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 1e-4,
            bias_correction: true,
        }
    }
}

impl AdamW {
    /// One update of every parameter from its accumulated gradient.
    /// Gradients are left in place; the caller zeroes them.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        if let Some((name, _)) = store.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGradient(name.to_string()));
        }
        let t = store.bump_step() as i32;
        let (b1, b2) = self.betas;
        let (c1, c2) = if self.bias_correction {
            (1.0 - b1.powi(t), 1.0 - b2.powi(t))
        } else {
            (1.0, 1.0)
        };
        let decay = 1.0 - self.lr * self.weight_decay;
        for (_, p) in store.iter_mut() {
            let grad = p.grad.as_ref().expect("checked above");
            let values = p.value.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for (i, &g) in grad.data().iter().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] = values[i] * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
