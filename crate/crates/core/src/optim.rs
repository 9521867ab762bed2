use crate::error::{Error, Result};
use crate::params::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Bias-corrected Adam update of every parameter, then zero all grads.
    pub fn step(&self, store: &mut ParameterStore) -> Result<()> {
        if self.lr.is_nan() || self.lr < 0.0 {
            return Err(Error::Domain(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        for (_, p) in store.iter_mut() {
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let g = p.grad.data();
            let m = p.adam_m.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = p.adam_v.data_mut();
            for (vi, &gi) in v.iter_mut().zip(p.grad.data()) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            if self.lr > 0.0 {
                let (m, v) = (p.adam_m.data(), p.adam_v.data());
                for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                    let m_hat = mi / bc1;
                    let v_hat = vi / bc2;
                    *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
            p.zero_grad();
        }
        Ok(())
    }
}
