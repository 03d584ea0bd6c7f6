use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Adam optimizer state: per-parameter first/second moment buffers plus the
/// shared step counter. Parameters are identified positionally, so callers
/// must pass them in the same order on every step.
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_config(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_config(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. A `None` gradient is treated as zero.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "adam: {} params but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| {
                    Some((
                        Tensor::zeros(p.shape().to_vec()),
                        Tensor::zeros(p.shape().to_vec()),
                    ))
                })
                .collect();
        } else if self.moments.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: state tracks {} params but {} were passed",
                self.moments.len(),
                params.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);

        for ((param, grad), slot) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            let (m, v) = slot.as_mut().unwrap();
            if !m.same_shape(param) {
                return Err(Error::Shape(format!(
                    "adam: moment shape {:?} does not match parameter shape {:?}",
                    m.shape(),
                    param.shape()
                )));
            }
            if let Some(g) = grad {
                if !g.same_shape(param) {
                    return Err(Error::Shape(format!(
                        "adam: gradient shape {:?} does not match parameter shape {:?}",
                        g.shape(),
                        param.shape()
                    )));
                }
            }
            for i in 0..param.numel() {
                let g = grad.map_or(0.0, |g| g.data()[i]);
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                param.data_mut()[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
