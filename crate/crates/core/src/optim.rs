//! Adam with Lookahead slow weights.
//!
//! Two parameter sets prevent oscillations: Adam updates the fast weights
//! every step, and every `k` steps the slow weights move toward the fast
//! ones by `alpha` and the fast weights are reset onto them.

use crate::scalar::Scalar;
use crate::tensor::{Result, Tensor, TensorError};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const LOOKAHEAD_K: u64 = 6;
pub const LOOKAHEAD_ALPHA: f64 = 0.05;

/// Per-parameter Adam moments plus Lookahead slow weights.
pub struct AdamLookahead<T: Scalar> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    slow: Vec<Tensor<T>>,
    step: u64,
    k: u64,
    alpha: f64,
}

impl<T: Scalar> AdamLookahead<T> {
    /// State for the given initial parameters, with the paper defaults
    /// `k = 6`, `alpha = 0.05`.
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self::with_lookahead(params, LOOKAHEAD_K, LOOKAHEAD_ALPHA)
    }

    pub fn with_lookahead(params: &[Tensor<T>], k: u64, alpha: f64) -> Self {
        AdamLookahead {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            slow: params.to_vec(),
            step: 0,
            k,
            alpha,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step. `lrs[i]` is the learning rate for `params[i]`
    /// (each parameter belongs to exactly one rate group).
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lrs: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() || lrs.len() != params.len() {
            return Err(TensorError::BadConfig {
                op: "adam_lookahead",
                detail: format!(
                    "state for {} params, got {} params / {} grads / {} lrs",
                    self.m.len(),
                    params.len(),
                    grads.len(),
                    lrs.len()
                ),
            });
        }
        if let Some(bad) = lrs.iter().find(|lr| **lr <= 0.0) {
            return Err(TensorError::BadConfig {
                op: "adam_lookahead",
                detail: format!("learning rate must be positive, got {}", bad),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::c(BETA1);
        let b2 = T::c(BETA2);
        let eps = T::c(ADAM_EPS);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for (((p, g), (m, v)), &lr) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .zip(lrs)
        {
            debug_assert_eq!(p.shape(), g.shape());
            let lr_t = T::c(lr);
            let pd = (*p).data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (T::one() - b1) * gi;
                let vi = b2 * v.data()[i] + (T::one() - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                pd[i] = pd[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        if self.step % self.k == 0 {
            let a = T::c(self.alpha);
            for (p, s) in params.iter_mut().zip(self.slow.iter_mut()) {
                for (pv, sv) in (*p).data_mut().iter_mut().zip(s.data_mut()) {
                    *sv = *sv + a * (*pv - *sv);
                    *pv = *sv;
                }
            }
        }
        Ok(())
    }
}

/// Convenience for callers holding owned tensors.
pub fn step_owned<T: Scalar>(
    opt: &mut AdamLookahead<T>,
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    lrs: &[f64],
) -> Result<()> {
    let mut refs: Vec<&mut Tensor<T>> = params.iter_mut().collect();
    opt.step(&mut refs, grads, lrs)
}
