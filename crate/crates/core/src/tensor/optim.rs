//! Parameter optimizers: plain SGD and Adam with bias correction.

use super::{ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// One SGD step over populated gradients; gradients are zeroed after.
pub fn sgd_step<T: Scalar>(params: &mut ParamSet<T>, lr: f64) {
    for i in 0..params.len() {
        let grad = params.grad_at(i).data().to_vec();
        for (v, g) in params.get_mut_at(i).data_mut().iter_mut().zip(grad) {
            *v = T::from_f64(v.to_f64() - lr * g.to_f64());
        }
    }
    params.zero_grads();
}

/// Adam moment buffers plus hyperparameters for one ParamSet.
#[derive(Clone)]
pub struct AdamState<T: Scalar> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, alpha: f64, beta1: f64, beta2: f64) -> Self {
        AdamState {
            m: (0..params.len()).map(|i| Tensor::zeros(params.value_at(i).shape())).collect(),
            v: (0..params.len()).map(|i| Tensor::zeros(params.value_at(i).shape())).collect(),
            t: 0,
            alpha,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update over populated gradients. `lr_scale` multiplies the
    /// base rate (used by the decay schedule); gradients are zeroed after.
    pub fn step(&mut self, params: &mut ParamSet<T>, lr_scale: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam state holds {} tensors but params hold {}",
                self.m.len(),
                params.len()
            )));
        }
        for i in 0..params.len() {
            if self.m[i].shape() != params.value_at(i).shape() {
                return Err(Error::shape(
                    format!("adam state drift at {}", params.name_at(i)),
                    self.m[i].shape(),
                    params.value_at(i).shape(),
                ));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let lr = self.alpha * lr_scale;
        for i in 0..params.len() {
            let grad = params.grad_at(i).data().to_vec();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = params.get_mut_at(i).data_mut();
            for j in 0..grad.len() {
                let g = grad[j].to_f64();
                let mj = self.beta1 * m[j].to_f64() + (1.0 - self.beta1) * g;
                let vj = self.beta2 * v[j].to_f64() + (1.0 - self.beta2) * g * g;
                m[j] = T::from_f64(mj);
                v[j] = T::from_f64(vj);
                let mhat = mj / bc1;
                let vhat = vj / bc2;
                w[j] = T::from_f64(w[j].to_f64() - lr * mhat / (vhat.sqrt() + self.eps));
            }
        }
        params.zero_grads();
        Ok(())
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Rebuild a state from persisted moment tensors.
    pub fn from_parts(
        params: &ParamSet<T>,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
        t: u64,
        alpha: f64,
        beta1: f64,
        beta2: f64,
    ) -> Result<Self> {
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::invalid("adam moments do not match parameter count"));
        }
        for i in 0..params.len() {
            if m[i].shape() != params.value_at(i).shape() || v[i].shape() != params.value_at(i).shape()
            {
                return Err(Error::shape(
                    format!("restored adam state at {}", params.name_at(i)),
                    m[i].shape(),
                    params.value_at(i).shape(),
                ));
            }
        }
        Ok(AdamState { m, v, t, alpha, beta1, beta2, eps: 1e-8 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64, g: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(w)).unwrap();
        p.grad_at_mut(0).data_mut()[0] = g;
        p
    }

    #[test]
    fn first_adam_step_is_signed_lr() {
        // w=1.0, g=0.5, alpha=1e-4 -> w ~= 1.0 - 1e-4 * 0.5/(0.5+eps)
        let mut p = single(1.0, 0.5);
        let mut st = AdamState::new(&p, 1e-4, 0.5, 0.999);
        st.step(&mut p, 1.0).unwrap();
        let w = p.value_at(0).data()[0];
        assert!((w - 0.9999).abs() < 1e-8, "{w}");
        // gradients zeroed after step
        assert_eq!(p.grad_at(0).data()[0], 0.0);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = single(0.75, 0.0);
        let mut st = AdamState::new(&p, 0.1, 0.5, 0.999);
        st.step(&mut p, 1.0).unwrap();
        assert_eq!(p.value_at(0).data()[0], 0.75);
    }

    #[test]
    fn hundred_steps_match_scalar_recursion() {
        // L(w) = w^2/2, grad = w; independent recursion in plain f64.
        // Start far from the optimum so the ~alpha-sized Adam steps are
        // monotone for the whole horizon.
        let (alpha, b1, b2, eps) = (0.1, 0.5, 0.999, 1e-8);
        let mut wref = 50.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut traj = Vec::new();
        for t in 1..=100u32 {
            let g = wref;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t as i32));
            let vhat = v / (1.0 - b2.powi(t as i32));
            wref -= alpha * mhat / (vhat.sqrt() + eps);
            traj.push(wref);
        }

        let mut p = single(50.0, 0.0);
        let mut st = AdamState::new(&p, alpha, b1, b2);
        let mut prev = 50.0f64;
        for (t, expect) in traj.iter().enumerate() {
            let w = p.value_at(0).data()[0];
            p.grad_at_mut(0).data_mut()[0] = w; // dL/dw = w
            st.step(&mut p, 1.0).unwrap();
            let w = p.value_at(0).data()[0];
            assert!((w - expect).abs() < 1e-10, "step {t}: {w} vs {expect}");
            if t >= 1 {
                assert!(w.abs() < prev.abs(), "|w| not strictly decreasing at step {t}");
            }
            prev = w;
        }
    }

    #[test]
    fn shape_drift_rejected() {
        let mut p = single(1.0, 0.5);
        let other = {
            let mut q = ParamSet::<f64>::new();
            q.insert("w", Tensor::zeros(&[3])).unwrap();
            q
        };
        let mut st = AdamState::new(&other, 0.1, 0.5, 0.999);
        assert!(st.step(&mut p, 1.0).is_err());
    }

    #[test]
    fn sgd_step_moves_against_gradient() {
        let mut p = single(1.0, 2.0);
        sgd_step(&mut p, 0.25);
        assert_eq!(p.value_at(0).data()[0], 0.5);
        assert_eq!(p.grad_at(0).data()[0], 0.0);
    }
}
