use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::ParamStore;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub step_count: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Result<Self> {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(
        params: &ParamStore<T>,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<Self> {
        if !(lr > 0.0) || !(eps > 0.0) {
            return Err(Error::Config(format!("adam lr and eps must be positive (lr={lr}, eps={eps})")));
        }
        if !(0.0 < beta1 && beta1 < 1.0 && 0.0 < beta2 && beta2 < 1.0) {
            return Err(Error::Config(format!("adam betas must lie in (0,1), got {beta1}, {beta2}")));
        }
        Ok(Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step_count: 0,
            lr: T::of(lr),
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            eps: T::of(eps),
        })
    }

    /// One descent step. Non-finite gradients abort the update untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>) -> Result<()> {
        params.ensure_congruent(grads)?;
        self.m.ensure_congruent(params)?;
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite gradient passed to adam".into()));
        }
        self.step_count += 1;
        let t = self.step_count.min(i32::MAX as u64) as i32;
        let one = T::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params
            .flat_mut()
            .zip(grads.flat())
            .zip(self.m.flat_mut())
            .zip(self.v.flat_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        params.version += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Tensor;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::from_vec(&[1], vec![v]).unwrap()).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_store(1.5);
        let mut adam = Adam::new(&p, 1e-3).unwrap();
        adam.step(&mut p, &scalar_store(0.0)).unwrap();
        assert_eq!(p.flat_get(0), 1.5);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ParamStore::<f64>::new();
        p.insert("w", Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap()).unwrap();
        let mut g = p.zeros_like();
        g.get_mut("w").unwrap().data = vec![2.0, -0.5, 30.0];
        let mut adam = Adam::new(&p, 0.01).unwrap();
        adam.step(&mut p, &g).unwrap();
        for (v, s) in p.flat().zip([-1.0, 1.0, -1.0]) {
            assert!((v - 0.01 * s).abs() < 1e-9);
        }
    }

    #[test]
    fn three_step_trace_matches_hand_evaluation() {
        // Hand evaluation of the recurrences, lr=0.1, b1=0.9, b2=0.999, eps=1e-8,
        // on f(x) = x^2 from x0 = 1 (gradient 2x).
        let (lr, b1, b2, eps): (f64, f64, f64, f64) = (0.1, 0.9, 0.999, 1e-8);
        let mut x = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            expected.push(x);
        }
        // Frozen values of the trace above.
        let frozen = [0.9000000005, 0.8004122286917928, 0.7015862729460303];
        for (e, f) in expected.iter().zip(frozen) {
            assert!((e - f).abs() < 1e-9, "{e} vs {f}");
        }

        let mut p = scalar_store(1.0);
        let mut adam = Adam::with_betas(&p, lr, b1, b2, eps).unwrap();
        for want in frozen {
            let g = scalar_store(2.0 * p.flat_get(0));
            adam.step(&mut p, &g).unwrap();
            assert!((p.flat_get(0) - want).abs() < 1e-7);
        }
        assert_eq!(adam.step_count, 3);
    }

    #[test]
    fn nan_gradient_aborts_update() {
        let mut p = scalar_store(1.0);
        let mut adam = Adam::new(&p, 1e-3).unwrap();
        let err = adam.step(&mut p, &scalar_store(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(p.flat_get(0), 1.0);
        assert_eq!(adam.step_count, 0);
    }
}
