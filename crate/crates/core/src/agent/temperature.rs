use crate::error::{Error, Result};
use crate::nn::{Adam, ParamStore, Tensor};
use crate::scalar::Scalar;

/// Entropy temperature `alpha = exp(log_alpha)`, tuned toward a target entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Temperature<T> {
    pub log_alpha: ParamStore<T>,
    pub target_entropy: T,
    pub adam: Adam<T>,
}

impl<T: Scalar> Temperature<T> {
    pub fn new(init_alpha: f64, target_entropy: f64, lr: f64) -> Result<Self> {
        if !(init_alpha > 0.0) || !init_alpha.is_finite() {
            return Err(Error::Config(format!("initial alpha must be positive, got {init_alpha}")));
        }
        let mut log_alpha = ParamStore::new();
        log_alpha.insert("log_alpha", Tensor::from_vec(&[1], vec![T::of(init_alpha.ln())])?)?;
        let adam = Adam::new(&log_alpha, lr)?;
        Ok(Temperature {
            log_alpha,
            target_entropy: T::of(target_entropy),
            adam,
        })
    }

    pub fn log_alpha(&self) -> T {
        self.log_alpha.at(0).data[0]
    }

    pub fn alpha(&self) -> T {
        self.log_alpha().exp()
    }

    /// `-alpha * mean(log_pi + target_entropy)` and its derivative in `log_alpha`.
    pub fn loss_and_grad(&self, log_probs: &[T]) -> Result<(T, T)> {
        if log_probs.is_empty() {
            return Err(Error::Usage("temperature batch is empty".into()));
        }
        let mean = log_probs.iter().copied().sum::<T>() / T::of(log_probs.len() as f64)
            + self.target_entropy;
        let loss = -self.alpha() * mean;
        Ok((loss, loss))
    }

    /// One Adam step on `log_alpha`; returns the pre-step loss.
    pub fn update(&mut self, log_probs: &[T]) -> Result<T> {
        let (loss, grad) = self.loss_and_grad(log_probs)?;
        let mut g = self.log_alpha.zeros_like();
        g.at_mut(0).data[0] = grad;
        self.adam.step(&mut self.log_alpha, &g)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_at_target_entropy() {
        let t = Temperature::<f64>::new(0.5, -1.0, 3e-4).unwrap();
        assert_eq!(t.loss_and_grad(&[1.0, 1.0]).unwrap().1, 0.0);
    }

    #[test]
    fn low_entropy_raises_alpha() {
        let mut t = Temperature::<f64>::new(1.0, -1.0, 1e-2).unwrap();
        // log pi high -> entropy below target
        t.update(&[3.0, 2.0]).unwrap();
        assert!(t.alpha() > 1.0);
        let mut t = Temperature::<f64>::new(1.0, -1.0, 1e-2).unwrap();
        t.update(&[-3.0]).unwrap();
        assert!(t.alpha() < 1.0);
    }

    #[test]
    fn three_step_trace() {
        // log_alpha0 = 0, target -1, log pi = 2 each step, lr 0.1
        let mut t = Temperature::<f64>::new(1.0, -1.0, 0.1).unwrap();
        let mut got = Vec::new();
        for _ in 0..3 {
            t.update(&[2.0]).unwrap();
            got.push(t.log_alpha());
        }
        let want = [0.09999999900000002, 0.20013555420649998, 0.3004963080362002];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{got:?}");
        }
        assert_eq!(t.adam.step_count, 3);
    }
}
