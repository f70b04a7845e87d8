//! Probabilistic one-step dynamics model.
//!
//! The network maps normalized `concat(x, u)` to a normalized residual mean
//! and a raw log standard deviation per state dimension. Predictions are a
//! diagonal Gaussian over the absolute next state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{Adam, Mlp, MlpSpec, ParamStore};
use crate::rng;
use crate::scalar::Scalar;

pub const LOGSTD_MIN: f64 = -5.0;
pub const LOGSTD_MAX: f64 = 2.0;
const STD_FLOOR: f64 = 1e-4;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

/// Welford running mean and variance, kept in `f64` regardless of the model scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    #[serde(with = "f64_bits")]
    pub mean: Vec<f64>,
    #[serde(with = "f64_bits")]
    pub m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Identity transform until two samples have been seen.
    pub fn loc_scale(&self) -> (Vec<f64>, Vec<f64>) {
        if self.count < 2 {
            return (vec![0.0; self.mean.len()], vec![1.0; self.mean.len()]);
        }
        let n = self.count as f64;
        let scale = self.m2.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        (self.mean.clone(), scale)
    }
}

mod f64_bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.to_bits()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<u64>::deserialize(d)?.into_iter().map(f64::from_bits).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input: RunningStats,
    pub residual: RunningStats,
}

impl Normalizer {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Normalizer {
            input: RunningStats::new(state_dim + action_dim),
            residual: RunningStats::new(state_dim),
        }
    }

    /// Records one observed transition.
    pub fn observe<T: Scalar>(&mut self, x: &[T], u: &[T], x_next: &[T]) {
        let input: Vec<f64> = x.iter().chain(u).map(|v| v.f64()).collect();
        let residual: Vec<f64> = x_next.iter().zip(x).map(|(a, b)| a.f64() - b.f64()).collect();
        self.input.push(&input);
        self.residual.push(&residual);
    }
}

struct Frozen<T> {
    in_loc: Vec<T>,
    in_scale: Vec<T>,
    res_loc: Vec<T>,
    res_scale: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel<T> {
    pub net: Mlp<T>,
    pub normalizer: Normalizer,
    state_dim: usize,
    action_dim: usize,
}

/// Batched prediction with everything needed for the NLL gradient.
pub struct PredictionBatch<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    raw_logstd: Vec<T>,
    cache: crate::nn::ForwardCache<T>,
}

impl<T: Scalar> PredictionBatch<T> {
    pub fn get(&self, i: usize) -> GaussianPrediction<T> {
        let n = self.mean.len() / self.cache.batch();
        GaussianPrediction {
            mean: self.mean[i * n..(i + 1) * n].to_vec(),
            std: self.std[i * n..(i + 1) * n].to_vec(),
        }
    }
}

impl<T: Scalar> WorldModel<T> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let spec = MlpSpec::with_hidden(state_dim + action_dim, hidden, 2 * state_dim);
        Ok(WorldModel {
            net: Mlp::init_with_rng(spec, rng)?,
            normalizer: Normalizer::new(state_dim, action_dim),
            state_dim,
            action_dim,
        })
    }

    pub fn from_net(net: Mlp<T>, state_dim: usize, action_dim: usize) -> Result<Self> {
        check_len(state_dim + action_dim, net.input_width(), "world model input width")?;
        check_len(2 * state_dim, net.output_width(), "world model output width")?;
        Ok(WorldModel {
            net,
            normalizer: Normalizer::new(state_dim, action_dim),
            state_dim,
            action_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.net.params
    }

    fn frozen(&self) -> Frozen<T> {
        let (il, is) = self.normalizer.input.loc_scale();
        let (rl, rs) = self.normalizer.residual.loc_scale();
        let c = |v: Vec<f64>| v.into_iter().map(T::of).collect();
        Frozen {
            in_loc: c(il),
            in_scale: c(is),
            res_loc: c(rl),
            res_scale: c(rs),
        }
    }

    pub fn predict(&self, x: &[T], u: &[T]) -> Result<GaussianPrediction<T>> {
        Ok(self.predict_batch(x, u, 1)?.get(0))
    }

    pub fn predict_batch(&self, xs: &[T], us: &[T], batch: usize) -> Result<PredictionBatch<T>> {
        let (n, k) = (self.state_dim, self.action_dim);
        check_len(batch * n, xs.len(), "world model state batch")?;
        check_len(batch * k, us.len(), "world model action batch")?;
        if xs.iter().chain(us).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite world model input".into()));
        }
        let f = self.frozen();
        let mut input = Vec::with_capacity(batch * (n + k));
        for s in 0..batch {
            let row = xs[s * n..(s + 1) * n].iter().chain(&us[s * k..(s + 1) * k]);
            for (j, &v) in row.enumerate() {
                input.push((v - f.in_loc[j]) / f.in_scale[j]);
            }
        }
        let cache = self.net.forward_batch(&input, batch)?;
        let (lo, hi) = (T::of(LOGSTD_MIN), T::of(LOGSTD_MAX));
        let mut mean = Vec::with_capacity(batch * n);
        let mut std = Vec::with_capacity(batch * n);
        let mut raw_logstd = Vec::with_capacity(batch * n);
        for s in 0..batch {
            let out = &cache.output[s * 2 * n..(s + 1) * 2 * n];
            for i in 0..n {
                mean.push(xs[s * n + i] + out[i] * f.res_scale[i] + f.res_loc[i]);
                let raw = out[n + i];
                raw_logstd.push(raw);
                std.push(raw.max(lo).min(hi).exp());
            }
        }
        Ok(PredictionBatch {
            mean,
            std,
            raw_logstd,
            cache,
        })
    }

    /// Mean per-sample Gaussian negative log likelihood of `x_next`, including
    /// the `(n/2) log 2 pi` constant, and its parameter gradient.
    pub fn nll(
        &self,
        xs: &[T],
        us: &[T],
        x_next: &[T],
        batch: usize,
    ) -> Result<(T, ParamStore<T>)> {
        if batch == 0 {
            return Err(Error::Usage("world model batch is empty".into()));
        }
        let n = self.state_dim;
        check_len(batch * n, x_next.len(), "world model target batch")?;
        let pred = self.predict_batch(xs, us, batch)?;
        let f = self.frozen();
        let (lo, hi) = (T::of(LOGSTD_MIN), T::of(LOGSTD_MAX));
        let inv_b = T::one() / T::of(batch as f64);
        let mut total = T::zero();
        let mut upstream = vec![T::zero(); batch * 2 * n];
        for s in 0..batch {
            for i in 0..n {
                let idx = s * n + i;
                let std = pred.std[idx];
                let var = std * std;
                let err = pred.mean[idx] - x_next[idx];
                let log_std = std.ln();
                total += err * err / (T::of(2.0) * var) + log_std + T::of(HALF_LOG_2PI);
                upstream[s * 2 * n + i] = err / var * f.res_scale[i] * inv_b;
                let raw = pred.raw_logstd[idx];
                if raw >= lo && raw <= hi {
                    upstream[s * 2 * n + n + i] = (T::one() - err * err / var) * inv_b;
                }
            }
        }
        let loss = total * inv_b;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("world model NLL is {loss}")));
        }
        let mut grads = self.net.params.zeros_like();
        self.net.backward_into(&pred.cache, &upstream, Some(&mut grads))?;
        Ok((loss, grads))
    }

    /// One optimizer step on the NLL; returns the pre-step loss.
    pub fn train_step(
        &mut self,
        adam: &mut Adam<T>,
        xs: &[T],
        us: &[T],
        x_next: &[T],
        batch: usize,
    ) -> Result<T> {
        let (loss, grads) = self.nll(xs, us, x_next, batch)?;
        adam.step(&mut self.net.params, &grads)?;
        Ok(loss)
    }

    /// Per-dimension RMSE of the mean prediction.
    pub fn rmse(&self, xs: &[T], us: &[T], x_next: &[T], batch: usize) -> Result<Vec<f64>> {
        let n = self.state_dim;
        let pred = self.predict_batch(xs, us, batch)?;
        let mut sq = vec![0.0; n];
        for s in 0..batch {
            for i in 0..n {
                sq[i] += (pred.mean[s * n + i].f64() - x_next[s * n + i].f64()).powi(2);
            }
        }
        Ok(sq.into_iter().map(|v| (v / batch.max(1) as f64).sqrt()).collect())
    }
}

/// `count` independent draws `mean + std * z`.
pub fn sample<T: Scalar, R: Rng + ?Sized>(
    pred: &GaussianPrediction<T>,
    rng: &mut R,
    count: usize,
) -> Vec<Vec<T>> {
    (0..count)
        .map(|_| {
            pred.mean
                .iter()
                .zip(&pred.std)
                .map(|(&m, &s)| m + s * rng::standard_normal::<T, _>(rng))
                .collect()
        })
        .collect()
}

/// Product of univariate normal densities, and its logarithm computed directly.
pub fn density<T: Scalar>(pred: &GaussianPrediction<T>, x: &[T]) -> Result<(f64, f64)> {
    check_len(pred.mean.len(), x.len(), "density point")?;
    let log: f64 = pred
        .mean
        .iter()
        .zip(&pred.std)
        .zip(x)
        .map(|((&m, &s), &v)| {
            let (m, s, v) = (m.f64(), s.f64(), v.f64());
            let z = (v - m) / s;
            -0.5 * z * z - s.ln() - HALF_LOG_2PI
        })
        .sum();
    Ok((log.exp(), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, rel_error};
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn toy(seed: u64) -> WorldModel<f64> {
        let mut rng = stream(seed, Stream::Init);
        let mut wm = WorldModel::new(2, 1, &[8, 8], &mut rng).unwrap();
        // non-trivial normalizer statistics
        for i in 0..20 {
            let t = i as f64 * 0.1;
            wm.normalizer.observe(&[t.sin(), t.cos()], &[0.3 * t], &[t.sin() + 0.1, t.cos() - 0.05 * t]);
        }
        wm
    }

    fn zero_residual(state_dim: usize, action_dim: usize) -> WorldModel<f64> {
        let net = Mlp::zeros(MlpSpec::with_hidden(state_dim + action_dim, &[4], 2 * state_dim)).unwrap();
        WorldModel::from_net(net, state_dim, action_dim).unwrap()
    }

    #[test]
    fn zero_residual_head_predicts_current_state() {
        let wm = zero_residual(3, 2);
        let x = [0.4, -1.0, 2.5];
        let p = wm.predict(&x, &[0.1, 0.2]).unwrap();
        assert_eq!(p.mean, x.to_vec());
        assert!(p.std.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn std_respects_clamp_bounds() {
        let mut wm = toy(2);
        for v in wm.net.params.flat_mut() {
            *v *= 40.0;
        }
        for i in 0..50 {
            let t = i as f64 - 25.0;
            let p = wm.predict(&[t, -t], &[t * 0.5]).unwrap();
            for s in p.std {
                assert!(s >= LOGSTD_MIN.exp() - 1e-15 && s <= LOGSTD_MAX.exp() + 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let wm = toy(1);
        assert!(matches!(wm.predict(&[f64::NAN, 0.0], &[0.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn prediction_matches_hand_normalized_oracle() {
        let wm = toy(3);
        let x = [0.2, -0.7];
        let u = [0.9];
        let p = wm.predict(&x, &u).unwrap();
        // hand normalization, then the raw network
        let (il, is) = wm.normalizer.input.loc_scale();
        let (rl, rs) = wm.normalizer.residual.loc_scale();
        let z: Vec<f64> = [x[0], x[1], u[0]].iter().enumerate().map(|(j, v)| (v - il[j]) / is[j]).collect();
        let out = wm.net.forward(&z).unwrap();
        for i in 0..2 {
            let mean = x[i] + out[i] * rs[i] + rl[i];
            let std = out[2 + i].clamp(-5.0, 2.0).exp();
            assert!((p.mean[i] - mean).abs() <= 1e-6 * mean.abs().max(1e-9));
            assert!((p.std[i] - std).abs() <= 1e-6 * std);
        }
    }

    #[test]
    fn nll_at_mean_with_unit_std_is_the_constant() {
        let wm = zero_residual(2, 1);
        let x = [0.5, 0.5];
        let (loss, _) = wm.nll(&x, &[0.0], &x, 1).unwrap();
        assert!((loss - 1.8378770664093453).abs() < 1e-12);
    }

    #[test]
    fn residual_only_changes_the_quadratic_term() {
        let wm = zero_residual(2, 1);
        let x = [0.5, 0.5];
        let (base, _) = wm.nll(&x, &[0.0], &x, 1).unwrap();
        let (moved, _) = wm.nll(&x, &[0.0], &[0.5 + 0.3, 0.5 - 0.4], 1).unwrap();
        assert!((moved - base - (0.09 + 0.16) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let wm = toy(0);
        assert!(matches!(wm.nll(&[], &[], &[], 0), Err(Error::Usage(_))));
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let wm = toy(seed);
            let mut rng = stream(seed, Stream::Eval);
            let b = 4;
            let xs: Vec<f64> = (0..2 * b).map(|_| rng::uniform(&mut rng, -1.0, 1.0)).collect();
            let us: Vec<f64> = (0..b).map(|_| rng::uniform(&mut rng, -1.0, 1.0)).collect();
            let xn: Vec<f64> = xs.iter().map(|v| v + rng::uniform(&mut rng, -0.3, 0.3)).collect();
            let (_, g) = wm.nll(&xs, &us, &xn, b).unwrap();
            for i in 0..wm.net.params.numel() {
                let fd = central_difference(1e-5, |h| {
                    let mut w = wm.clone();
                    let v = w.net.params.flat_get(i);
                    w.net.params.flat_set(i, v + h);
                    w.nll(&xs, &us, &xn, b).unwrap().0
                });
                assert!(rel_error(g.flat_get(i), fd) < 1e-4, "seed {seed} param {i}");
            }
        }
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let p = GaussianPrediction { mean: vec![0.0], std: vec![1.0] };
        let (d, l) = density(&p, &[0.0]).unwrap();
        assert!((d - 0.3989422804014327).abs() < 1e-15);
        assert!((l - d.ln()).abs() < 1e-15);
    }

    #[test]
    fn density_is_symmetric_and_factorizes() {
        let p = GaussianPrediction { mean: vec![0.3, -1.0], std: vec![0.5, 2.0] };
        let (a, _) = density(&p, &[0.3 + 0.2, -1.0]).unwrap();
        let (b, _) = density(&p, &[0.3 - 0.2, -1.0]).unwrap();
        assert!((a - b).abs() < 1e-15);
        let one = |m: f64, s: f64, x: f64| density(&GaussianPrediction { mean: vec![m], std: vec![s] }, &[x]).unwrap().0;
        let (joint, _) = density(&p, &[0.1, 0.5]).unwrap();
        assert!((joint - one(0.3, 0.5, 0.1) * one(-1.0, 2.0, 0.5)).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_concentrated() {
        let p = GaussianPrediction { mean: vec![1.0, -2.0], std: vec![LOGSTD_MIN.exp(); 2] };
        let a = sample(&p, &mut stream(5, Stream::WorldModel), 1000);
        let b = sample(&p, &mut stream(5, Stream::WorldModel), 1000);
        assert_eq!(a, b);
        for s in &a {
            for i in 0..2 {
                assert!((s[i] - p.mean[i]).abs() < 5.0 * p.std[i]);
            }
        }
    }

    #[test]
    fn sample_mean_converges() {
        let p = GaussianPrediction { mean: vec![0.5, 3.0], std: vec![0.2, 1.5] };
        let n = 100_000;
        let draws = sample(&p, &mut stream(9, Stream::WorldModel), n);
        for i in 0..2 {
            let m: f64 = draws.iter().map(|d| d[i]).sum::<f64>() / n as f64;
            assert!((m - p.mean[i]).abs() < 4.0 * p.std[i] / (n as f64).sqrt());
        }
    }

    proptest! {
        #[test]
        fn density_and_nll_agree(seed in 0u64..500, scale in 0.1f64..5.0) {
            let mut wm = toy(seed % 7);
            for v in wm.net.params.flat_mut() { *v *= scale; }
            let mut rng = stream(seed, Stream::Eval);
            let x: Vec<f64> = (0..2).map(|_| rng::uniform(&mut rng, -2.0, 2.0)).collect();
            let u = [rng::uniform(&mut rng, -1.0, 1.0)];
            let xn: Vec<f64> = x.iter().map(|v| v + rng::uniform(&mut rng, -0.5, 0.5)).collect();
            let (nll, _) = wm.nll(&x, &u, &xn, 1).unwrap();
            let (_, log_density) = density(&wm.predict(&x, &u).unwrap(), &xn).unwrap();
            prop_assert!((nll + log_density).abs() <= 1e-6 * nll.abs().max(1e-12));
        }
    }
}
