use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::nn::{ForwardCache, Mlp, MlpSpec, ParamStore};
use crate::rng;
use crate::scalar::Scalar;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;
const LN_2: f64 = std::f64::consts::LN_2;

/// Tanh-squashed diagonal Gaussian policy over `concat(x, g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T> {
    pub net: Mlp<T>,
    state_dim: usize,
    goal_dim: usize,
    action_dim: usize,
    action_scale: T,
}

/// A batch of reparameterized draws with the intermediates needed for backprop.
pub struct PolicySample<T> {
    pub actions: Vec<T>,
    pub log_probs: Vec<T>,
    pre_squash: Vec<T>,
    std: Vec<T>,
    noise: Vec<T>,
    log_std_active: Vec<bool>,
    cache: ForwardCache<T>,
}

impl<T: Scalar> PolicySample<T> {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }
}

fn softplus(y: f64) -> f64 {
    y.max(0.0) + (-y.abs()).exp().ln_1p()
}

impl<T: Scalar> Policy<T> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        action_scale: f64,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let spec = MlpSpec::with_hidden(state_dim + goal_dim, hidden, 2 * action_dim);
        Self::from_net(Mlp::init_with_rng(spec, rng)?, state_dim, goal_dim, action_dim, action_scale)
    }

    pub fn from_net(
        net: Mlp<T>,
        state_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        action_scale: f64,
    ) -> Result<Self> {
        check_len(state_dim + goal_dim, net.input_width(), "policy input width")?;
        check_len(2 * action_dim, net.output_width(), "policy output width")?;
        if !(action_scale > 0.0) {
            return Err(Error::Config(format!("action scale must be positive, got {action_scale}")));
        }
        Ok(Policy {
            net,
            state_dim,
            goal_dim,
            action_dim,
            action_scale: T::of(action_scale),
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn action_scale(&self) -> T {
        self.action_scale
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.net.params
    }

    fn inputs(&self, xs: &[T], gs: &[T], batch: usize) -> Result<Vec<T>> {
        check_len(batch * self.state_dim, xs.len(), "policy state batch")?;
        check_len(batch * self.goal_dim, gs.len(), "policy goal batch")?;
        let mut input = Vec::with_capacity(batch * (self.state_dim + self.goal_dim));
        for s in 0..batch {
            input.extend_from_slice(&xs[s * self.state_dim..(s + 1) * self.state_dim]);
            input.extend_from_slice(&gs[s * self.goal_dim..(s + 1) * self.goal_dim]);
        }
        Ok(input)
    }

    /// Keeps emitted actions strictly inside the open box even when tanh rounds to 1.
    fn squash(&self, a: T) -> T {
        let edge = T::one() - T::of(2.0) * T::epsilon();
        self.action_scale * a.tanh().max(-edge).min(edge)
    }

    /// Reparameterized draws `u = scale * tanh(mean + std * noise)`; `noise` is
    /// `batch * action_dim` standard normal values.
    pub fn sample_with_noise(
        &self,
        xs: &[T],
        gs: &[T],
        batch: usize,
        noise: &[T],
    ) -> Result<PolicySample<T>> {
        let k = self.action_dim;
        check_len(batch * k, noise.len(), "policy noise")?;
        let cache = self.net.forward_batch(&self.inputs(xs, gs, batch)?, batch)?;
        let (lo, hi) = (T::of(LOG_STD_MIN), T::of(LOG_STD_MAX));
        let log_scale = self.action_scale.f64().ln();
        let mut actions = Vec::with_capacity(batch * k);
        let mut log_probs = Vec::with_capacity(batch);
        let mut pre_squash = Vec::with_capacity(batch * k);
        let mut stds = Vec::with_capacity(batch * k);
        let mut active = Vec::with_capacity(batch * k);
        for s in 0..batch {
            let out = &cache.output[s * 2 * k..(s + 1) * 2 * k];
            let mut lp = 0.0f64;
            for i in 0..k {
                let raw = out[k + i];
                let log_std = raw.max(lo).min(hi);
                active.push(raw >= lo && raw <= hi);
                let std = log_std.exp();
                let z = noise[s * k + i];
                let a = out[i] + std * z;
                let af = a.f64();
                let zf = z.f64();
                lp += -0.5 * zf * zf - log_std.f64() - HALF_LOG_2PI;
                lp -= log_scale + 2.0 * (LN_2 - af - softplus(-2.0 * af));
                actions.push(self.squash(a));
                pre_squash.push(a);
                stds.push(std);
            }
            log_probs.push(T::of(lp));
        }
        Ok(PolicySample {
            actions,
            log_probs,
            pre_squash,
            std: stds,
            noise: noise.to_vec(),
            log_std_active: active,
            cache,
        })
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        xs: &[T],
        gs: &[T],
        batch: usize,
        rng: &mut R,
    ) -> Result<PolicySample<T>> {
        let mut noise = vec![T::zero(); batch * self.action_dim];
        rng::fill_standard_normal(rng, &mut noise);
        self.sample_with_noise(xs, gs, batch, &noise)
    }

    /// One stochastic action and its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[T], g: &[T], rng: &mut R) -> Result<(Vec<T>, T)> {
        let s = self.sample_batch(x, g, 1, rng)?;
        Ok((s.actions, s.log_probs[0]))
    }

    /// Evaluation-mode actions `scale * tanh(mean)`.
    pub fn deterministic_batch(&self, xs: &[T], gs: &[T], batch: usize) -> Result<Vec<T>> {
        let k = self.action_dim;
        let cache = self.net.forward_batch(&self.inputs(xs, gs, batch)?, batch)?;
        let mut out = Vec::with_capacity(batch * k);
        for s in 0..batch {
            for i in 0..k {
                out.push(self.squash(cache.output[s * 2 * k + i]));
            }
        }
        Ok(out)
    }

    pub fn deterministic(&self, x: &[T], g: &[T]) -> Result<Vec<T>> {
        self.deterministic_batch(x, g, 1)
    }

    /// Log-density of a given action; undefined (numeric error) on or outside the box edge.
    pub fn log_prob(&self, x: &[T], g: &[T], u: &[T]) -> Result<f64> {
        let k = self.action_dim;
        check_len(k, u.len(), "action")?;
        let cache = self.net.forward_batch(&self.inputs(x, g, 1)?, 1)?;
        let scale = self.action_scale.f64();
        let mut lp = 0.0;
        for i in 0..k {
            let t = u[i].f64() / scale;
            if !(t.abs() < 1.0) {
                return Err(Error::Numeric(format!(
                    "action {} lies outside the open action box (scale {scale})",
                    u[i]
                )));
            }
            let a = t.atanh();
            let mean = cache.output[i].f64();
            let log_std = cache.output[k + i].f64().clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (a - mean) / log_std.exp();
            lp += -0.5 * z * z - log_std - HALF_LOG_2PI;
            lp -= scale.ln() + 2.0 * (LN_2 - a - softplus(-2.0 * a));
        }
        Ok(lp)
    }

    /// Parameter gradient of `sum_b <d_actions_b, u_b> + d_log_probs_b * log_prob_b`
    /// through the reparameterized sample (noise held fixed).
    pub fn backward(
        &self,
        sample: &PolicySample<T>,
        d_actions: &[T],
        d_log_probs: &[T],
    ) -> Result<ParamStore<T>> {
        let k = self.action_dim;
        let batch = sample.len();
        check_len(batch * k, d_actions.len(), "policy action upstream")?;
        check_len(batch, d_log_probs.len(), "policy log-prob upstream")?;
        let two = T::of(2.0);
        let mut upstream = vec![T::zero(); batch * 2 * k];
        for s in 0..batch {
            for i in 0..k {
                let idx = s * k + i;
                let t = sample.pre_squash[idx].tanh();
                let du_da = self.action_scale * (T::one() - t * t);
                let da_dlogstd = sample.std[idx] * sample.noise[idx];
                let d_lp = d_log_probs[s];
                let d_u = d_actions[idx];
                // d logp / d mean = 2 t ; d logp / d log_std = -1 + 2 t * std * z
                upstream[s * 2 * k + i] = d_u * du_da + d_lp * two * t;
                if sample.log_std_active[idx] {
                    upstream[s * 2 * k + k + i] =
                        d_u * du_da * da_dlogstd + d_lp * (two * t * da_dlogstd - T::one());
                }
            }
        }
        let mut grads = self.net.params.zeros_like();
        self.net.backward_into(&sample.cache, &upstream, Some(&mut grads))?;
        Ok(grads)
    }

    /// Mean log-std over a batch of states; used for diagnostics.
    pub fn mean_log_std(&self, xs: &[T], gs: &[T], batch: usize) -> Result<f64> {
        let k = self.action_dim;
        let cache = self.net.forward_batch(&self.inputs(xs, gs, batch)?, batch)?;
        let mut sum = 0.0;
        for s in 0..batch {
            for i in 0..k {
                sum += cache.output[s * 2 * k + k + i].f64().clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
        }
        Ok(sum / (batch * k) as f64)
    }
}
