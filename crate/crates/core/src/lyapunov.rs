//! Neural Lyapunov function with architectural positivity, world-model Lie
//! derivatives, and the Lyapunov-risk training step.
//!
//! `V(x, g) = |net(features(x, g))| + c_min`, where the features are the
//! state relative to the goal. Goals occupy the leading coordinates of the
//! state (cart-pole: all four, reach: the position), so the features at the
//! goal are the zero vector and `V(g, g) = |net(0)| + c_min` for every goal.

use rand::Rng;

use crate::agent::Policy;
use crate::error::{check_len, Error, Result};
use crate::nn::{Adam, Mlp, MlpSpec, ParamStore};
use crate::rng;
use crate::scalar::Scalar;
use crate::world_model::WorldModel;

#[derive(Debug, Clone, PartialEq)]
pub struct Nlf<T> {
    pub net: Mlp<T>,
    pub c_min: T,
    /// Monte-Carlo samples per Lie-derivative estimate during training.
    pub k_mc: usize,
    state_dim: usize,
    goal_dim: usize,
}

/// Frozen inputs of one risk evaluation: current-state features and the
/// features of `k` world-model samples per state.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskBatch<T> {
    pub batch: usize,
    pub k: usize,
    pub current: Vec<T>,
    pub next: Vec<T>,
}

impl<T: Scalar> Nlf<T> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        goal_dim: usize,
        hidden: &[usize],
        c_min: f64,
        k_mc: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Mlp::init_with_rng(MlpSpec::with_hidden(state_dim, hidden, 1), rng)?;
        Self::from_net(net, goal_dim, c_min, k_mc)
    }

    pub fn from_net(net: Mlp<T>, goal_dim: usize, c_min: f64, k_mc: usize) -> Result<Self> {
        check_len(1, net.output_width(), "lyapunov output width")?;
        let state_dim = net.input_width();
        if goal_dim > state_dim {
            return Err(Error::Config(format!(
                "goal dimension {goal_dim} exceeds state dimension {state_dim}"
            )));
        }
        if !(c_min > 0.0) {
            return Err(Error::Config(format!("c_min must be positive, got {c_min}")));
        }
        if k_mc == 0 {
            return Err(Error::Config("k_mc must be at least 1".into()));
        }
        Ok(Nlf {
            net,
            c_min: T::of(c_min),
            k_mc,
            state_dim,
            goal_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn goal_dim(&self) -> usize {
        self.goal_dim
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.net.params
    }

    /// The state a goal denotes: `g` in the leading coordinates, zero elsewhere.
    pub fn goal_state(&self, g: &[T]) -> Vec<T> {
        let mut s = g.to_vec();
        s.resize(self.state_dim, T::zero());
        s
    }

    fn push_features(&self, x: &[T], g: &[T], out: &mut Vec<T>) {
        for (i, &v) in x.iter().enumerate() {
            out.push(if i < self.goal_dim { v - g[i] } else { v });
        }
    }

    pub fn features(&self, x: &[T], g: &[T]) -> Result<Vec<T>> {
        check_len(self.state_dim, x.len(), "lyapunov state")?;
        check_len(self.goal_dim, g.len(), "lyapunov goal")?;
        let mut f = Vec::with_capacity(self.state_dim);
        self.push_features(x, g, &mut f);
        Ok(f)
    }

    /// `V` at a batch of feature rows.
    pub fn values_of_features(&self, features: &[T], batch: usize) -> Result<Vec<T>> {
        let cache = self.net.forward_batch(features, batch)?;
        Ok(cache.output.iter().map(|v| v.abs() + self.c_min).collect())
    }

    pub fn value(&self, x: &[T], g: &[T]) -> Result<T> {
        let f = self.features(x, g)?;
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite lyapunov input".into()));
        }
        Ok(self.values_of_features(&f, 1)?[0])
    }

    /// `V(g, g)`, identical for every goal.
    pub fn goal_value(&self) -> Result<T> {
        Ok(self.values_of_features(&vec![T::zero(); self.state_dim], 1)?[0])
    }

    /// Lie derivatives for a batch: `mean_k V(x~_k) - V(x)` with
    /// `x~_k = mu + sigma * noise_k`, or `V(mu) - V(x)` when `k == 0`.
    /// `noise` holds `batch * k * state_dim` standard normal values.
    pub fn lie_batch(
        &self,
        wm: &WorldModel<T>,
        xs: &[T],
        gs: &[T],
        us: &[T],
        batch: usize,
        k: usize,
        noise: &[T],
    ) -> Result<Vec<T>> {
        let n = self.state_dim;
        check_len(batch * self.goal_dim, gs.len(), "lyapunov goal batch")?;
        check_len(batch * k * n, noise.len(), "lie derivative noise")?;
        let pred = wm.predict_batch(xs, us, batch)?;
        let draws = k.max(1);
        let mut feats = Vec::with_capacity(batch * (draws + 1) * n);
        let mut sample = vec![T::zero(); n];
        for b in 0..batch {
            let g = &gs[b * self.goal_dim..(b + 1) * self.goal_dim];
            self.push_features(&xs[b * n..(b + 1) * n], g, &mut feats);
            for j in 0..draws {
                for i in 0..n {
                    let idx = b * n + i;
                    sample[i] = if k == 0 {
                        pred.mean[idx]
                    } else {
                        pred.mean[idx] + pred.std[idx] * noise[(b * k + j) * n + i]
                    };
                }
                self.push_features(&sample, g, &mut feats);
            }
        }
        let v = self.values_of_features(&feats, batch * (draws + 1))?;
        let draws_t = T::of(draws as f64);
        // differences first, so identical values give exactly zero
        Ok((0..batch)
            .map(|b| {
                let row = &v[b * (draws + 1)..(b + 1) * (draws + 1)];
                row[1..].iter().map(|&vk| vk - row[0]).sum::<T>() / draws_t
            })
            .collect())
    }

    pub fn lie_derivative<R: Rng + ?Sized>(
        &self,
        wm: &WorldModel<T>,
        x: &[T],
        u: &[T],
        g: &[T],
        k: usize,
        rng: &mut R,
    ) -> Result<T> {
        let mut noise = vec![T::zero(); k * self.state_dim];
        rng::fill_standard_normal(rng, &mut noise);
        Ok(self.lie_batch(wm, x, g, u, 1, k, &noise)?[0])
    }

    /// `max(0, L) + V(g)^2` with `k_mc` samples drawn from `noise`.
    pub fn point_loss_batch(
        &self,
        wm: &WorldModel<T>,
        xs: &[T],
        gs: &[T],
        us: &[T],
        batch: usize,
        noise: &[T],
    ) -> Result<Vec<T>> {
        let lie = self.lie_batch(wm, xs, gs, us, batch, self.k_mc, noise)?;
        let v0 = self.goal_value()?;
        Ok(lie.into_iter().map(|l| l.max(T::zero()) + v0 * v0).collect())
    }

    pub fn point_loss<R: Rng + ?Sized>(
        &self,
        wm: &WorldModel<T>,
        x: &[T],
        u: &[T],
        g: &[T],
        rng: &mut R,
    ) -> Result<T> {
        let mut noise = vec![T::zero(); self.k_mc * self.state_dim];
        rng::fill_standard_normal(rng, &mut noise);
        Ok(self.point_loss_batch(wm, x, g, u, 1, &noise)?[0])
    }

    /// Samples the risk inputs: actions resampled from the current policy,
    /// next states drawn from the world model (never from the buffer).
    pub fn risk_batch<R: Rng + ?Sized>(
        &self,
        wm: &WorldModel<T>,
        policy: &Policy<T>,
        xs: &[T],
        gs: &[T],
        batch: usize,
        rng: &mut R,
    ) -> Result<RiskBatch<T>> {
        if batch == 0 {
            return Err(Error::Usage("lyapunov batch is empty".into()));
        }
        let n = self.state_dim;
        let k = self.k_mc;
        let us = policy.sample_batch(xs, gs, batch, rng)?.actions;
        let pred = wm.predict_batch(xs, &us, batch)?;
        let mut current = Vec::with_capacity(batch * n);
        let mut next = Vec::with_capacity(batch * k * n);
        let mut sample = vec![T::zero(); n];
        for b in 0..batch {
            let g = &gs[b * self.goal_dim..(b + 1) * self.goal_dim];
            self.push_features(&xs[b * n..(b + 1) * n], g, &mut current);
            for _ in 0..k {
                for i in 0..n {
                    let idx = b * n + i;
                    sample[i] = pred.mean[idx] + pred.std[idx] * rng::standard_normal::<T, _>(rng);
                }
                self.push_features(&sample, g, &mut next);
            }
        }
        Ok(RiskBatch {
            batch,
            k,
            current,
            next,
        })
    }

    /// Batch-mean Lyapunov risk `mean_b max(0, L_b) + V(g)^2` and its gradient.
    ///
    /// The hinge contributes only where `L_b > 0`; `|.|` has subgradient 0 at 0.
    pub fn risk_and_grad(&self, rb: &RiskBatch<T>) -> Result<(T, ParamStore<T>)> {
        let (n, k, batch) = (self.state_dim, rb.k, rb.batch);
        if batch == 0 || k == 0 {
            return Err(Error::Usage("lyapunov batch is empty".into()));
        }
        check_len(batch * n, rb.current.len(), "risk current features")?;
        check_len(batch * k * n, rb.next.len(), "risk next features")?;
        // rows: [current_b, next_b1..next_bk]* then the goal row
        let rows = batch * (k + 1) + 1;
        let mut feats = Vec::with_capacity(rows * n);
        for b in 0..batch {
            feats.extend_from_slice(&rb.current[b * n..(b + 1) * n]);
            feats.extend_from_slice(&rb.next[b * k * n..(b + 1) * k * n]);
        }
        feats.extend(std::iter::repeat_n(T::zero(), n));
        let cache = self.net.forward_batch(&feats, rows)?;
        let out = &cache.output;
        let value = |r: usize| out[r].abs() + self.c_min;
        let sign = |r: usize| {
            if out[r] > T::zero() {
                T::one()
            } else if out[r] < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        };
        let inv_b = T::one() / T::of(batch as f64);
        let inv_k = T::one() / T::of(k as f64);
        let mut upstream = vec![T::zero(); rows];
        let mut hinge = T::zero();
        for b in 0..batch {
            let base = b * (k + 1);
            let v_here = value(base);
            let lie = (1..=k).map(|j| value(base + j) - v_here).sum::<T>() / T::of(k as f64);
            if lie > T::zero() {
                hinge += lie;
                upstream[base] = -sign(base) * inv_b;
                for j in 1..=k {
                    upstream[base + j] = sign(base + j) * inv_b * inv_k;
                }
            }
        }
        let goal_row = rows - 1;
        let v0 = value(goal_row);
        upstream[goal_row] = T::of(2.0) * v0 * sign(goal_row);
        let loss = hinge * inv_b + v0 * v0;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("lyapunov risk is {loss}")));
        }
        let mut grads = self.net.params.zeros_like();
        self.net.backward_into(&cache, &upstream, Some(&mut grads))?;
        Ok((loss, grads))
    }
}

/// One descent step on the Lyapunov risk over replay states; returns the
/// pre-step batch-mean point loss. Neither the world model nor the policy
/// receive gradients.
#[allow(clippy::too_many_arguments)]
pub fn nlf_update<T: Scalar, R: Rng + ?Sized>(
    nlf: &mut Nlf<T>,
    adam: &mut Adam<T>,
    wm: &WorldModel<T>,
    policy: &Policy<T>,
    xs: &[T],
    gs: &[T],
    batch: usize,
    rng: &mut R,
) -> Result<T> {
    let rb = nlf.risk_batch(wm, policy, xs, gs, batch, rng)?;
    let (loss, grads) = nlf.risk_and_grad(&rb)?;
    adam.step(&mut nlf.net.params, &grads)?;
    Ok(loss)
}
