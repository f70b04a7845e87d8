use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::nn::{polyak_update, Mlp, MlpSpec, ParamStore};
use crate::scalar::Scalar;

use super::policy::Policy;

/// Twin Q networks over `concat(x, g, u)` with Polyak-averaged targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Critics<T> {
    pub q1: Mlp<T>,
    pub q2: Mlp<T>,
    pub q1_target: Mlp<T>,
    pub q2_target: Mlp<T>,
    state_dim: usize,
    goal_dim: usize,
    action_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Q1,
    Q2,
}

impl<T: Scalar> Critics<T> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let spec = MlpSpec::with_hidden(state_dim + goal_dim + action_dim, hidden, 1);
        let q1 = Mlp::init_with_rng(spec.clone(), rng)?;
        let q2 = Mlp::init_with_rng(spec, rng)?;
        Self::from_nets(q1, q2, state_dim, goal_dim, action_dim)
    }

    /// Targets start as exact copies of the online networks.
    pub fn from_nets(
        q1: Mlp<T>,
        q2: Mlp<T>,
        state_dim: usize,
        goal_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        for q in [&q1, &q2] {
            check_len(state_dim + goal_dim + action_dim, q.input_width(), "critic input width")?;
            check_len(1, q.output_width(), "critic output width")?;
        }
        q1.params.ensure_congruent(&q2.params)?;
        Ok(Critics {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            state_dim,
            goal_dim,
            action_dim,
        })
    }

    pub fn input_width(&self) -> usize {
        self.state_dim + self.goal_dim + self.action_dim
    }

    pub fn inputs(&self, xs: &[T], gs: &[T], us: &[T], batch: usize) -> Result<Vec<T>> {
        let (n, m, k) = (self.state_dim, self.goal_dim, self.action_dim);
        check_len(batch * n, xs.len(), "critic state batch")?;
        check_len(batch * m, gs.len(), "critic goal batch")?;
        check_len(batch * k, us.len(), "critic action batch")?;
        let mut out = Vec::with_capacity(batch * (n + m + k));
        for b in 0..batch {
            out.extend_from_slice(&xs[b * n..(b + 1) * n]);
            out.extend_from_slice(&gs[b * m..(b + 1) * m]);
            out.extend_from_slice(&us[b * k..(b + 1) * k]);
        }
        Ok(out)
    }

    pub fn net(&self, head: Head) -> &Mlp<T> {
        match head {
            Head::Q1 => &self.q1,
            Head::Q2 => &self.q2,
        }
    }

    pub fn q_values(&self, head: Head, xs: &[T], gs: &[T], us: &[T], batch: usize) -> Result<Vec<T>> {
        let input = self.inputs(xs, gs, us, batch)?;
        Ok(self.net(head).forward_batch(&input, batch)?.output)
    }

    /// Soft Bellman targets `r + gamma (1 - done)(min Qbar(x', g, u') - alpha log pi(u'))`
    /// with `u'` drawn from the policy using `next_noise`.
    #[allow(clippy::too_many_arguments)]
    pub fn targets(
        &self,
        policy: &Policy<T>,
        alpha: T,
        rewards: &[T],
        x_next: &[T],
        gs: &[T],
        dones: &[bool],
        gamma: T,
        next_noise: &[T],
    ) -> Result<Vec<T>> {
        let batch = rewards.len();
        check_len(batch, dones.len(), "critic done flags")?;
        let next = policy.sample_with_noise(x_next, gs, batch, next_noise)?;
        let input = self.inputs(x_next, gs, &next.actions, batch)?;
        let t1 = self.q1_target.forward_batch(&input, batch)?.output;
        let t2 = self.q2_target.forward_batch(&input, batch)?.output;
        Ok((0..batch)
            .map(|b| {
                if dones[b] {
                    rewards[b]
                } else {
                    let soft = t1[b].min(t2[b]) - alpha * next.log_probs[b];
                    rewards[b] + gamma * soft
                }
            })
            .collect())
    }

    /// Mean squared error of one head against fixed targets, with its gradient.
    pub fn loss_and_grad(&self, head: Head, input: &[T], y: &[T]) -> Result<(T, ParamStore<T>)> {
        let batch = y.len();
        if batch == 0 {
            return Err(Error::Usage("critic batch is empty".into()));
        }
        let net = self.net(head);
        let cache = net.forward_batch(input, batch)?;
        let inv_b = T::one() / T::of(batch as f64);
        let mut loss = T::zero();
        let mut upstream = Vec::with_capacity(batch);
        for (q, &t) in cache.output.iter().zip(y) {
            let d = *q - t;
            loss += d * d;
            upstream.push(T::of(2.0) * d * inv_b);
        }
        let loss = loss * inv_b;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("critic loss is {loss}")));
        }
        let mut grads = net.params.zeros_like();
        net.backward_into(&cache, &upstream, Some(&mut grads))?;
        Ok((loss, grads))
    }

    pub fn update_targets(&mut self, tau: T) -> Result<()> {
        polyak_update(&mut self.q1_target.params, &self.q1.params, tau)?;
        polyak_update(&mut self.q2_target.params, &self.q2.params, tau)
    }
}
