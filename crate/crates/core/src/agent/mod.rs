//! Soft actor-critic with a squashed Gaussian policy, twin critics, automatic
//! temperature and pluggable reward shaping.

pub mod critic;
pub mod objective;
pub mod policy;
pub mod temperature;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use critic::{Critics, Head};
pub use objective::{augmented_rewards, ObjectiveKind, ObjectiveMode};
pub use policy::{Policy, PolicySample};
pub use temperature::Temperature;

use crate::error::{Error, Result};
use crate::lyapunov::Nlf;
use crate::nn::{Adam, ParamStore};
use crate::replay::Batch;
use crate::rng;
use crate::scalar::Scalar;
use crate::world_model::WorldModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub init_alpha: f64,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
    pub mode: ObjectiveMode,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![256, 256],
            gamma: 0.99,
            tau: 0.005,
            lr_policy: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
            init_alpha: 1.0,
            target_entropy: None,
            mode: ObjectiveMode::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        for (name, lr) in [
            ("lr_policy", self.lr_policy),
            ("lr_critic", self.lr_critic),
            ("lr_alpha", self.lr_alpha),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        self.mode.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CriticStats<T> {
    pub q1_loss: T,
    pub q2_loss: T,
    pub mean_reward: T,
}

/// Critic MSE losses and gradients against soft targets built from `rewards`
/// (already shaped) and fixed next-action noise.
#[allow(clippy::too_many_arguments)]
pub fn critic_losses<T: Scalar>(
    critics: &Critics<T>,
    policy: &Policy<T>,
    alpha: T,
    batch: &Batch<T>,
    rewards: &[T],
    gamma: T,
    next_noise: &[T],
) -> Result<(T, ParamStore<T>, T, ParamStore<T>)> {
    if batch.is_empty() {
        return Err(Error::Usage("critic batch is empty".into()));
    }
    let y = critics.targets(policy, alpha, rewards, &batch.x_next, &batch.g, &batch.done, gamma, next_noise)?;
    let input = critics.inputs(&batch.x, &batch.g, &batch.u, batch.len)?;
    let (l1, g1) = critics.loss_and_grad(Head::Q1, &input, &y)?;
    let (l2, g2) = critics.loss_and_grad(Head::Q2, &input, &y)?;
    Ok((l1, g1, l2, g2))
}

/// `mean(alpha log pi(u|x,g) - min(Q1, Q2)(x, g, u))` with reparameterized `u`,
/// its policy gradient (critic parameters frozen) and the sampled log-probs.
pub fn policy_loss<T: Scalar>(
    policy: &Policy<T>,
    critics: &Critics<T>,
    alpha: T,
    xs: &[T],
    gs: &[T],
    batch: usize,
    noise: &[T],
) -> Result<(T, ParamStore<T>, Vec<T>)> {
    if batch == 0 {
        return Err(Error::Usage("policy batch is empty".into()));
    }
    let k = policy.action_dim();
    let sample = policy.sample_with_noise(xs, gs, batch, noise)?;
    let input = critics.inputs(xs, gs, &sample.actions, batch)?;
    let c1 = critics.q1.forward_batch(&input, batch)?;
    let c2 = critics.q2.forward_batch(&input, batch)?;
    let inv_b = T::one() / T::of(batch as f64);
    let mut loss = T::zero();
    let (mut up1, mut up2) = (vec![T::zero(); batch], vec![T::zero(); batch]);
    for b in 0..batch {
        let (q1, q2) = (c1.output[b], c2.output[b]);
        loss += alpha * sample.log_probs[b] - q1.min(q2);
        if q1 <= q2 {
            up1[b] = -inv_b;
        } else {
            up2[b] = -inv_b;
        }
    }
    let loss = loss * inv_b;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("policy loss is {loss}")));
    }
    let d1 = critics.q1.backward_into(&c1, &up1, None)?;
    let d2 = critics.q2.backward_into(&c2, &up2, None)?;
    let width = critics.input_width();
    let mut d_actions = Vec::with_capacity(batch * k);
    for b in 0..batch {
        for i in width - k..width {
            d_actions.push(d1[b * width + i] + d2[b * width + i]);
        }
    }
    let d_lp = vec![alpha * inv_b; batch];
    let grads = policy.backward(&sample, &d_actions, &d_lp)?;
    Ok((loss, grads, sample.log_probs))
}

/// Policy, critics, temperature and their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent<T> {
    pub policy: Policy<T>,
    pub policy_opt: Adam<T>,
    pub critics: Critics<T>,
    pub q1_opt: Adam<T>,
    pub q2_opt: Adam<T>,
    pub temperature: Temperature<T>,
    pub mode: ObjectiveMode,
    pub gamma: T,
    pub tau: T,
}

impl<T: Scalar> Agent<T> {
    pub fn new<R: Rng + ?Sized>(
        cfg: &AgentConfig,
        state_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        action_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let policy = Policy::new(state_dim, goal_dim, action_dim, action_scale, &cfg.hidden, rng)?;
        let critics = Critics::new(state_dim, goal_dim, action_dim, &cfg.hidden, rng)?;
        let target_entropy = cfg.target_entropy.unwrap_or(-(action_dim as f64));
        Ok(Agent {
            policy_opt: Adam::new(policy.params(), cfg.lr_policy)?,
            q1_opt: Adam::new(&critics.q1.params, cfg.lr_critic)?,
            q2_opt: Adam::new(&critics.q2.params, cfg.lr_critic)?,
            temperature: Temperature::new(cfg.init_alpha, target_entropy, cfg.lr_alpha)?,
            policy,
            critics,
            mode: cfg.mode,
            gamma: T::of(cfg.gamma),
            tau: T::of(cfg.tau),
        })
    }

    /// One step on each critic. Shaping noise comes from `shaping_rng`, the
    /// next-action noise from `policy_rng`, so the policy stream is the same
    /// whether or not the Lyapunov function is consulted.
    pub fn critic_update<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &mut self,
        batch: &Batch<T>,
        nlf: &Nlf<T>,
        wm: &WorldModel<T>,
        shaping_rng: &mut R1,
        policy_rng: &mut R2,
    ) -> Result<CriticStats<T>> {
        if batch.is_empty() {
            return Err(Error::Usage("critic batch is empty".into()));
        }
        let rewards = augmented_rewards(&self.mode, &batch.r, &batch.x, &batch.g, &batch.u, nlf, wm, shaping_rng)?;
        let mut noise = vec![T::zero(); batch.len * self.policy.action_dim()];
        rng::fill_standard_normal(policy_rng, &mut noise);
        let alpha = self.temperature.alpha();
        let (l1, g1, l2, g2) = critic_losses(&self.critics, &self.policy, alpha, batch, &rewards, self.gamma, &noise)?;
        self.q1_opt.step(&mut self.critics.q1.params, &g1)?;
        self.q2_opt.step(&mut self.critics.q2.params, &g2)?;
        let mean_reward = rewards.iter().copied().sum::<T>() / T::of(batch.len as f64);
        Ok(CriticStats {
            q1_loss: l1,
            q2_loss: l2,
            mean_reward,
        })
    }

    /// One policy step; returns the pre-step loss and the sampled log-probs.
    pub fn policy_update<R: Rng + ?Sized>(&mut self, batch: &Batch<T>, rng: &mut R) -> Result<(T, Vec<T>)> {
        let mut noise = vec![T::zero(); batch.len * self.policy.action_dim()];
        rng::fill_standard_normal(rng, &mut noise);
        let alpha = self.temperature.alpha();
        let (loss, grads, lp) = policy_loss(&self.policy, &self.critics, alpha, &batch.x, &batch.g, batch.len, &noise)?;
        self.policy_opt.step(&mut self.policy.net.params, &grads)?;
        Ok((loss, lp))
    }

    pub fn temperature_update(&mut self, log_probs: &[T]) -> Result<T> {
        self.temperature.update(log_probs)
    }

    pub fn update_targets(&mut self) -> Result<()> {
        self.critics.update_targets(self.tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mlp, MlpSpec};
    use crate::rng::{stream, Stream};

    #[test]
    fn zero_alpha_constant_q_gives_zero_policy_gradient() {
        let policy = Policy::<f64>::new(4, 4, 1, 3.0, &[6], &mut stream(0, Stream::Init)).unwrap();
        let mut q = Mlp::zeros(MlpSpec::new(vec![9, 4, 1])).unwrap();
        q.params.get_mut("layer1.bias").unwrap().data[0] = 2.5;
        let critics = Critics::from_nets(q.clone(), q, 4, 4, 1).unwrap();
        let xs = vec![0.1; 8];
        let (loss, g, _) = policy_loss(&policy, &critics, 0.0, &xs, &[0.0; 8], 2, &[0.3, -0.7]).unwrap();
        assert_eq!(loss, -2.5);
        assert!(g.flat().all(|v| v == 0.0));
    }

    #[test]
    fn gamma_zero_and_done_targets() {
        let policy = Policy::<f64>::new(4, 4, 1, 3.0, &[6], &mut stream(0, Stream::Init)).unwrap();
        let critics = Critics::<f64>::new(4, 4, 1, &[6], &mut stream(1, Stream::Init)).unwrap();
        let xn = vec![0.3; 8];
        let r = [1.5, -0.5];
        let y = critics.targets(&policy, 0.2, &r, &xn, &[0.0; 8], &[false, false], 0.0, &[0.1, 0.2]).unwrap();
        assert_eq!(y, r.to_vec());
        let y = critics.targets(&policy, 0.2, &r, &xn, &[0.0; 8], &[true, false], 0.99, &[0.1, 0.2]).unwrap();
        assert_eq!(y[0], 1.5);
        assert_ne!(y[1], -0.5);
    }
}
