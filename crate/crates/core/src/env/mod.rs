//! Closed-form control tasks exposing a goal-conditioned MDP interface.
//!
//! * `cartpole`: state `(x, x_dot, theta, theta_dot)`, fixed goal at the origin.
//! * `reach`: state `(p, v)` in R^6, goal position in R^3 drawn per episode.
//!   The policy observation is `concat(state, goal)`, i.e. R^9.

mod cartpole;
mod reach;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cartpole::CartPoleParams;
pub use reach::{ReachParams, RewardMode};

use crate::error::{check_len, Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    #[serde(rename = "cartpole")]
    CartPole,
    Reach,
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(EnvId::CartPole),
            "reach" => Ok(EnvId::Reach),
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (expected `cartpole` or `reach`)"
            ))),
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvId::CartPole => "cartpole",
            EnvId::Reach => "reach",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub goal: Vec<f64>,
    pub step_index: usize,
    pub done: bool,
    /// Ended by failure rather than by the step budget.
    pub terminated: bool,
    /// Log-density of the reset distribution at this episode's initial state.
    pub init_log_density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Environment {
    CartPole(CartPoleParams),
    Reach(ReachParams),
}

impl Environment {
    pub fn cartpole() -> Self {
        Environment::CartPole(CartPoleParams::default())
    }

    pub fn reach() -> Self {
        Environment::Reach(ReachParams::default())
    }

    pub fn id(&self) -> EnvId {
        match self {
            Environment::CartPole(_) => EnvId::CartPole,
            Environment::Reach(_) => EnvId::Reach,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Environment::CartPole(p) => p.validate(),
            Environment::Reach(p) => p.validate(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Environment::CartPole(_) => 4,
            Environment::Reach(_) => 6,
        }
    }

    pub fn goal_dim(&self) -> usize {
        match self {
            Environment::CartPole(_) => 4,
            Environment::Reach(_) => 3,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Environment::CartPole(_) => 1,
            Environment::Reach(_) => 3,
        }
    }

    /// Half-width of the symmetric action box.
    pub fn action_scale(&self) -> f64 {
        match self {
            Environment::CartPole(p) => p.force_limit,
            Environment::Reach(p) => p.action_limit,
        }
    }

    pub fn max_steps(&self) -> usize {
        match self {
            Environment::CartPole(p) => p.max_steps,
            Environment::Reach(p) => p.max_steps,
        }
    }

    /// The state the goal denotes: the goal itself for cart-pole, `(g, 0)` for reach.
    pub fn goal_state<T: Scalar>(&self, goal: &[T]) -> Vec<T> {
        match self {
            Environment::CartPole(_) => goal.to_vec(),
            Environment::Reach(_) => {
                let mut s = goal.to_vec();
                s.extend([T::zero(); 3]);
                s
            }
        }
    }

    pub fn reset_seeded(&self, seed: u64) -> EnvState {
        self.reset(&mut rng::stream(seed, Stream::Env))
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        match self {
            Environment::CartPole(p) => {
                let w = p.init_noise;
                let observation = (0..4).map(|_| rng::uniform(rng, -w, w)).collect();
                EnvState {
                    observation,
                    goal: vec![0.0; 4],
                    step_index: 0,
                    done: p.max_steps == 0,
                    terminated: false,
                    init_log_density: -4.0 * (2.0 * w).ln(),
                }
            }
            Environment::Reach(p) => {
                let w = p.goal_half_width;
                let goal = (0..3).map(|_| rng::uniform(rng, -w, w)).collect();
                EnvState {
                    observation: vec![0.0; 6],
                    goal,
                    step_index: 0,
                    done: p.max_steps == 0,
                    terminated: false,
                    init_log_density: -3.0 * (2.0 * w).ln(),
                }
            }
        }
    }

    /// Clamps `u` into the action box.
    pub fn clamp_action(&self, u: &[f64]) -> Vec<f64> {
        let s = self.action_scale();
        u.iter().map(|v| v.clamp(-s, s)).collect()
    }

    /// Deterministic one-step transition of the raw state (no termination logic).
    pub fn transition(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let u = self.clamp_action(u);
        match self {
            Environment::CartPole(p) => p.integrate(x, u[0], p.dt).to_vec(),
            Environment::Reach(p) => p.integrate(x, &u).to_vec(),
        }
    }

    /// Pure reward of being in `x` with goal `g`.
    pub fn reward(&self, x: &[f64], g: &[f64]) -> f64 {
        match self {
            Environment::CartPole(p) => {
                if p.within_limits(x) {
                    1.0
                } else {
                    0.0
                }
            }
            Environment::Reach(p) => p.reward(x, g),
        }
    }

    pub fn step(&self, state: &EnvState, u: &[f64]) -> Result<StepResult> {
        if state.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        check_len(self.action_dim(), u.len(), "action")?;
        let next = self.transition(&state.observation, u);
        let reward = self.reward(&next, &state.goal);
        let step_index = state.step_index + 1;
        let terminated = match self {
            Environment::CartPole(p) => !p.within_limits(&next),
            Environment::Reach(_) => false,
        };
        let done = terminated || step_index >= self.max_steps();
        Ok(StepResult {
            state: EnvState {
                observation: next,
                goal: state.goal.clone(),
                step_index,
                done,
                terminated,
                init_log_density: state.init_log_density,
            },
            reward,
            done,
        })
    }
}
