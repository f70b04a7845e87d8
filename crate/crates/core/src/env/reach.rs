use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Dense,
    Sparse,
}

/// Point mass in 3-D driven by acceleration commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachParams {
    pub dt: f64,
    pub damping: f64,
    pub action_limit: f64,
    pub goal_half_width: f64,
    pub success_radius: f64,
    pub reward_mode: RewardMode,
    pub max_steps: usize,
}

impl Default for ReachParams {
    fn default() -> Self {
        ReachParams {
            dt: 0.05,
            damping: 0.25,
            action_limit: 1.0,
            goal_half_width: 1.0,
            success_radius: 0.05,
            reward_mode: RewardMode::Dense,
            max_steps: 200,
        }
    }
}

impl ReachParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dt", self.dt),
            ("damping", self.damping),
            ("action_limit", self.action_limit),
            ("goal_half_width", self.goal_half_width),
            ("success_radius", self.success_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("reach.{name} must be positive, got {v}")));
            }
        }
        if self.success_radius >= self.goal_half_width {
            return Err(Error::Config(
                "reach.success_radius must be smaller than reach.goal_half_width".into(),
            ));
        }
        Ok(())
    }

    /// Damped double integrator, semi-implicit Euler. State is `(p, v)`.
    pub fn integrate(&self, s: &[f64], u: &[f64]) -> [f64; 6] {
        let mut next = [0.0; 6];
        for i in 0..3 {
            let v = s[3 + i] + self.dt * (u[i] - self.damping * s[3 + i]);
            next[3 + i] = v;
            next[i] = s[i] + self.dt * v;
        }
        next
    }

    pub fn distance(s: &[f64], g: &[f64]) -> f64 {
        (0..3).map(|i| (s[i] - g[i]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn reward(&self, s: &[f64], g: &[f64]) -> f64 {
        let d = Self::distance(s, g);
        match self.reward_mode {
            RewardMode::Dense => -d,
            RewardMode::Sparse => {
                if d < self.success_radius {
                    0.0
                } else {
                    -1.0
                }
            }
        }
    }
}
