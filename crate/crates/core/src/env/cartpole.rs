use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub force_limit: f64,
    pub angle_limit: f64,
    pub position_limit: f64,
    /// Half-width of the uniform reset distribution in every dimension.
    pub init_noise: f64,
    pub max_steps: usize,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            gravity: 9.8,
            dt: 0.02,
            force_limit: 3.0,
            angle_limit: 0.2,
            position_limit: 1.0,
            init_noise: 0.01,
            max_steps: 1000,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_half_length", self.pole_half_length),
            ("gravity", self.gravity),
            ("dt", self.dt),
            ("force_limit", self.force_limit),
            ("angle_limit", self.angle_limit),
            ("position_limit", self.position_limit),
            ("init_noise", self.init_noise),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("cartpole.{name} must be positive, got {v}")));
            }
        }
        if self.angle_limit >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("cartpole.angle_limit must be below pi/2".into()));
        }
        Ok(())
    }

    /// `(x_acc, theta_acc)` for state `(x, x_dot, theta, theta_dot)` under force `u`.
    pub fn accelerations(&self, s: &[f64], u: f64) -> (f64, f64) {
        let (theta, theta_dot) = (s[2], s[3]);
        let total = self.cart_mass + self.pole_mass;
        let ml = self.pole_mass * self.pole_half_length;
        let (sin, cos) = theta.sin_cos();
        let theta_acc = (self.gravity * sin + cos * (-u - ml * theta_dot * theta_dot * sin) / total)
            / (self.pole_half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total));
        let x_acc = (u + ml * (theta_dot * theta_dot * sin - theta_acc * cos)) / total;
        (x_acc, theta_acc)
    }

    /// Semi-implicit Euler step of length `dt`; velocities first.
    pub fn integrate(&self, s: &[f64], u: f64, dt: f64) -> [f64; 4] {
        let (x_acc, theta_acc) = self.accelerations(s, u);
        let x_dot = s[1] + dt * x_acc;
        let theta_dot = s[3] + dt * theta_acc;
        [s[0] + dt * x_dot, x_dot, s[2] + dt * theta_dot, theta_dot]
    }

    pub fn within_limits(&self, s: &[f64]) -> bool {
        s[2].abs() <= self.angle_limit && s[0].abs() <= self.position_limit
    }

    /// Total mechanical energy of the cart and a uniform rod pivoting at the cart.
    pub fn energy(&self, s: &[f64]) -> f64 {
        let total = self.cart_mass + self.pole_mass;
        let (m, l) = (self.pole_mass, self.pole_half_length);
        let (x_dot, theta, theta_dot) = (s[1], s[2], s[3]);
        0.5 * total * x_dot * x_dot
            + m * l * x_dot * theta_dot * theta.cos()
            + (2.0 / 3.0) * m * l * l * theta_dot * theta_dot
            + m * self.gravity * l * theta.cos()
    }
}
