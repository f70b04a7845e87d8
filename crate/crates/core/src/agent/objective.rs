use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::Nlf;
use crate::rng;
use crate::scalar::Scalar;
use crate::world_model::WorldModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Sac,
    Sacla,
    Polyc,
}

/// How the critic's per-step reward is built from the environment reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveMode {
    pub kind: ObjectiveKind,
    /// Weight of the Lyapunov term (`sacla`).
    pub beta: f64,
    /// Bonus for a negative Lie derivative (`polyc`).
    pub kappa: f64,
    /// Upper clip on the Lyapunov term (`sacla`).
    pub bonus_clip: f64,
}

impl Default for ObjectiveMode {
    fn default() -> Self {
        ObjectiveMode {
            kind: ObjectiveKind::Sac,
            beta: 0.5,
            kappa: 0.1,
            bonus_clip: 10.0,
        }
    }
}

impl ObjectiveMode {
    pub fn sac() -> Self {
        Self::default()
    }

    pub fn sacla(beta: f64) -> Self {
        ObjectiveMode {
            kind: ObjectiveKind::Sacla,
            beta,
            ..Self::default()
        }
    }

    pub fn polyc(kappa: f64) -> Self {
        ObjectiveMode {
            kind: ObjectiveKind::Polyc,
            kappa,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.kappa > 0.0) || !(self.bonus_clip > 0.0) {
            return Err(Error::Config("kappa and bonus_clip must be positive".into()));
        }
        Ok(())
    }

    /// Parses `sac`, `sacla:<beta>`, `sacla` (beta 0.5) or `polyc[:<kappa>]`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let num = |a: &str| {
            a.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number `{a}` in mode `{s}`")))
        };
        let mode = match (kind, arg) {
            ("sac", None) => Self::sac(),
            ("sacla", None) => Self::sacla(0.5),
            ("sacla", Some(a)) => Self::sacla(num(a)?),
            ("polyc", None) => Self::polyc(0.1),
            ("polyc", Some(a)) => Self::polyc(num(a)?),
            _ => return Err(Error::Config(format!("unknown objective mode `{s}`"))),
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn label(&self) -> String {
        match self.kind {
            ObjectiveKind::Sac => "sac".into(),
            ObjectiveKind::Sacla => format!("sacla:{}", self.beta),
            ObjectiveKind::Polyc => format!("polyc:{}", self.kappa),
        }
    }

    /// Whether computing the reward consults the Lyapunov function at all.
    pub fn uses_lyapunov(&self) -> bool {
        match self.kind {
            ObjectiveKind::Sac => false,
            ObjectiveKind::Sacla => self.beta != 0.0,
            ObjectiveKind::Polyc => true,
        }
    }
}

/// Rewards seen by the critic, computed with the current NLF and world model.
///
/// `sac`: `r`. `sacla`: `(1 - beta) r + beta min(point_loss, clip)`.
/// `polyc`: `r + kappa * 1[L < 0]`. Randomness is drawn from `rng` only when
/// the Lyapunov function is consulted.
#[allow(clippy::too_many_arguments)]
pub fn augmented_rewards<T: Scalar, R: Rng + ?Sized>(
    mode: &ObjectiveMode,
    rewards: &[T],
    xs: &[T],
    gs: &[T],
    us: &[T],
    nlf: &Nlf<T>,
    wm: &WorldModel<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    if !mode.uses_lyapunov() {
        return Ok(rewards.to_vec());
    }
    let batch = rewards.len();
    let mut noise = vec![T::zero(); batch * nlf.k_mc * nlf.state_dim()];
    rng::fill_standard_normal(rng, &mut noise);
    match mode.kind {
        ObjectiveKind::Sacla => {
            let losses = nlf.point_loss_batch(wm, xs, gs, us, batch, &noise)?;
            let (beta, clip) = (T::of(mode.beta), T::of(mode.bonus_clip));
            Ok(rewards
                .iter()
                .zip(losses)
                .map(|(&r, l)| (T::one() - beta) * r + beta * l.min(clip))
                .collect())
        }
        ObjectiveKind::Polyc => {
            let lie = nlf.lie_batch(wm, xs, gs, us, batch, nlf.k_mc, &noise)?;
            let kappa = T::of(mode.kappa);
            Ok(rewards
                .iter()
                .zip(lie)
                .map(|(&r, l)| if l < T::zero() { r + kappa } else { r })
                .collect())
        }
        ObjectiveKind::Sac => unreachable!("handled above"),
    }
}
