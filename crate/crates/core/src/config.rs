//! Run configuration: a strict JSON document with every field optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::env::{CartPoleParams, EnvId, Environment, ReachParams};
use crate::error::{Error, Result};
use crate::stability::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub id: EnvId,
    pub cartpole: CartPoleParams,
    pub reach: ReachParams,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            id: EnvId::CartPole,
            cartpole: CartPoleParams::default(),
            reach: ReachParams::default(),
        }
    }
}

impl EnvSection {
    pub fn build(&self) -> Result<Environment> {
        let env = match self.id {
            EnvId::CartPole => Environment::CartPole(self.cartpole.clone()),
            EnvId::Reach => Environment::Reach(self.reach.clone()),
        };
        env.validate()?;
        Ok(env)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub total_steps: u64,
    /// Uniform random actions and no gradient updates for this many steps.
    pub warmup_steps: u64,
    pub updates_per_step: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    pub log_every: u64,
    /// Must be a multiple of `log_every`.
    pub eval_every: u64,
    /// Adds elapsed seconds to metrics rows (makes them non-reproducible).
    pub record_wall_time: bool,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            total_steps: 100_000,
            warmup_steps: 1000,
            updates_per_step: 1,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            seed: 0,
            log_every: 1000,
            eval_every: 10_000,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WmSection {
    pub hidden: Vec<usize>,
    pub lr: f64,
}

impl Default for WmSection {
    fn default() -> Self {
        WmSection {
            hidden: vec![256, 256],
            lr: 3e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlfSection {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub c_min: f64,
    pub k_mc: usize,
}

impl Default for NlfSection {
    fn default() -> Self {
        NlfSection {
            hidden: vec![64, 64],
            lr: 3e-4,
            c_min: 1e-3,
            k_mc: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Defaults to the environment's standard grid.
    pub grid: Option<GridSpec>,
    /// Monte-Carlo samples per Lie derivative; 0 evaluates at the predicted mean.
    pub k: usize,
    /// Defaults to the origin (cart-pole) or the centre of the goal box (reach).
    pub goal: Option<Vec<f64>>,
    pub epsilon: f64,
    pub epsilon_samples: usize,
    pub surface_n: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            grid: None,
            k: 16,
            goal: None,
            epsilon: 0.05,
            epsilon_samples: 1000,
            surface_n: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub out_dir: PathBuf,
    pub metrics_file: String,
    pub checkpoint_file: String,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            out_dir: PathBuf::from("runs/default"),
            metrics_file: "metrics.csv".into(),
            checkpoint_file: "checkpoint.sacl".into(),
        }
    }
}

impl IoSection {
    pub fn metrics_path(&self) -> PathBuf {
        self.out_dir.join(&self.metrics_file)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join(&self.checkpoint_file)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSection,
    pub trainer: TrainerSection,
    pub agent: AgentConfig,
    pub wm: WmSection,
    pub nlf: NlfSection,
    pub eval: EvalSection,
    pub io: IoSection,
}

impl RunConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(v)
            .map_err(|e| Error::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(s);
        let cfg: RunConfig = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Error::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (if given), applies `KEY=VALUE` overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut v = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.trainer;
        if t.total_steps == 0 {
            return Err(Error::Config("trainer.total_steps must be positive".into()));
        }
        if t.batch_size == 0 || t.updates_per_step == 0 {
            return Err(Error::Config("trainer.batch_size and updates_per_step must be positive".into()));
        }
        if t.buffer_capacity == 0 {
            return Err(Error::Config("trainer.buffer_capacity must be positive".into()));
        }
        if t.log_every == 0 || t.eval_every == 0 || !t.eval_every.is_multiple_of(t.log_every) {
            return Err(Error::Config(
                "trainer.eval_every must be a positive multiple of trainer.log_every".into(),
            ));
        }
        self.agent.validate()?;
        for (name, lr) in [("wm.lr", self.wm.lr), ("nlf.lr", self.nlf.lr)] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.wm.hidden.contains(&0) || self.nlf.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.nlf.c_min > 0.0) || self.nlf.k_mc == 0 {
            return Err(Error::Config("nlf.c_min and nlf.k_mc must be positive".into()));
        }
        if !(self.eval.epsilon > 0.0) || self.eval.surface_n == 0 {
            return Err(Error::Config("eval.epsilon and eval.surface_n must be positive".into()));
        }
        let env = self.env.build()?;
        self.eval_grid().validate(env.state_dim())?;
        if let Some(g) = &self.eval.goal {
            if g.len() != env.goal_dim() {
                return Err(Error::Config(format!(
                    "eval.goal has {} entries, expected {}",
                    g.len(),
                    env.goal_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn eval_grid(&self) -> GridSpec {
        self.eval.grid.clone().unwrap_or_else(|| GridSpec::default_for(self.env.id))
    }

    pub fn eval_goal(&self) -> Vec<f64> {
        self.eval.goal.clone().unwrap_or_else(|| match self.env.id {
            EnvId::CartPole => vec![0.0; 4],
            EnvId::Reach => vec![0.0; 3],
        })
    }

    /// Identity of everything that shapes a trajectory; the step budget and
    /// output locations are excluded so a run can be extended on resume.
    pub fn trajectory_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.trainer.total_steps = 0;
        c.trainer.record_wall_time = false;
        c.io = IoSection::default();
        let bytes = serde_json::to_vec(&c).map_err(|e| Error::Format(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(bytes)))
    }
}

/// Sets `a.b.c=value` inside a JSON document. The value is parsed as JSON and
/// falls back to a plain string; `env=<id>` is shorthand for `env.id=<id>`.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not KEY=VALUE")))?;
    let key = if key == "env" { "env.id" } else { key };
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{spec}` has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            _ => {
                return Err(Error::Config(format!(
                    "override `{spec}`: `{}` is not an object",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("override key has at least one segment")
}
