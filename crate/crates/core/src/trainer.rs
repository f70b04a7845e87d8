//! The joint training loop: environment interaction, replay, the per-step
//! update sequence (Lyapunov function, world model, critics, policy,
//! temperature, targets), periodic evaluation, metrics and checkpoints.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::config::RunConfig;
use crate::env::{EnvState, Environment};
use crate::error::{Error, Result};
use crate::lyapunov::{nlf_update, Nlf};
use crate::nn::{Adam, Checkpoint, Tensor};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{self, RngSnapshot, Stream, StreamRng};
use crate::scalar::cast_slice;
use crate::stability::{roa_percent, StabilityReport};
use crate::world_model::{Normalizer, WorldModel};

/// Training scalar.
pub type F = f32;

pub const METRICS_HEADER: &str =
    "step,episode_return,wm_nll,nlf_loss,critic_loss,policy_loss,alpha,roa_percent,wall_time";

const MANIFEST_KIND: &str = "saclab-run";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Nlf,
    Wm,
    Q,
    Policy,
    Alpha,
    Targets,
}

/// Loss sums since the last metrics row.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
struct Accum {
    wm_nll: f64,
    nlf_loss: f64,
    critic_loss: f64,
    policy_loss: f64,
    updates: u64,
}

impl Accum {
    fn mean(&self, v: f64) -> Option<f64> {
        (self.updates > 0).then(|| v / self.updates as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode_return: Option<f64>,
    pub wm_nll: Option<f64>,
    pub nlf_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub alpha: f64,
    pub roa_percent: Option<f64>,
    pub wall_time: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            o(self.episode_return),
            o(self.wm_nll),
            o(self.nlf_loss),
            o(self.critic_loss),
            o(self.policy_loss),
            self.alpha,
            o(self.roa_percent),
            o(self.wall_time)
        )
    }
}

struct Rngs {
    env: StreamRng,
    policy: StreamRng,
    world_model: StreamRng,
    buffer: StreamRng,
    shaping: StreamRng,
}

#[derive(Serialize, Deserialize)]
struct RngSet {
    env: RngSnapshot,
    policy: RngSnapshot,
    world_model: RngSnapshot,
    buffer: RngSnapshot,
    shaping: RngSnapshot,
}

#[derive(Serialize, Deserialize)]
struct AdamSteps {
    policy: u64,
    q1: u64,
    q2: u64,
    alpha: u64,
    wm: u64,
    nlf: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: String,
    config: RunConfig,
    config_hash: String,
    step: u64,
    episode_return: f64,
    last_return: Option<f64>,
    accum: Accum,
    env_state: EnvState,
    normalizer: Normalizer,
    buffer_capacity: usize,
    buffer_cursor: usize,
    rngs: RngSet,
    adam_steps: AdamSteps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub final_roa: f64,
    pub final_report: StabilityReport,
    pub last_episode_return: Option<f64>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub env: Environment,
    pub agent: Agent<F>,
    pub wm: WorldModel<F>,
    pub wm_opt: Adam<F>,
    pub nlf: Nlf<F>,
    pub nlf_opt: Adam<F>,
    pub buffer: ReplayBuffer,
    rngs: Rngs,
    env_state: EnvState,
    step: u64,
    episode_return: f64,
    last_return: Option<f64>,
    accum: Accum,
    trace: Option<Vec<Phase>>,
    started: Instant,
}

fn round32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let env = cfg.env.build()?;
        let seed = cfg.trainer.seed;
        let (n, m, k) = (env.state_dim(), env.goal_dim(), env.action_dim());
        let mut init = rng::stream(seed, Stream::Init);
        let agent = Agent::new(&cfg.agent, n, m, k, env.action_scale(), &mut init)?;
        let wm = WorldModel::new(n, k, &cfg.wm.hidden, &mut init)?;
        let nlf = Nlf::new(n, m, &cfg.nlf.hidden, cfg.nlf.c_min, cfg.nlf.k_mc, &mut init)?;
        let mut env_rng = rng::stream(seed, Stream::Env);
        let env_state = env.reset(&mut env_rng);
        Ok(Trainer {
            wm_opt: Adam::new(wm.params(), cfg.wm.lr)?,
            nlf_opt: Adam::new(nlf.params(), cfg.nlf.lr)?,
            buffer: ReplayBuffer::new(cfg.trainer.buffer_capacity)?,
            rngs: Rngs {
                env: env_rng,
                policy: rng::stream(seed, Stream::Policy),
                world_model: rng::stream(seed, Stream::WorldModel),
                buffer: rng::stream(seed, Stream::Buffer),
                shaping: rng::stream(seed, Stream::Shaping),
            },
            env_state,
            step: 0,
            episode_return: 0.0,
            last_return: None,
            accum: Accum::default(),
            trace: None,
            started: Instant::now(),
            cfg,
            env,
            agent,
            wm,
            nlf,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn env_state(&self) -> &EnvState {
        &self.env_state
    }

    /// Records the phase sequence of every subsequent gradient update.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[Phase]> {
        self.trace.as_deref()
    }

    fn mark(&mut self, p: Phase) {
        if let Some(t) = &mut self.trace {
            t.push(p);
        }
    }

    /// One environment step followed by the scheduled gradient updates.
    pub fn step_once(&mut self) -> Result<()> {
        let scale = self.env.action_scale();
        let x = self.env_state.observation.clone();
        let g = self.env_state.goal.clone();
        let u: Vec<f64> = if self.step < self.cfg.trainer.warmup_steps {
            (0..self.env.action_dim())
                .map(|_| rng::uniform(&mut self.rngs.policy, -scale, scale))
                .collect()
        } else {
            let (u, _) = self
                .agent
                .policy
                .sample(&cast_slice(&x), &cast_slice(&g), &mut self.rngs.policy)?;
            cast_slice(&u)
        };
        let res = self.env.step(&self.env_state, &u)?;
        let t = Transition {
            x: round32(&x),
            g: round32(&g),
            u: round32(&u),
            r: res.reward as f32 as f64,
            x_next: round32(&res.state.observation),
            done: res.state.terminated,
        };
        self.wm.normalizer.observe(&t.x, &t.u, &t.x_next);
        self.buffer.push(t)?;
        self.episode_return += res.reward;
        self.env_state = res.state;
        if self.env_state.done {
            self.last_return = Some(self.episode_return);
            self.episode_return = 0.0;
            self.env_state = self.env.reset(&mut self.rngs.env);
        }
        let before = self.step;
        self.step += 1;
        if before >= self.cfg.trainer.warmup_steps {
            for _ in 0..self.cfg.trainer.updates_per_step {
                self.update()?;
            }
        }
        Ok(())
    }

    /// One gradient step on every learned component, in fixed order.
    pub fn update(&mut self) -> Result<()> {
        let b = self.cfg.trainer.batch_size;
        let batch = self.buffer.sample_batch::<F, _>(&mut self.rngs.buffer, b)?;

        self.mark(Phase::Nlf);
        let nlf_loss = nlf_update(
            &mut self.nlf,
            &mut self.nlf_opt,
            &self.wm,
            &self.agent.policy,
            &batch.x,
            &batch.g,
            batch.len,
            &mut self.rngs.world_model,
        )?;
        self.mark(Phase::Wm);
        let wm_nll = self.wm.train_step(&mut self.wm_opt, &batch.x, &batch.u, &batch.x_next, batch.len)?;
        self.mark(Phase::Q);
        let critic = self.agent.critic_update(
            &batch,
            &self.nlf,
            &self.wm,
            &mut self.rngs.shaping,
            &mut self.rngs.policy,
        )?;
        self.mark(Phase::Policy);
        let (policy_loss, log_probs) = self.agent.policy_update(&batch, &mut self.rngs.policy)?;
        self.mark(Phase::Alpha);
        self.agent.temperature_update(&log_probs)?;
        self.mark(Phase::Targets);
        self.agent.update_targets()?;

        self.accum.nlf_loss += nlf_loss as f64;
        self.accum.wm_nll += wm_nll as f64;
        self.accum.critic_loss += 0.5 * (critic.q1_loss as f64 + critic.q2_loss as f64);
        self.accum.policy_loss += policy_loss as f64;
        self.accum.updates += 1;
        Ok(())
    }

    pub fn evaluate(&self) -> Result<StabilityReport> {
        roa_percent(
            &self.nlf,
            &self.wm,
            &self.agent.policy,
            self.env.id(),
            &self.cfg.eval_grid(),
            &self.cfg.eval_goal(),
            self.cfg.eval.k,
            self.cfg.trainer.seed,
        )
    }

    fn row(&mut self, roa: Option<f64>, reset: bool) -> MetricsRow {
        let a = self.accum;
        let row = MetricsRow {
            step: self.step,
            episode_return: self.last_return,
            wm_nll: a.mean(a.wm_nll),
            nlf_loss: a.mean(a.nlf_loss),
            critic_loss: a.mean(a.critic_loss),
            policy_loss: a.mean(a.policy_loss),
            alpha: self.agent.temperature.alpha() as f64,
            roa_percent: roa,
            wall_time: self
                .cfg
                .trainer
                .record_wall_time
                .then(|| self.started.elapsed().as_secs_f64()),
        };
        if reset {
            self.accum = Accum::default();
        }
        row
    }

    fn open_metrics(&self, path: &Path) -> Result<File> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        if self.step == 0 {
            let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
            writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
            return Ok(f);
        }
        // Resuming: keep the header and the on-cadence rows up to the checkpoint.
        let log_every = self.cfg.trainer.log_every;
        let mut kept = format!("{METRICS_HEADER}\n");
        if let Ok(text) = std::fs::read_to_string(path) {
            for line in text.lines().skip(1) {
                let step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
                if let Some(s) = step {
                    if s <= self.step && s % log_every == 0 {
                        kept.push_str(line);
                        kept.push('\n');
                    }
                }
            }
        }
        std::fs::write(path, kept).map_err(|e| Error::io(path, e))?;
        OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
    }

    /// Trains until `trainer.total_steps`, writing metrics and checkpoints.
    pub fn run(&mut self) -> Result<RunSummary> {
        let metrics_path = self.cfg.io.metrics_path();
        let checkpoint_path = self.cfg.io.checkpoint_path();
        let mut metrics = self.open_metrics(&metrics_path)?;
        let write = |f: &mut File, row: &MetricsRow| -> Result<()> {
            writeln!(f, "{}", row.to_csv())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(&metrics_path, e))
        };
        let (total, log_every, eval_every) = (
            self.cfg.trainer.total_steps,
            self.cfg.trainer.log_every,
            self.cfg.trainer.eval_every,
        );
        let mut last_report = None;
        while self.step < total {
            if let Err(e) = self.step_once() {
                if matches!(e, Error::Numeric(_)) {
                    let row = self.row(None, false);
                    write(&mut metrics, &row)?;
                }
                return Err(e);
            }
            let s = self.step;
            if s.is_multiple_of(log_every) {
                let report = if s.is_multiple_of(eval_every) { Some(self.evaluate()?) } else { None };
                let row = self.row(report.as_ref().map(|r| r.percent_negative), true);
                write(&mut metrics, &row)?;
                if report.is_some() {
                    self.save_checkpoint(&checkpoint_path)?;
                }
                last_report = report;
            } else if s == total {
                // off-cadence summary row; accumulators continue as if unlogged
                let row = self.row(None, false);
                write(&mut metrics, &row)?;
            }
        }
        let final_report = match last_report.filter(|_| self.step.is_multiple_of(eval_every)) {
            Some(r) => r,
            None => self.evaluate()?,
        };
        self.save_checkpoint(&checkpoint_path)?;
        Ok(RunSummary {
            steps: self.step,
            final_roa: final_report.percent_negative,
            final_report,
            last_episode_return: self.last_return,
            metrics_path,
            checkpoint_path,
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        let a = &self.agent;
        ck.add_store("policy", a.policy.params())?;
        ck.add_store("q1", &a.critics.q1.params)?;
        ck.add_store("q2", &a.critics.q2.params)?;
        ck.add_store("q1_target", &a.critics.q1_target.params)?;
        ck.add_store("q2_target", &a.critics.q2_target.params)?;
        ck.add_store("temperature", &a.temperature.log_alpha)?;
        ck.add_store("wm", self.wm.params())?;
        ck.add_store("nlf", self.nlf.params())?;
        for (name, opt) in [
            ("policy", &a.policy_opt),
            ("q1", &a.q1_opt),
            ("q2", &a.q2_opt),
            ("temperature", &a.temperature.adam),
            ("wm", &self.wm_opt),
            ("nlf", &self.nlf_opt),
        ] {
            ck.add_store(&format!("adam.{name}.m"), &opt.m)?;
            ck.add_store(&format!("adam.{name}.v"), &opt.v)?;
        }
        self.write_buffer(&mut ck)?;
        let manifest = Manifest {
            kind: MANIFEST_KIND.into(),
            config: self.cfg.clone(),
            config_hash: self.cfg.trajectory_hash()?,
            step: self.step,
            episode_return: self.episode_return,
            last_return: self.last_return,
            accum: self.accum,
            env_state: self.env_state.clone(),
            normalizer: self.wm.normalizer.clone(),
            buffer_capacity: self.buffer.capacity(),
            buffer_cursor: self.buffer.cursor(),
            rngs: RngSet {
                env: RngSnapshot::capture(&self.rngs.env),
                policy: RngSnapshot::capture(&self.rngs.policy),
                world_model: RngSnapshot::capture(&self.rngs.world_model),
                buffer: RngSnapshot::capture(&self.rngs.buffer),
                shaping: RngSnapshot::capture(&self.rngs.shaping),
            },
            adam_steps: AdamSteps {
                policy: a.policy_opt.step_count,
                q1: a.q1_opt.step_count,
                q2: a.q2_opt.step_count,
                alpha: a.temperature.adam.step_count,
                wm: self.wm_opt.step_count,
                nlf: self.nlf_opt.step_count,
            },
        };
        ck.manifest = serde_json::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        Ok(ck)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.checkpoint()?.save(path)
    }

    fn write_buffer(&self, ck: &mut Checkpoint) -> Result<()> {
        let len = self.buffer.len();
        let (n, m, k) = (self.env.state_dim(), self.env.goal_dim(), self.env.action_dim());
        let mut cols: [Vec<f32>; 6] = Default::default();
        for t in self.buffer.iter() {
            cols[0].extend(t.x.iter().map(|&v| v as f32));
            cols[1].extend(t.g.iter().map(|&v| v as f32));
            cols[2].extend(t.u.iter().map(|&v| v as f32));
            cols[3].push(t.r as f32);
            cols[4].extend(t.x_next.iter().map(|&v| v as f32));
            cols[5].push(if t.done { 1.0 } else { 0.0 });
        }
        let shapes = [vec![len, n], vec![len, m], vec![len, k], vec![len], vec![len, n], vec![len]];
        for ((name, data), shape) in ["x", "g", "u", "r", "x_next", "done"].iter().zip(cols).zip(shapes) {
            ck.insert(format!("buffer/{name}"), Tensor::from_vec(&shape, data)?)?;
        }
        Ok(())
    }

    /// Restores the complete training state. The configuration must describe
    /// the same trajectory; only the step budget and output paths may differ.
    pub fn from_checkpoint(cfg: RunConfig, ck: &Checkpoint) -> Result<Self> {
        let man: Manifest = serde_json::from_str(&ck.manifest)
            .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
        if man.kind != MANIFEST_KIND {
            return Err(Error::Format(format!("checkpoint kind `{}` is not a training run", man.kind)));
        }
        if man.config_hash != cfg.trajectory_hash()? {
            return Err(Error::Config(
                "configuration differs from the checkpointed run (beyond total_steps and io)".into(),
            ));
        }
        let mut t = Trainer::new(cfg)?;
        {
            let a = &mut t.agent;
            ck.read_store("policy", &mut a.policy.net.params)?;
            ck.read_store("q1", &mut a.critics.q1.params)?;
            ck.read_store("q2", &mut a.critics.q2.params)?;
            ck.read_store("q1_target", &mut a.critics.q1_target.params)?;
            ck.read_store("q2_target", &mut a.critics.q2_target.params)?;
            ck.read_store("temperature", &mut a.temperature.log_alpha)?;
            for (name, opt, steps) in [
                ("policy", &mut a.policy_opt, man.adam_steps.policy),
                ("q1", &mut a.q1_opt, man.adam_steps.q1),
                ("q2", &mut a.q2_opt, man.adam_steps.q2),
                ("temperature", &mut a.temperature.adam, man.adam_steps.alpha),
            ] {
                ck.read_store(&format!("adam.{name}.m"), &mut opt.m)?;
                ck.read_store(&format!("adam.{name}.v"), &mut opt.v)?;
                opt.step_count = steps;
            }
        }
        ck.read_store("wm", &mut t.wm.net.params)?;
        ck.read_store("nlf", &mut t.nlf.net.params)?;
        for (name, opt, steps) in [
            ("wm", &mut t.wm_opt, man.adam_steps.wm),
            ("nlf", &mut t.nlf_opt, man.adam_steps.nlf),
        ] {
            ck.read_store(&format!("adam.{name}.m"), &mut opt.m)?;
            ck.read_store(&format!("adam.{name}.v"), &mut opt.v)?;
            opt.step_count = steps;
        }
        t.buffer = read_buffer(ck, man.buffer_capacity, man.buffer_cursor)?;
        t.wm.normalizer = man.normalizer;
        t.env_state = man.env_state;
        t.step = man.step;
        t.episode_return = man.episode_return;
        t.last_return = man.last_return;
        t.accum = man.accum;
        t.rngs = Rngs {
            env: man.rngs.env.restore()?,
            policy: man.rngs.policy.restore()?,
            world_model: man.rngs.world_model.restore()?,
            buffer: man.rngs.buffer.restore()?,
            shaping: man.rngs.shaping.restore()?,
        };
        Ok(t)
    }

    /// Rebuilds a trainer from a checkpoint using the configuration stored in it.
    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let cfg = stored_config(&ck)?;
        Self::from_checkpoint(cfg, &ck)
    }
}

/// The run configuration recorded in a checkpoint.
pub fn stored_config(ck: &Checkpoint) -> Result<RunConfig> {
    #[derive(Deserialize)]
    struct Head {
        config: RunConfig,
    }
    let h: Head = serde_json::from_str(&ck.manifest)
        .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    Ok(h.config)
}

fn read_buffer(ck: &Checkpoint, capacity: usize, cursor: usize) -> Result<ReplayBuffer> {
    let get = |n: &str| ck.tensor(&format!("buffer/{n}"));
    let (x, g, u, r, xn, d) = (get("x")?, get("g")?, get("u")?, get("r")?, get("x_next")?, get("done")?);
    let len = r.shape.first().copied().unwrap_or(0);
    let width = |t: &Tensor<f32>| -> Result<usize> {
        match t.shape.as_slice() {
            [l, w] if *l == len => Ok(*w),
            _ => Err(Error::Format("malformed replay tensors".into())),
        }
    };
    let (n, m, k) = (width(x)?, width(g)?, width(u)?);
    if width(xn)? != n || d.shape != [len] {
        return Err(Error::Format("malformed replay tensors".into()));
    }
    let f = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let items = (0..len)
        .map(|i| Transition {
            x: f(&x.data[i * n..(i + 1) * n]),
            g: f(&g.data[i * m..(i + 1) * m]),
            u: f(&u.data[i * k..(i + 1) * k]),
            r: r.data[i] as f64,
            x_next: f(&xn.data[i * n..(i + 1) * n]),
            done: d.data[i] != 0.0,
        })
        .collect();
    ReplayBuffer::from_parts(capacity, items, cursor)
}
