//! Stability analysis: region-of-attraction grids, epsilon-stability checks,
//! Lyapunov value surfaces, trajectory probabilities and plot-data export.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::Policy;
use crate::env::{EnvId, EnvState, Environment};
use crate::error::{check_len, Error, Result};
use crate::lyapunov::Nlf;
use crate::nn::checkpoint::write_atomic;
use crate::rng::{self, Stream};
use crate::scalar::{cast_slice, Scalar};
use crate::world_model::{self, WorldModel};

const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// State coordinate this axis varies.
    pub index: usize,
    pub min: f64,
    pub max: f64,
    /// Lattice resolution; ignored in random mode.
    #[serde(default = "default_count")]
    pub count: usize,
}

fn default_count() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampling {
    Lattice,
    UniformRandom { n: usize, seed: u64 },
}

/// Evaluation states, expressed relative to the goal state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
    /// Offsets for every state coordinate; gridded coordinates are overwritten.
    pub fixed: Vec<f64>,
    pub sampling: Sampling,
}

impl GridSpec {
    /// `(theta, theta_dot)` plane with the cart at rest: a 50 x 100 lattice.
    pub fn pendulum_phase() -> Self {
        GridSpec {
            axes: vec![
                Axis { index: 2, min: -0.25, max: 0.25, count: 50 },
                Axis { index: 3, min: -1.5, max: 1.5, count: 100 },
            ],
            fixed: vec![0.0; 4],
            sampling: Sampling::Lattice,
        }
    }

    /// Goal +/- 2 along each Cartesian axis at zero velocity, 5000 uniform points.
    pub fn reach_cube() -> Self {
        GridSpec {
            axes: (0..3).map(|index| Axis { index, min: -2.0, max: 2.0, count: 2 }).collect(),
            fixed: vec![0.0; 6],
            sampling: Sampling::UniformRandom { n: 5000, seed: 0 },
        }
    }

    pub fn default_for(env: EnvId) -> Self {
        match env {
            EnvId::CartPole => Self::pendulum_phase(),
            EnvId::Reach => Self::reach_cube(),
        }
    }

    /// The same box with `n` uniform random points.
    pub fn random(mut self, n: usize, seed: u64) -> Self {
        self.sampling = Sampling::UniformRandom { n, seed };
        self
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        check_len(state_dim, self.fixed.len(), "grid fixed values")?;
        if self.axes.is_empty() {
            return Err(Error::Config("grid needs at least one axis".into()));
        }
        for a in &self.axes {
            if a.index >= state_dim {
                return Err(Error::Config(format!("grid axis index {} out of range", a.index)));
            }
            if !(a.min <= a.max) || !a.min.is_finite() || !a.max.is_finite() {
                return Err(Error::Config(format!("grid axis {} has bad bounds", a.index)));
            }
            if self.sampling == Sampling::Lattice && a.count < 2 {
                return Err(Error::Config(format!("grid axis {} needs count >= 2", a.index)));
            }
        }
        if let Sampling::UniformRandom { n: 0, .. } = self.sampling {
            return Err(Error::Config("random grid needs n >= 1".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match self.sampling {
            Sampling::Lattice => self.axes.iter().map(|a| a.count).product(),
            Sampling::UniformRandom { n, .. } => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Absolute states; lattices enumerate with the first axis slowest.
    pub fn points(&self, goal_state: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.validate(goal_state.len())?;
        let base: Vec<f64> = goal_state.iter().zip(&self.fixed).map(|(g, f)| g + f).collect();
        let mut out = Vec::with_capacity(self.len());
        match self.sampling {
            Sampling::Lattice => {
                for flat in 0..self.len() {
                    let mut x = base.clone();
                    let mut rem = flat;
                    for a in self.axes.iter().rev() {
                        let i = rem % a.count;
                        rem /= a.count;
                        let frac = i as f64 / (a.count - 1) as f64;
                        x[a.index] = goal_state[a.index] + a.min + frac * (a.max - a.min);
                    }
                    out.push(x);
                }
            }
            Sampling::UniformRandom { n, seed } => {
                let mut r = rng::stream(seed, Stream::Eval);
                for _ in 0..n {
                    let mut x = base.clone();
                    for a in &self.axes {
                        x[a.index] = goal_state[a.index] + rng::uniform(&mut r, a.min, a.max);
                    }
                    out.push(x);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub lie: f64,
    pub negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub env: EnvId,
    pub goal: Vec<f64>,
    pub k: usize,
    pub seed: u64,
    pub n: usize,
    pub percent_negative: f64,
    pub points: Vec<GridPoint>,
}

impl StabilityReport {
    pub fn new(env: EnvId, goal: Vec<f64>, k: usize, seed: u64, points: Vec<GridPoint>) -> Self {
        let n = points.len();
        StabilityReport {
            env,
            goal,
            k,
            seed,
            n,
            percent_negative: percent_negative(&points),
            points,
        }
    }
}

/// `100 * #(L < 0) / n`; zero for an empty set.
pub fn percent_negative(points: &[GridPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let neg = points.iter().filter(|p| p.negative).count();
    100.0 * neg as f64 / points.len() as f64
}

/// Worker pool bounded by `SACLAB_THREADS` when set.
fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("SACLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Lie derivatives at the given states under deterministic policy actions.
/// Point `i` draws its world-model noise from its own derived stream, so
/// results do not depend on chunking or thread count.
#[allow(clippy::too_many_arguments)]
pub fn lie_at_points<T: Scalar>(
    nlf: &Nlf<T>,
    wm: &WorldModel<T>,
    policy: &Policy<T>,
    states: &[Vec<f64>],
    goal: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<GridPoint>> {
    check_len(nlf.goal_dim(), goal.len(), "evaluation goal")?;
    let n = nlf.state_dim();
    let g: Vec<T> = cast_slice(goal);
    let chunks: Vec<(usize, &[Vec<f64>])> = states.chunks(CHUNK).enumerate().collect();
    let run = |&(c, chunk): &(usize, &[Vec<f64>])| -> Result<Vec<GridPoint>> {
        let b = chunk.len();
        let mut xs = Vec::with_capacity(b * n);
        for x in chunk {
            check_len(n, x.len(), "evaluation state")?;
            xs.extend(x.iter().map(|&v| T::of(v)));
        }
        let gs: Vec<T> = g.iter().copied().cycle().take(b * g.len()).collect();
        let us = policy.deterministic_batch(&xs, &gs, b)?;
        let mut noise = vec![T::zero(); b * k * n];
        for (j, row) in noise.chunks_mut((k * n).max(1)).enumerate().take(if k == 0 { 0 } else { b }) {
            let mut r = rng::derived(seed, Stream::Eval, (c * CHUNK + j) as u64);
            rng::fill_standard_normal(&mut r, row);
        }
        let lie = nlf.lie_batch(wm, &xs, &gs, &us, b, k, &noise)?;
        let ka = policy.action_dim();
        Ok(chunk
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let l = lie[j].f64();
                GridPoint {
                    x: x.clone(),
                    u: us[j * ka..(j + 1) * ka].iter().map(|v| v.f64()).collect(),
                    lie: l,
                    negative: l < 0.0,
                }
            })
            .collect())
    };
    let parts: Vec<Result<Vec<GridPoint>>> = pool()?.install(|| chunks.par_iter().map(run).collect());
    let mut out = Vec::with_capacity(states.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn goal_state_f64<T: Scalar>(nlf: &Nlf<T>, goal: &[f64]) -> Vec<f64> {
    let mut s = goal.to_vec();
    s.resize(nlf.state_dim(), 0.0);
    s
}

/// Percentage of grid states with a negative Lie derivative.
#[allow(clippy::too_many_arguments)]
pub fn roa_percent<T: Scalar>(
    nlf: &Nlf<T>,
    wm: &WorldModel<T>,
    policy: &Policy<T>,
    env: EnvId,
    grid: &GridSpec,
    goal: &[f64],
    k: usize,
    seed: u64,
) -> Result<StabilityReport> {
    check_len(nlf.goal_dim(), goal.len(), "evaluation goal")?;
    let goal_state = goal_state_f64(nlf, goal);
    let states = grid.points(&goal_state)?;
    if states.is_empty() {
        return Err(Error::Usage("evaluation grid is empty".into()));
    }
    let points = lie_at_points(nlf, wm, policy, &states, goal, k, seed)?;
    Ok(StabilityReport::new(env, goal.to_vec(), k, seed, points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCheck {
    pub epsilon: f64,
    pub n_samples: usize,
    pub condition_a_violations: Vec<Vec<f64>>,
    pub condition_b_ok: bool,
    pub v_at_goal: f64,
    /// No samples were drawn, so condition (a) holds vacuously.
    pub degenerate: bool,
    pub passed: bool,
}

/// Uniform draws in the sup-norm ball of radius `epsilon` around `center`,
/// rejecting the `1e-6` ball around it.
pub fn sample_ball<R: Rng + ?Sized>(center: &[f64], epsilon: f64, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: Vec<f64> = center.iter().map(|c| c + rng::uniform(rng, -epsilon, epsilon)).collect();
        let d = x.iter().zip(center).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if d >= 1e-6 {
            out.push(x);
        }
    }
    out
}

/// Checks decrease, positivity and the goal value on samples from the
/// epsilon ball around `goal`.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_stability_check<T: Scalar>(
    nlf: &Nlf<T>,
    wm: &WorldModel<T>,
    policy: &Policy<T>,
    goal: &[f64],
    epsilon: f64,
    n_samples: usize,
    k: usize,
    seed: u64,
) -> Result<EpsilonCheck> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    check_len(nlf.goal_dim(), goal.len(), "evaluation goal")?;
    let center = goal_state_f64(nlf, goal);
    let states = sample_ball(&center, epsilon, n_samples, &mut rng::stream(seed, Stream::Surface));
    let points = lie_at_points(nlf, wm, policy, &states, goal, k, seed)?;
    let g: Vec<T> = cast_slice(goal);
    let mut condition_b_ok = true;
    for x in &states {
        let v = nlf.value(&cast_slice(x), &g)?;
        condition_b_ok &= v > T::zero();
    }
    let violations: Vec<Vec<f64>> = points.iter().filter(|p| !(p.lie < 0.0)).map(|p| p.x.clone()).collect();
    let v_at_goal = nlf.goal_value()?.f64();
    let passed = violations.is_empty() && condition_b_ok && v_at_goal <= 5.0 * nlf.c_min.f64();
    Ok(EpsilonCheck {
        epsilon,
        n_samples,
        condition_a_violations: violations,
        condition_b_ok,
        v_at_goal,
        degenerate: n_samples == 0,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSample {
    pub t: usize,
    pub v: f64,
    pub p: f64,
    pub trajectory: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// `x_0 .. x_T`.
    pub states: Vec<Vec<f64>>,
    /// `u_0 .. u_{T-1}`.
    pub actions: Vec<Vec<f64>>,
    pub goal: Vec<f64>,
    pub init_log_density: f64,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub samples: Vec<SurfaceSample>,
    pub trajectory: TrajectoryRecord,
}

/// Rolls out one real episode with stochastic policy actions and, at every
/// step, scores `n` world-model samples of the next state by Lyapunov value
/// and predictive density.
pub fn surface_build<T: Scalar>(
    env: &Environment,
    policy: &Policy<T>,
    wm: &WorldModel<T>,
    nlf: &Nlf<T>,
    episode_seed: u64,
    n: usize,
) -> Result<Surface> {
    if n == 0 {
        return Err(Error::Config("surface needs N >= 1".into()));
    }
    let mut env_rng = rng::stream(episode_seed, Stream::Env);
    let mut policy_rng = rng::stream(episode_seed, Stream::Policy);
    let mut wm_rng = rng::stream(episode_seed, Stream::Surface);
    let mut state: EnvState = env.reset(&mut env_rng);
    let g: Vec<T> = cast_slice(&state.goal);
    let mut record = TrajectoryRecord {
        states: vec![state.observation.clone()],
        actions: Vec::new(),
        goal: state.goal.clone(),
        init_log_density: state.init_log_density,
    };
    let mut samples = Vec::new();
    while !state.done {
        let x: Vec<T> = cast_slice(&state.observation);
        let (u, _) = policy.sample(&x, &g, &mut policy_rng)?;
        let pred = wm.predict(&x, &u)?;
        let t = state.step_index;
        let draws = world_model::sample(&pred, &mut wm_rng, n);
        let mut feats = Vec::with_capacity(n * x.len());
        for d in &draws {
            feats.extend(nlf.features(d, &g)?);
        }
        let values = nlf.values_of_features(&feats, n)?;
        for (d, v) in draws.iter().zip(values) {
            let (p, _) = world_model::density(&pred, d)?;
            samples.push(SurfaceSample { t, v: v.f64(), p, trajectory: 0 });
        }
        let u64s: Vec<f64> = cast_slice(&u);
        state = env.step(&state, &u64s)?.state;
        record.actions.push(u64s);
        record.states.push(state.observation.clone());
    }
    Ok(Surface { samples, trajectory: record })
}

/// `log p(x_0) + sum_t [log P(x_{t+1} | x_t, u_t) + log pi(u_t | x_t, g)]`.
pub fn trajectory_log_probability<T: Scalar>(
    traj: &TrajectoryRecord,
    wm: &WorldModel<T>,
    policy: &Policy<T>,
) -> Result<f64> {
    check_len(traj.actions.len() + 1, traj.states.len(), "trajectory states")?;
    let g: Vec<T> = cast_slice(&traj.goal);
    let mut total = traj.init_log_density;
    for (t, u) in traj.actions.iter().enumerate() {
        let x: Vec<T> = cast_slice(&traj.states[t]);
        let uu: Vec<T> = cast_slice(u);
        let pred = wm.predict(&x, &uu)?;
        let (_, log_p) = world_model::density(&pred, &cast_slice::<f64, T>(&traj.states[t + 1]))?;
        total += log_p + policy.log_prob(&x, &g, &uu)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` selects JSON; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Flat numeric table with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

impl Table {
    pub fn from_report(report: &StabilityReport) -> Self {
        match report.env {
            EnvId::Reach => Table {
                columns: vec!["x", "y", "z", "u1", "u2", "u3", "L", "sign"],
                rows: report
                    .points
                    .iter()
                    .map(|p| {
                        let mut r = p.x[..3].to_vec();
                        r.extend(&p.u);
                        r.extend([p.lie, sign(p.lie)]);
                        r
                    })
                    .collect(),
            },
            EnvId::CartPole => Table {
                columns: vec!["theta", "theta_dot", "L", "sign"],
                rows: report.points.iter().map(|p| vec![p.x[2], p.x[3], p.lie, sign(p.lie)]).collect(),
            },
        }
    }

    pub fn from_surface(samples: &[SurfaceSample]) -> Self {
        Table {
            columns: vec!["t", "V", "P"],
            rows: samples.iter().map(|s| vec![s.t as f64, s.v, s.p]).collect(),
        }
    }

    pub fn to_bytes(&self, format: Format) -> Result<Vec<u8>> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                let fail = |e: csv::Error| Error::Format(format!("csv: {e}"));
                w.write_record(&self.columns).map_err(fail)?;
                for r in &self.rows {
                    w.write_record(r.iter().map(|v| v.to_string())).map_err(fail)?;
                }
                w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))
            }
            Format::Json => {
                let records: Vec<serde_json::Map<String, serde_json::Value>> = self
                    .rows
                    .iter()
                    .map(|r| {
                        self.columns
                            .iter()
                            .zip(r)
                            .map(|(c, &v)| (c.to_string(), serde_json::json!(v)))
                            .collect()
                    })
                    .collect();
                let mut s = serde_json::to_vec_pretty(&records).map_err(|e| Error::Format(e.to_string()))?;
                s.push(b'\n');
                Ok(s)
            }
        }
    }

    /// Writes atomically; a failed write leaves no partial file.
    pub fn write(&self, path: &Path, format: Format) -> Result<()> {
        write_atomic(path, &self.to_bytes(format)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_order_and_bounds() {
        let g = GridSpec {
            axes: vec![
                Axis { index: 0, min: -1.0, max: 1.0, count: 2 },
                Axis { index: 1, min: 0.0, max: 1.0, count: 3 },
            ],
            fixed: vec![0.0, 0.0, 7.0],
            sampling: Sampling::Lattice,
        };
        let pts = g.points(&[10.0, 0.0, 0.0]).unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![9.0, 0.0, 7.0]);
        assert_eq!(pts[1], vec![9.0, 0.5, 7.0]);
        assert_eq!(pts[5], vec![11.0, 1.0, 7.0]);
    }

    #[test]
    fn default_grids_have_5000_points() {
        assert_eq!(GridSpec::pendulum_phase().len(), 5000);
        assert_eq!(GridSpec::reach_cube().points(&[0.0; 6]).unwrap().len(), 5000);
        let bad = GridSpec { fixed: vec![0.0; 3], ..GridSpec::pendulum_phase() };
        assert!(bad.validate(4).is_err());
    }

    #[test]
    fn sign_arithmetic() {
        let mk = |l: f64| GridPoint { x: vec![0.0; 4], u: vec![0.0], lie: l, negative: l < 0.0 };
        let pts: Vec<_> = [-1.0, -0.5, -2.0, 0.3].into_iter().map(mk).collect();
        assert_eq!(percent_negative(&pts), 75.0);
        assert_eq!(percent_negative(&[mk(0.0)]), 0.0);
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut r = rng::stream(0, Stream::Surface);
        for x in sample_ball(&[1.0, 2.0], 0.1, 500, &mut r) {
            let d = (x[0] - 1.0).abs().max((x[1] - 2.0).abs());
            assert!((1e-6..=0.1).contains(&d));
        }
    }
}
