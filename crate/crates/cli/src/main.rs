use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use saclab::agent::ObjectiveMode;
use saclab::config::RunConfig;
use saclab::nn::Checkpoint;
use saclab::stability::{roa_percent, surface_build, Format, GridSpec, Table};
use saclab::trainer::{stored_config, Trainer};
use saclab::{Error, Result};

#[derive(Parser)]
#[command(name = "saclab", version, about = "Train and analyse Lyapunov-guided soft actor-critic agents")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one agent.
    Train(TrainArgs),
    /// Percentage of negative Lie derivatives over an evaluation grid.
    EvalRoa(EvalArgs),
    /// Lyapunov value / density samples along one rollout.
    Surface(SurfaceArgs),
    /// Train a mode x seed matrix and summarise final ROA percentages.
    Compare(CompareArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// KEY=VALUE settings applied on top of the file (dotted keys).
    #[arg(long = "override", value_name = "KEY=VALUE", num_args = 1.., action = clap::ArgAction::Append)]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, seed: Option<u64>) -> Result<RunConfig> {
        let mut ov = self.overrides.clone();
        if let Some(s) = seed {
            ov.push(format!("trainer.seed={s}"));
        }
        RunConfig::load(self.config.as_deref(), &ov)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run of the same configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// reach-cube, pendulum-phase or random:N (default: the run's evaluation grid).
    #[arg(long)]
    grid: Option<String>,
    /// Monte-Carlo samples per point; 0 uses the predicted mean.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Seed for random grids and world-model noise (default: the run's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SurfaceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "N", default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated modes, e.g. sac,sacla:0.5,sacla:1.0,polyc
    #[arg(long, value_delimiter = ',', default_value = "sac,sacla:0.5,sacla:1.0,polyc")]
    modes: Vec<String>,
    /// Number of seeds per mode, counting up from the configured seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Summary CSV (default: <out_dir>/compare.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_grid(spec: &str, cfg: &RunConfig, seed: u64) -> Result<GridSpec> {
    match spec {
        "reach-cube" => Ok(GridSpec::reach_cube()),
        "pendulum-phase" => Ok(GridSpec::pendulum_phase()),
        s => match s.strip_prefix("random:").map(str::parse::<usize>) {
            Some(Ok(n)) if n > 0 => Ok(cfg.eval_grid().random(n, seed)),
            _ => Err(Error::Usage(format!(
                "unknown grid `{spec}` (expected reach-cube, pendulum-phase or random:N)"
            ))),
        },
    }
}

fn load_checkpoint(path: &Path) -> Result<(RunConfig, Trainer)> {
    let ck = Checkpoint::load(path)?;
    let cfg = stored_config(&ck)?;
    let t = Trainer::from_checkpoint(cfg.clone(), &ck)?;
    Ok((cfg, t))
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.load(a.seed)?;
    let mut t = match &a.resume {
        Some(p) => Trainer::from_checkpoint(cfg, &Checkpoint::load(p)?)?,
        None => Trainer::new(cfg)?,
    };
    let s = t.run()?;
    println!("steps {} roa_percent {:.2}", s.steps, s.final_roa);
    println!("metrics {}", s.metrics_path.display());
    println!("checkpoint {}", s.checkpoint_path.display());
    Ok(())
}

fn eval_roa(a: EvalArgs) -> Result<()> {
    let (cfg, t) = load_checkpoint(&a.checkpoint)?;
    let seed = a.seed.unwrap_or(cfg.trainer.seed);
    let grid = match &a.grid {
        Some(g) => parse_grid(g, &cfg, seed)?,
        None => cfg.eval_grid(),
    };
    let report = roa_percent(
        &t.nlf,
        &t.wm,
        &t.agent.policy,
        t.env.id(),
        &grid,
        &cfg.eval_goal(),
        a.k.unwrap_or(cfg.eval.k),
        seed,
    )?;
    Table::from_report(&report).write(&a.out, Format::from_path(&a.out))?;
    println!("{:.2}", report.percent_negative);
    Ok(())
}

fn surface(a: SurfaceArgs) -> Result<()> {
    let (_, t) = load_checkpoint(&a.checkpoint)?;
    let s = surface_build(&t.env, &t.agent.policy, &t.wm, &t.nlf, a.seed, a.n)?;
    Table::from_surface(&s.samples).write(&a.out, Format::from_path(&a.out))?;
    println!("steps {} samples {}", s.trajectory.len(), s.samples.len());
    Ok(())
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn compare(a: CompareArgs) -> Result<()> {
    let base = a.config.load(None)?;
    let modes = a
        .modes
        .iter()
        .map(|m| ObjectiveMode::parse(m.trim()))
        .collect::<Result<Vec<_>>>()?;
    if a.seeds == 0 {
        return Err(Error::Usage("--seeds must be at least 1".into()));
    }
    let mut lines = vec!["mode,mean_percent_negative,std_across_seeds,seeds,failed".to_string()];
    let mut failure: Option<Error> = None;
    for (label, mode) in a.modes.iter().zip(&modes) {
        let mut values = Vec::new();
        let mut failed = 0;
        for i in 0..a.seeds {
            let mut cfg = base.clone();
            cfg.agent.mode = *mode;
            cfg.trainer.seed = base.trainer.seed + i;
            let cell = format!("{}_seed{}", label.trim().replace(':', "_"), cfg.trainer.seed);
            cfg.io.out_dir = base.io.out_dir.join(cell);
            match Trainer::new(cfg).and_then(|mut t| t.run()) {
                Ok(s) => values.push(s.final_roa),
                Err(e) => {
                    eprintln!("error: {} seed {}: {e}", label.trim(), base.trainer.seed + i);
                    failed += 1;
                    failure.get_or_insert(e);
                }
            }
        }
        let mean = if values.is_empty() {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        lines.push(format!("{},{},{},{},{}", label.trim(), mean, sample_std(&values), values.len(), failed));
        println!("{} {:.2} +/- {:.2}", label.trim(), mean, sample_std(&values));
    }
    let out = a.out.unwrap_or_else(|| base.io.out_dir.join("compare.csv"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&out, lines.join("\n") + "\n").map_err(|e| Error::io(&out, e))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Train(a) => train(a),
        Cmd::EvalRoa(a) => eval_roa(a),
        Cmd::Surface(a) => surface(a),
        Cmd::Compare(a) => compare(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
