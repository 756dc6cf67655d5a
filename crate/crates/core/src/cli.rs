//! Command-line driver: `train`, `eval`, `diag`, `ablate`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::algo::{evaluate, metrics_csv, AblationMode, Algorithm, EvalSummary, TrainConfig, Trainer};
use crate::checkpoint::{self, POLICY_FILE, QUANTILE_FILE, SCALAR_FILE};
use crate::diag;
use crate::dvf::Critic;
use crate::error::Error;
use crate::stats::quantile_z_grid;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const DIAG_DIR: &str = "diag";

#[derive(Debug, Parser)]
#[command(name = "mcclt", version, about = "Distributional critics with normality-guided targets for PPO/TRPO")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run and write a run directory.
    Train(TrainArgs),
    /// Evaluate a policy checkpoint.
    Eval(EvalArgs),
    /// Compute a diagnostic from a run directory.
    Diag(DiagArgs),
    /// Train every ablation mode for each seed and tabulate final returns.
    Ablate(AblateArgs),
}

#[derive(Debug, clap::Args)]
pub struct Overrides {
    /// Config file (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Any config key, e.g. `--set n_quantiles=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; must not exist yet. Defaults to `runs/<env>-<algo>-<mode>-s<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Run directory or policy checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Environment; defaults to the run's configured env.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Act with the policy mean instead of sampling.
    #[arg(long)]
    pub deterministic: bool,
    /// Also write the JSON summary here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum DiagKind {
    StdCurve,
    ReturnStd,
    Normality,
}

#[derive(Debug, clap::Args)]
pub struct DiagArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum)]
    pub which: DiagKind,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = diag::DEFAULT_SMOOTHING)]
    pub smoothing: f64,
    #[arg(long)]
    pub deterministic: bool,
    /// Output directory; defaults to `<run>/diag`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    /// Output directory; must not exist yet.
    #[arg(long)]
    pub out: PathBuf,
    /// Train runs concurrently (output is identical to sequential).
    #[arg(long)]
    pub parallel: bool,
    #[arg(long, default_value_t = 20)]
    pub eval_episodes: usize,
    #[arg(long)]
    pub deterministic_eval: bool,
}

/// Error split that decides the exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Usage(_) => CliError::Usage(e.into()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_)) | Some(Error::Usage(_)) => CliError::Usage(e),
            _ => CliError::Runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train(a) => cmd_train(&a).map(|dir| println!("{}", dir.display())),
        Command::Eval(a) => {
            let s = cmd_eval(&a)?;
            println!("{}", serde_json::to_string_pretty(&s).map_err(anyhow::Error::from)?);
            Ok(())
        }
        Command::Diag(a) => cmd_diag(&a).map(|dir| println!("{}", dir.display())),
        Command::Ablate(a) => {
            let table = cmd_ablate(&a)?;
            print!("{table}");
            Ok(())
        }
    }
}

pub fn resolve_config(o: &Overrides, seed: Option<u64>) -> CliResult<TrainConfig> {
    let text = fs::read_to_string(&o.config)
        .map_err(|e| CliError::Usage(anyhow::anyhow!("cannot read config {}: {e}", o.config.display())))?;
    // Flags are applied on top of the file before validation, so a file may
    // omit keys that the command line supplies.
    let mut table: toml::Table = toml::from_str(&text)
        .map_err(|e| CliError::Usage(anyhow::anyhow!("{}: {}", o.config.display(), e.message().trim())))?;
    let mut put = |k: &str, v: toml::Value| {
        table.insert(k.to_string(), v);
    };
    if let Some(env) = &o.env {
        put("env", toml::Value::String(env.clone()));
    }
    if let Some(a) = &o.algo {
        put("algorithm", toml::Value::String(a.clone()));
    }
    if let Some(m) = &o.mode {
        put("mode", toml::Value::String(m.clone()));
    }
    if let Some(e) = o.epochs {
        put("epochs", toml::Value::Integer(e as i64));
    }
    if let Some(s) = seed {
        put("seed", toml::Value::Integer(s as i64));
    }
    let raw = toml::to_string(&table).map_err(|e| CliError::Usage(e.into()))?;
    let base: TrainConfig = toml::from_str(&raw)
        .map_err(|e| CliError::Usage(anyhow::anyhow!("{}: {}", o.config.display(), e.message().trim())))?;
    let cfg = if o.set.is_empty() {
        base.validate()?;
        base
    } else {
        base.with_overrides(&o.set)?
    };
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    name: &'static str,
    version: &'static str,
    seed: u64,
    env: &'a str,
    algorithm: Algorithm,
    mode: AblationMode,
    epochs: usize,
    steps_per_epoch: usize,
    env_steps: usize,
    config: &'static str,
    metrics: &'static str,
    checkpoints: Vec<String>,
}

fn create_fresh_dir(dir: &Path) -> CliResult<()> {
    if dir.exists() {
        return Err(CliError::Usage(anyhow::anyhow!(
            "output directory {} already exists; runs never overwrite earlier results",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(CliError::Runtime)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}

fn save_models(dir: &Path, trainer: &Trainer) -> CliResult<Vec<String>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    checkpoint::save_policy(&dir.join(POLICY_FILE), trainer.policy())?;
    let critic_file = match trainer.critic() {
        Critic::Quantile(q) => {
            checkpoint::save_quantile(&dir.join(QUANTILE_FILE), q)?;
            QUANTILE_FILE
        }
        Critic::Scalar(v) => {
            checkpoint::save_scalar(&dir.join(SCALAR_FILE), v)?;
            SCALAR_FILE
        }
    };
    Ok(vec![POLICY_FILE.to_string(), critic_file.to_string()])
}

/// Train into a fresh run directory.
pub fn train_run(cfg: &TrainConfig, dir: &Path, quiet: bool) -> CliResult<Trainer> {
    create_fresh_dir(dir)?;
    write(&dir.join(SNAPSHOT_FILE), cfg.to_toml_string()?)?;
    let mut trainer = Trainer::new(cfg.clone())?;
    if cfg.dump_trajectories {
        let tdir = dir.join("trajectories");
        fs::create_dir_all(&tdir).with_context(|| format!("creating {}", tdir.display()))?;
        trainer.set_dump_dir(Some(tdir));
    }
    let ckpt_root = dir.join(CHECKPOINT_DIR);
    let every = cfg.checkpoint_every;
    let metrics_path = dir.join(METRICS_FILE);
    let mut periodic: Vec<String> = Vec::new();
    let mut failure: Option<CliError> = None;
    trainer.run_with(|t| {
        let m = t.history().last().expect("one epoch ran");
        if !quiet {
            eprintln!(
                "epoch {:>4}  steps {:>8}  return {:>10.3}  len {:>6.1}  vloss {:>10.4}  kl {:.5}  w {:.4}",
                m.epoch, m.env_steps, m.ep_ret_mean, m.ep_len_mean, m.value_loss, m.mean_kl, m.mean_w
            );
        }
        std::fs::write(&metrics_path, metrics_csv(t.history()))?;
        if every > 0 && (m.epoch + 1) % every == 0 && !t.is_done() {
            let sub = format!("epoch_{}", m.epoch + 1);
            match save_models(&ckpt_root.join(&sub), t) {
                Ok(files) => periodic.extend(files.into_iter().map(|f| format!("{sub}/{f}"))),
                Err(e) => {
                    failure = Some(e);
                    return Err(Error::InvalidState("checkpoint write failed".into()));
                }
            }
        }
        Ok(())
    })
    .map_err(|e| failure.take().unwrap_or_else(|| e.into()))?;
    write(&metrics_path, metrics_csv(trainer.history()))?;
    let mut checkpoints = save_models(&ckpt_root, &trainer)?;
    checkpoints.extend(periodic);
    let manifest = Manifest {
        name: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        env: &cfg.env,
        algorithm: cfg.algorithm,
        mode: cfg.mode,
        epochs: cfg.epochs,
        steps_per_epoch: cfg.steps_per_epoch,
        env_steps: cfg.epochs * cfg.steps_per_epoch,
        config: SNAPSHOT_FILE,
        metrics: METRICS_FILE,
        checkpoints: checkpoints.into_iter().map(|c| format!("{CHECKPOINT_DIR}/{c}")).collect(),
    };
    write(
        &dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).map_err(anyhow::Error::from)? + "\n",
    )?;
    Ok(trainer)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<PathBuf> {
    let cfg = resolve_config(&a.overrides, a.seed)?;
    let dir = a.out.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{}-{}-{}-s{}", cfg.env, cfg.algorithm, cfg.mode, cfg.seed))
    });
    train_run(&cfg, &dir, a.quiet)?;
    Ok(dir)
}

/// A run directory's configuration snapshot.
pub fn load_run_config(run: &Path) -> CliResult<TrainConfig> {
    TrainConfig::from_file(&run.join(SNAPSHOT_FILE))
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: {e}", run.display())))
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<EvalSummary> {
    let (policy_path, run_cfg) = if a.checkpoint.is_dir() {
        (
            a.checkpoint.join(CHECKPOINT_DIR).join(POLICY_FILE),
            Some(load_run_config(&a.checkpoint)?),
        )
    } else {
        (a.checkpoint.clone(), None)
    };
    let env = match (&a.env, &run_cfg) {
        (Some(e), _) => e.clone(),
        (None, Some(c)) => c.env.clone(),
        (None, None) => {
            return Err(CliError::Usage(anyhow::anyhow!(
                "--env is required when --checkpoint is a file"
            )))
        }
    };
    let overrides = run_cfg.as_ref().map(|c| c.env_overrides()).unwrap_or_default();
    let policy = checkpoint::load_policy(&policy_path).map_err(|e| CliError::Runtime(e.into()))?;
    let summary = evaluate(&policy, &env, overrides, a.episodes, a.seed, a.deterministic).map_err(|e| match e {
        Error::Dimension { expected, got } => CliError::Runtime(anyhow::anyhow!(
            "checkpoint does not match environment '{env}' (expected dimension {expected}, checkpoint has {got})"
        )),
        other => other.into(),
    })?;
    if let Some(out) = &a.out {
        write(out, serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)? + "\n")?;
    }
    Ok(summary)
}

fn load_critic(run: &Path) -> CliResult<Critic> {
    let dir = run.join(CHECKPOINT_DIR);
    if dir.join(QUANTILE_FILE).exists() {
        Ok(Critic::Quantile(checkpoint::load_quantile(&dir.join(QUANTILE_FILE)).map_err(|e| CliError::Runtime(e.into()))?))
    } else {
        Ok(Critic::Scalar(checkpoint::load_scalar(&dir.join(SCALAR_FILE)).map_err(|e| CliError::Runtime(e.into()))?))
    }
}

pub fn cmd_diag(a: &DiagArgs) -> CliResult<PathBuf> {
    let cfg = load_run_config(&a.run)?;
    let env = a.env.clone().unwrap_or_else(|| cfg.env.clone());
    let overrides = cfg.env_overrides();
    let policy = checkpoint::load_policy(&a.run.join(CHECKPOINT_DIR).join(POLICY_FILE))
        .map_err(|e| CliError::Runtime(e.into()))?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join(DIAG_DIR));
    let rt = |e: Error| CliError::Runtime(e.into());
    let json = |v: &dyn erased::Json| -> CliResult<String> { Ok(v.to_json().map_err(CliError::Runtime)? + "\n") };
    match a.which {
        DiagKind::StdCurve => {
            let critic = load_critic(&a.run)?;
            if !critic.is_quantile() {
                return Err(rt(Error::UnsupportedMode(
                    "std_curve needs a quantile value function; this run used baseline_scalar".into(),
                )));
            }
            let eps = diag::rollout_episodes(&policy, &env, overrides, a.episodes, a.seed, a.deterministic).map_err(rt)?;
            let states: Vec<Vec<Vec<f64>>> = eps.into_iter().map(|e| e.states).collect();
            let curve = diag::estimated_std_curve(&critic, &states, a.smoothing).map_err(rt)?;
            let summary = diag::StdCurveSummary {
                points: curve.len(),
                smoothing: a.smoothing,
                spearman: diag::curve_trend(&curve),
                first: curve.first().map_or(f64::NAN, |p| p.1),
                last: curve.last().map_or(f64::NAN, |p| p.1),
            };
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("std_curve.csv"), diag::curve_csv(&curve))?;
            write(&out.join("std_curve.json"), json(&summary)?)?;
        }
        DiagKind::ReturnStd => {
            let table = diag::empirical_return_std(
                &policy,
                &env,
                overrides,
                a.episodes,
                &diag::TABLE_FRACTIONS,
                a.seed,
                a.deterministic,
            )
            .map_err(|e| match e {
                Error::Usage(_) => CliError::Usage(e.into()),
                other => rt(other),
            })?;
            let stds: Vec<f64> = table.iter().map(|r| r.1).collect();
            let summary = diag::ReturnStdSummary {
                episodes: a.episodes,
                fractions: diag::TABLE_FRACTIONS.to_vec(),
                increases: diag::count_increases(&stds),
                last_over_first: stds[stds.len() - 1] / stds[0],
                stds,
            };
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("return_std.csv"), diag::table_csv(&table))?;
            write(&out.join("return_std.json"), json(&summary)?)?;
        }
        DiagKind::Normality => {
            let critic = load_critic(&a.run)?;
            let q = critic.as_quantile().ok_or_else(|| {
                rt(Error::UnsupportedMode(
                    "normality needs a quantile value function; this run used baseline_scalar".into(),
                ))
            })?;
            let zgrid = quantile_z_grid(q.n_quantiles()).map_err(rt)?;
            let eps = diag::rollout_episodes(&policy, &env, overrides, a.episodes, a.seed, a.deterministic).map_err(rt)?;
            let mut csv = String::from("episode,t,gap\n");
            let mut gaps = Vec::new();
            for (e, ep) in eps.iter().enumerate() {
                for (t, s) in ep.states.iter().enumerate() {
                    let g = diag::normality_gap(&q.predict_quantiles(s).map_err(rt)?, &zgrid).map_err(rt)?;
                    csv.push_str(&format!("{e},{t},{g}\n"));
                    gaps.push(g);
                }
            }
            let summary = diag::NormalitySummary {
                states: gaps.len(),
                mean_gap: gaps.iter().sum::<f64>() / gaps.len() as f64,
                max_gap: gaps.iter().cloned().fold(0.0, f64::max),
                resolution_floor: 1.0 / (q.n_quantiles() as f64 + 1.0),
            };
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("normality.csv"), csv)?;
            write(&out.join("normality.json"), json(&summary)?)?;
        }
    }
    Ok(out)
}

mod erased {
    pub trait Json {
        fn to_json(&self) -> anyhow::Result<String>;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> anyhow::Result<String> {
            Ok(serde_json::to_string_pretty(self)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub algorithm: Algorithm,
    pub env: String,
    pub mode: AblationMode,
    pub seeds: usize,
    pub mean_return: f64,
    /// Across-seed standard error; absent with one seed.
    pub std_error: Option<f64>,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("algorithm,env,mode,seeds,mean_return,std_error\n");
    for r in rows {
        let se = r.std_error.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{},{}\n", r.algorithm, r.env, r.mode, r.seeds, r.mean_return, se));
    }
    out
}

pub fn cmd_ablate(a: &AblateArgs) -> CliResult<String> {
    if a.seeds.is_empty() {
        return Err(CliError::Usage(anyhow::anyhow!("--seeds needs at least one seed")));
    }
    let base = resolve_config(&a.overrides, None)?;
    create_fresh_dir(&a.out)?;
    let jobs: Vec<(AblationMode, u64)> = AblationMode::ALL
        .iter()
        .flat_map(|&m| a.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let run_job = |&(mode, seed): &(AblationMode, u64)| -> CliResult<f64> {
        let mut cfg = base.clone();
        cfg.mode = mode;
        cfg.seed = seed;
        cfg.validate()?;
        let dir = a.out.join("runs").join(format!("{mode}-s{seed}"));
        let trainer = train_run(&cfg, &dir, true)?;
        let s = evaluate(
            trainer.policy(),
            &cfg.env,
            cfg.env_overrides(),
            a.eval_episodes,
            seed,
            a.deterministic_eval,
        )?;
        write(
            &dir.join("eval.json"),
            serde_json::to_string_pretty(&s).map_err(anyhow::Error::from)? + "\n",
        )?;
        Ok(s.mean_return)
    };
    let finals: Vec<f64> = if a.parallel {
        jobs.par_iter().map(run_job).collect::<CliResult<_>>()?
    } else {
        jobs.iter().map(run_job).collect::<CliResult<_>>()?
    };
    let k = a.seeds.len();
    let rows: Vec<AblationRow> = AblationMode::ALL
        .iter()
        .enumerate()
        .map(|(i, &mode)| {
            let vals = &finals[i * k..(i + 1) * k];
            let n = k as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let se = (k > 1).then(|| (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt());
            AblationRow {
                algorithm: base.algorithm,
                env: base.env.clone(),
                mode,
                seeds: k,
                mean_return: mean,
                std_error: se,
            }
        })
        .collect();
    let table = ablation_csv(&rows);
    write(&a.out.join("ablation.csv"), &table)?;
    Ok(table)
}
