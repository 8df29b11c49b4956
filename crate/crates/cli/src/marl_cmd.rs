use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use platoon::checkpoint::{Checkpoint, CommNetCheckpoint};
use platoon::commnet::{evaluate, rollout, train_marl, ActionMode, CommNetPolicy, EpisodeMetrics, MarlTrainConfig};
use platoon::envs::{CoverageConfig, CoverageEnv, EnergyConfig, EnergyEnv, EnvConfig, Environment};

use crate::util::{self, load_config, log, print_report, CliError};
use crate::Common;

enum AnyEnv {
    Coverage(CoverageEnv),
    Energy(EnergyEnv),
}

macro_rules! with_env {
    ($env:expr, $e:ident => $body:expr) => {
        match $env {
            AnyEnv::Coverage($e) => $body,
            AnyEnv::Energy($e) => $body,
        }
    };
}

fn build_env(cfg: &EnvConfig) -> Result<AnyEnv, CliError> {
    let input = |e: platoon::envs::EnvError| CliError::Input(e.to_string());
    Ok(match cfg {
        EnvConfig::Coverage(c) => AnyEnv::Coverage(CoverageEnv::new(c.clone()).map_err(input)?),
        EnvConfig::Energy(c) => AnyEnv::Energy(EnergyEnv::new(c.clone()).map_err(input)?),
    })
}

/// `coverage`, `energy` (defaults) or a path to an env JSON file.
fn load_env(spec: Option<&str>) -> Result<Option<EnvConfig>, CliError> {
    Ok(match spec {
        None => None,
        Some("coverage") => Some(EnvConfig::Coverage(CoverageConfig::default())),
        Some("energy") => Some(EnvConfig::Energy(EnergyConfig::default())),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read env config {path}: {e}")))?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Input(format!("invalid env config {path}: {e}")))?,
            )
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedTrain {
    pub env: EnvConfig,
    pub train: MarlTrainConfig,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// `coverage`, `energy`, or an env JSON file.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub batch_episodes: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg: MarlTrainConfig = load_config(args.common.config.as_deref())?;
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    if let Some(v) = args.episodes {
        cfg.episodes = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.batch_episodes {
        cfg.batch_episodes = v;
    }
    if let Some(v) = args.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = args.layers {
        cfg.layers = v;
    }
    let out = args
        .common
        .out
        .as_ref()
        .ok_or_else(|| CliError::Input("marl-train needs --out".into()))?;
    let env_cfg = load_env(args.env.as_deref())?.unwrap_or(EnvConfig::Coverage(CoverageConfig::default()));
    let resolved = ResolvedTrain {
        env: env_cfg,
        train: cfg,
    };
    let env = build_env(&resolved.env)?;
    let every = (resolved.train.episodes / 10).max(1);
    let start = Instant::now();
    let mut window = 0.0;
    let mut progress = |m: &EpisodeMetrics| {
        window += m.ret;
        if (m.episode + 1).is_multiple_of(every) {
            log(format_args!(
                "episode {} mean return {:.3} ({:.1}s)",
                m.episode + 1,
                window / every as f64,
                start.elapsed().as_secs_f64()
            ));
            window = 0.0;
        }
    };
    let trained = with_env!(&env, e => train_marl(e, &resolved.train, Some(&mut progress)))?;
    let seed = resolved.train.seed;
    let ck = Checkpoint::Commnet(CommNetCheckpoint::from_policy(
        &trained.policy,
        serde_json::to_value(&resolved).expect("config serializes"),
        seed,
    ));
    util::write_file(out, &ck.to_json())?;
    if let Some(path) = &args.common.metrics {
        let rows = trained
            .metrics
            .iter()
            .map(|m| format!("{},{},{}", m.episode, m.ret, m.loss));
        util::write_metrics(path, "episode,return,loss", rows, &resolved, seed)?;
    }
    log(format_args!("wrote {}", out.display()));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Greedy,
    Sample,
}

impl From<ModeArg> for ActionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Greedy => ActionMode::Greedy,
            ModeArg::Sample => ActionMode::Sample,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub policy: PathBuf,
    /// Defaults to the environment the policy was trained on.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Print every step of episode 0 as a text grid on stderr.
    #[arg(long)]
    pub render: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalFile {
    pub episodes: usize,
    pub mode: ModeArg,
    pub seed: u64,
}

impl Default for EvalFile {
    fn default() -> Self {
        Self {
            episodes: 100,
            mode: ModeArg::Greedy,
            seed: 0,
        }
    }
}

fn load_policy(path: &Path) -> Result<(CommNetPolicy, Option<EnvConfig>), CliError> {
    match Checkpoint::load(path)? {
        Checkpoint::Commnet(c) => {
            let env = c
                .train_config
                .get("env")
                .and_then(|v| serde_json::from_value(v.clone()).ok());
            Ok((c.to_policy()?, env))
        }
        other => Err(CliError::Input(format!(
            "{} is a {} checkpoint, expected commnet",
            path.display(),
            other.kind()
        ))),
    }
}

fn check_compatible<E: Environment>(policy: &CommNetPolicy, env: &E) -> Result<(), CliError> {
    let c = policy.config();
    let want = (env.n_agents(), env.obs_dim(), env.n_actions());
    if (c.n_agents, c.obs_dim, c.actions) != want {
        return Err(CliError::Input(format!(
            "policy expects {} agents / obs {} / {} actions but the environment has {} / {} / {}",
            c.n_agents, c.obs_dim, c.actions, want.0, want.1, want.2
        )));
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut cfg: EvalFile = load_config(args.common.config.as_deref())?;
    if let Some(v) = args.episodes {
        cfg.episodes = v;
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    let (policy, trained_env) = load_policy(&args.policy)?;
    let env_cfg = load_env(args.env.as_deref())?
        .or(trained_env)
        .unwrap_or(EnvConfig::Coverage(CoverageConfig::default()));
    let env = build_env(&env_cfg)?;
    with_env!(&env, e => check_compatible(&policy, e))?;
    let mode = ActionMode::from(cfg.mode);
    let report = with_env!(&env, e => evaluate(&policy, e, cfg.episodes, mode, cfg.seed))?;
    let mut out = serde_json::to_value(report).expect("report serializes");
    out["mode"] = serde_json::to_value(cfg.mode).expect("mode serializes");
    if let AnyEnv::Coverage(c) = &env {
        if let Ok((opt, _)) = c.brute_force_optimal() {
            out["optimum"] = opt.into();
            if opt > 0 {
                out["final_ratio"] = (report.final_reward / opt as f64).into();
            }
        }
    }
    if args.render {
        let mut frames = Vec::new();
        with_env!(&env, e => rollout(&policy, e, cfg.seed, 0, mode, Some(&mut frames)))?;
        for f in &frames {
            eprintln!("{f}");
        }
    }
    let full = serde_json::json!({ "policy": args.policy, "env": env_cfg, "eval": cfg });
    print_report(out, &full, Some(cfg.seed));
    Ok(())
}
