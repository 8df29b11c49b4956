use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use platoon::auction::{
    run_auction, train_auction, AllocationMode, AuctionMetrics, AuctionTrainConfig, BidProfile,
    MonotonicNet, ValuationSampler, ValueDistribution,
};
use platoon::checkpoint::{Checkpoint, MyersonCheckpoint};
use platoon::mechanisms::{
    audit as run_audit, monte_carlo_revenue, AnalyticMyerson, AuditConfig, FirstPrice, Mechanism,
    SecondPrice, VirtualValuation,
};

use crate::util::{self, load_config, log, parse_distribution, print_report, CliError};
use crate::Common;

/// Training config file: the trainer settings plus the valuation law.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFile {
    #[serde(flatten)]
    pub train: AuctionTrainConfig,
    pub distribution: ValueDistribution,
}

impl Default for TrainFile {
    fn default() -> Self {
        Self {
            train: AuctionTrainConfig::default(),
            distribution: ValueDistribution::UNIT_UNIFORM,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub bidders: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Valuation law, e.g. `uniform:0:1` or `exponential:1:5`.
    #[arg(long, value_parser = parse_distribution)]
    pub dist: Option<ValueDistribution>,
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg: TrainFile = load_config(args.common.config.as_deref())?;
    if let Some(s) = args.common.seed {
        cfg.train.seed = s;
    }
    if let Some(v) = args.iterations {
        cfg.train.iterations = v;
    }
    if let Some(v) = args.bidders {
        cfg.train.n_bidders = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(d) = args.dist {
        cfg.distribution = d;
    }
    let out = args
        .common
        .out
        .as_ref()
        .ok_or_else(|| CliError::Input("auction-train needs --out".into()))?;
    let seed = cfg.train.seed;
    let sampler = ValuationSampler::iid(cfg.distribution, cfg.train.n_bidders, seed);
    let every = (cfg.train.iterations / 10).max(1);
    let mut progress = |m: &AuctionMetrics| {
        if (m.iteration + 1).is_multiple_of(every) {
            log(format_args!(
                "iter {} loss {:.5} revenue {:.5} ({:.1}s)",
                m.iteration + 1,
                m.loss,
                m.revenue_hard,
                m.seconds
            ));
        }
    };
    let trained = train_auction(&cfg.train, &sampler, Some(&mut progress))?;
    let ck = Checkpoint::Myerson(MyersonCheckpoint::from_net(
        &trained.net,
        serde_json::to_value(&cfg).expect("config serializes"),
        seed,
    ));
    util::write_file(out, &ck.to_json())?;
    if let Some(path) = &args.common.metrics {
        let rows = trained
            .metrics
            .iter()
            .map(|m| format!("{},{},{},{}", m.iteration, m.loss, m.revenue_hard, m.seconds));
        util::write_metrics(path, "iter,loss,revenue_hard,seconds", rows, &cfg, seed)?;
    }
    log(format_args!("wrote {}", out.display()));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Spa,
    Fpa,
    /// Closed-form Myerson for the valuation law.
    Myerson,
}

/// Which mechanism to measure and against which valuation law.
#[derive(Args, Debug, Clone)]
pub struct Target {
    /// Trained or preset checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mechanism: Option<MechanismKind>,
    #[arg(long, value_parser = parse_distribution)]
    pub dist: Option<ValueDistribution>,
    #[arg(long)]
    pub bidders: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    pub model: Option<PathBuf>,
    pub mechanism: Option<MechanismKind>,
    pub distribution: Option<ValueDistribution>,
    pub bidders: Option<usize>,
}

impl TargetConfig {
    fn apply(&mut self, t: &Target) {
        if t.model.is_some() {
            self.model.clone_from(&t.model);
        }
        if t.mechanism.is_some() {
            self.mechanism = t.mechanism;
        }
        if t.dist.is_some() {
            self.distribution = t.dist;
        }
        if t.bidders.is_some() {
            self.bidders = t.bidders;
        }
    }

    /// Builds the mechanism and fills in the resolved law and bidder count.
    fn resolve(&mut self) -> Result<Box<dyn Mechanism>, CliError> {
        if let (Some(path), None) = (&self.model, self.mechanism) {
            let ck = Checkpoint::load(path)?;
            let train_dist = match &ck {
                Checkpoint::Myerson(m) => m
                    .train_config
                    .get("distribution")
                    .and_then(|d| serde_json::from_value::<ValueDistribution>(d.clone()).ok()),
                Checkpoint::Commnet(_) => None,
            };
            let net = ck.into_net()?;
            if let Some(n) = self.bidders {
                if n != net.n_bidders() {
                    return Err(CliError::Input(format!(
                        "model has {} bidders, --bidders says {n}",
                        net.n_bidders()
                    )));
                }
            }
            self.bidders = Some(net.n_bidders());
            self.distribution = self.distribution.or(train_dist).or(Some(ValueDistribution::UNIT_UNIFORM));
            return Ok(Box::new(net));
        }
        if self.model.is_some() {
            return Err(CliError::Input("give either --model or --mechanism, not both".into()));
        }
        let kind = self
            .mechanism
            .ok_or_else(|| CliError::Input("give --model or --mechanism".into()))?;
        let dist = *self.distribution.get_or_insert(ValueDistribution::UNIT_UNIFORM);
        self.bidders.get_or_insert(2);
        Ok(match kind {
            MechanismKind::Spa => Box::new(SecondPrice),
            MechanismKind::Fpa => Box::new(FirstPrice),
            MechanismKind::Myerson => {
                let vv = VirtualValuation::for_distribution(&dist).ok_or_else(|| {
                    CliError::Input(format!("no closed-form virtual valuation for {dist:?}"))
                })?;
                Box::new(AnalyticMyerson { virtual_valuation: vv })
            }
        })
    }

    fn sampler(&self, seed: u64) -> Result<ValuationSampler, CliError> {
        let s = ValuationSampler::iid(
            self.distribution.unwrap_or(ValueDistribution::UNIT_UNIFORM),
            self.bidders.unwrap_or(2),
            seed,
        );
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub target: Target,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    #[serde(flatten)]
    pub target: TargetConfig,
    pub samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            target: TargetConfig::default(),
            samples: AuditConfig::default().revenue_samples,
            seed: 0,
        }
    }
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut cfg: EvalConfig = load_config(args.common.config.as_deref())?;
    cfg.target.apply(&args.target);
    if let Some(v) = args.samples {
        cfg.samples = v;
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    let mech = cfg.target.resolve()?;
    let sampler = cfg.target.sampler(cfg.seed)?;
    let start = Instant::now();
    let est = monte_carlo_revenue(mech.as_ref(), &sampler, cfg.samples);
    log(format_args!("{} samples in {:.2}s", est.samples, start.elapsed().as_secs_f64()));
    print_report(
        serde_json::json!({
            "mechanism": mech.name(),
            "revenue": est.mean,
            "stderr": est.stderr,
            "samples": est.samples,
        }),
        &cfg,
        Some(cfg.seed),
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub target: Target,
    /// Revenue samples.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Misreport grid points.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub ic_samples: Option<usize>,
    #[arg(long)]
    pub ir_samples: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditFile {
    #[serde(flatten)]
    pub target: TargetConfig,
    pub revenue_samples: usize,
    pub ic_grid: usize,
    pub ic_samples: usize,
    pub ir_samples: usize,
    pub seed: u64,
}

impl Default for AuditFile {
    fn default() -> Self {
        let a = AuditConfig::default();
        Self {
            target: TargetConfig::default(),
            revenue_samples: a.revenue_samples,
            ic_grid: a.ic_grid,
            ic_samples: a.ic_samples,
            ir_samples: a.ir_samples,
            seed: 0,
        }
    }
}

pub fn audit(args: &AuditArgs) -> Result<(), CliError> {
    let mut cfg: AuditFile = load_config(args.common.config.as_deref())?;
    cfg.target.apply(&args.target);
    if let Some(v) = args.samples {
        cfg.revenue_samples = v;
    }
    if let Some(v) = args.grid {
        cfg.ic_grid = v;
    }
    if let Some(v) = args.ic_samples {
        cfg.ic_samples = v;
    }
    if let Some(v) = args.ir_samples {
        cfg.ir_samples = v;
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    if cfg.ic_grid < 2 {
        return Err(CliError::Input("--grid needs at least 2 points".into()));
    }
    let mech = cfg.target.resolve()?;
    let sampler = cfg.target.sampler(cfg.seed)?;
    let start = Instant::now();
    let report = run_audit(
        mech.as_ref(),
        &sampler,
        &AuditConfig {
            revenue_samples: cfg.revenue_samples,
            ic_grid: cfg.ic_grid,
            ic_samples: cfg.ic_samples,
            ir_samples: cfg.ir_samples,
        },
    );
    log(format_args!("audit finished in {:.2}s", start.elapsed().as_secs_f64()));
    print_report(serde_json::to_value(&report).expect("report serializes"), &cfg, None);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `phi(v) = 2v - 1`, optimal for i.i.d. uniform [0, 1].
    MyersonUniform,
    /// `phi(v) = v`: second price without reserve.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Hard,
    Soft,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum)]
    pub mechanism: Option<MechanismKind>,
    /// Comma-separated bids, e.g. `0.8,0.6`.
    #[arg(long)]
    pub bids: String,
    /// Softmax temperature for soft mode.
    #[arg(long, default_value_t = AuctionTrainConfig::default().eval_temperature)]
    pub temperature: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Hard)]
    pub mode: ModeArg,
    /// Valuation law for `--mechanism myerson`.
    #[arg(long, value_parser = parse_distribution)]
    pub dist: Option<ValueDistribution>,
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let profile: BidProfile = args
        .bids
        .parse()
        .map_err(|e: platoon::auction::AuctionError| CliError::Input(format!("--bids: {e}")))?;
    let n = profile.len();
    let chosen = [args.model.is_some(), args.preset.is_some(), args.mechanism.is_some()]
        .iter()
        .filter(|&&b| b)
        .count();
    if chosen != 1 {
        return Err(CliError::Input("give exactly one of --model, --preset, --mechanism".into()));
    }
    let config = serde_json::json!({
        "model": args.model,
        "preset": args.preset,
        "mechanism": args.mechanism,
        "bids": profile.bids(),
        "temperature": args.temperature,
        "mode": args.mode,
    });
    if let Some(kind) = args.mechanism {
        let mut target = TargetConfig {
            mechanism: Some(kind),
            distribution: args.dist,
            bidders: Some(n),
            ..TargetConfig::default()
        };
        let outcome = target.resolve()?.run(profile.bids());
        let mut report = serde_json::to_value(&outcome).expect("outcome serializes");
        report["revenue"] = outcome.revenue().into();
        print_report(report, &config, None);
        return Ok(());
    }
    let net = match (args.preset, &args.model) {
        (Some(Preset::MyersonUniform), _) => MonotonicNet::uniform_virtual_value(n),
        (Some(Preset::Identity), _) => MonotonicNet::identity(n),
        (None, Some(path)) => Checkpoint::load(path)?.into_net()?,
        (None, None) => unreachable!("checked above"),
    };
    let mode = match args.mode {
        ModeArg::Hard => AllocationMode::Hard,
        ModeArg::Soft => AllocationMode::Soft,
    };
    let outcome = run_auction(&net, &profile, args.temperature, mode)?;
    print_report(serde_json::to_value(&outcome).expect("outcome serializes"), &config, None);
    Ok(())
}
