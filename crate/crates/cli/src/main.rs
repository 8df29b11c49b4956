mod auction_cmd;
mod marl_cmd;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use util::CliError;

#[derive(Parser, Debug)]
#[command(name = "platoon", version, about = "Neural Myerson auctions and CommNet multi-agent training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metrics CSV path.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Worker threads for sampling and rollouts.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a monotonic virtual-valuation network by SGD on soft revenue.
    AuctionTrain(auction_cmd::TrainArgs),
    /// Monte Carlo revenue of a trained model or a baseline mechanism.
    AuctionEval(auction_cmd::EvalArgs),
    /// Revenue, incentive-compatibility regret and IR violation rate.
    AuctionAudit(auction_cmd::AuditArgs),
    /// Run one auction on explicit bids.
    AuctionRun(auction_cmd::RunArgs),
    /// Train a CommNet policy with REINFORCE.
    MarlTrain(marl_cmd::TrainArgs),
    /// Evaluate a trained CommNet policy.
    MarlEval(marl_cmd::EvalArgs),
    /// Operation counts for one forward pass of a checkpoint.
    Cost(CostArgs),
}

#[derive(Args, Debug)]
struct CostArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::AuctionTrain(a) => &a.common,
        Command::AuctionEval(a) => &a.common,
        Command::AuctionAudit(a) => &a.common,
        Command::AuctionRun(a) => &a.common,
        Command::MarlTrain(a) => &a.common,
        Command::MarlEval(a) => &a.common,
        Command::Cost(a) => &a.common,
    }
}

fn cost(args: &CostArgs) -> Result<(), CliError> {
    use platoon::checkpoint::Checkpoint;
    use platoon::cost::{estimate_inference_cost, Architecture};

    let ck = Checkpoint::load(&args.model)?;
    let arch = match &ck {
        Checkpoint::Myerson(m) => Architecture::Myerson {
            n_bidders: m.n_bidders,
            groups: m.groups,
            units: m.units,
        },
        Checkpoint::Commnet(c) => Architecture::Commnet(c.config()),
    };
    // validates the parameter payload too
    match ck {
        Checkpoint::Myerson(m) => drop(m.to_net()?),
        Checkpoint::Commnet(c) => drop(c.to_policy()?),
    }
    let cost = estimate_inference_cost(&arch);
    util::print_report(
        serde_json::json!({ "architecture": arch, "cost": cost }),
        &serde_json::json!({ "model": args.model }),
        None,
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = common(&cli.command).threads.max(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    match &cli.command {
        Command::AuctionTrain(a) => auction_cmd::train(a),
        Command::AuctionEval(a) => auction_cmd::eval(a),
        Command::AuctionAudit(a) => auction_cmd::audit(a),
        Command::AuctionRun(a) => auction_cmd::run(a),
        Command::MarlTrain(a) => marl_cmd::train(a),
        Command::MarlEval(a) => marl_cmd::eval(a),
        Command::Cost(a) => cost(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
