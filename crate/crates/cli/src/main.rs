use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crowdal::Method;
use crowdal_cli::commands::{self, BenchArgs, EvalArgs, ReplayArgs, SimulateArgs, Status, TrainArgs};
use crowdal_cli::config::RunArgs;
use crowdal_cli::service::{self, AppState, ServeOptions};

#[derive(Debug, Parser)]
#[command(name = "crowdal", version, about = "Multi-label active learning from noisy crowds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a (method x seed) grid against simulated annotators.
    Bench(BenchArgs),
    /// Build the simulated crowd and write its manifest.
    SimulateAnnotators(SimulateArgs),
    /// Fit the crowd model to an annotation log.
    Train(TrainArgs),
    /// Score a saved model on the test split.
    Eval(EvalArgs),
    /// Serve the live annotation API.
    Serve(ServeArgs),
    /// Re-run a strategy from a recorded annotation log.
    Replay(ReplayArgs),
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "mac")]
    method: Method,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Session ids; repeat the flag for several sessions. Defaults to one
    /// session named "default".
    #[arg(long = "session")]
    sessions: Vec<String>,
    /// Directory for the append-only journal and model checkpoints.
    #[arg(long)]
    journal_dir: Option<PathBuf>,
}

fn serve(args: ServeArgs) -> anyhow::Result<Status> {
    let r = args.run.resolve()?;
    let ds = Box::leak(Box::new(r.dataset));
    let opts = ServeOptions {
        method: args.method,
        seed: args.seed,
        session_ids: args.sessions,
        journal_dir: args.journal_dir,
    };
    let state = AppState::open(ds, &r.settings, &opts)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(state, &args.bind))?;
    Ok(Status::Ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Bench(a) => commands::bench(&a),
        Command::SimulateAnnotators(a) => commands::simulate_annotators(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Serve(a) => serve(a),
        Command::Replay(a) => commands::replay(&a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
