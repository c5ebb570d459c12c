//! `hetlb`: exact metrics, buffer optimization, simulation and verification
//! runs for slot-proportional load balancing.

mod commands;
mod config;
mod figures;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "hetlb",
    version,
    about = "Slot-proportional load balancing in heterogeneous finite-buffer clusters"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Write output to this file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for random instances and simulation streams.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file of flag values; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Deliberately break the exact computation, to check that verification notices.
    #[arg(long, global = true, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Pair the buffers with the service rates in reverse order.
    ReverseMu,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricArg {
    Loss,
    ResponseTime,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedulerArg {
    Ps,
    Fcfs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServiceArg {
    Exp,
    Det,
    Hyper,
}

#[derive(Args, Debug, Clone)]
pub struct SystemArgs {
    /// Arrival rate.
    #[arg(long)]
    pub lambda: f64,
    /// Comma-separated service rates.
    #[arg(long, allow_hyphen_values = true)]
    pub mu: String,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GridArgs {
    /// Explicit comma-separated arrival rates.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "grid")]
    pub lambdas: Option<String>,
    /// Evenly spaced arrival rates as LO:HI:COUNT.
    #[arg(long)]
    pub grid: Option<String>,
    /// Space the --grid points logarithmically.
    #[arg(long, requires = "grid")]
    pub log: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact metrics of one allocation.
    Analyze {
        #[command(flatten)]
        system: SystemArgs,
        /// Comma-separated buffer lengths, one per server.
        #[arg(long, allow_hyphen_values = true)]
        ell: String,
        /// Solve the Markov chain numerically instead of using the closed form.
        #[arg(long)]
        oracle: bool,
    },
    /// Best allocation of a fixed total number of slots.
    Optimize {
        #[command(flatten)]
        system: SystemArgs,
        /// Total number of slots.
        #[arg(long, visible_alias = "L")]
        total: usize,
        #[arg(long, value_enum, default_value_t = MetricArg::Loss)]
        metric: MetricArg,
    },
    /// Best allocation over a grid of arrival rates, for one or more rate vectors.
    Sweep {
        /// Comma-separated service rates; repeat for several clusters.
        #[arg(long, required = true, allow_hyphen_values = true)]
        mu: Vec<String>,
        #[arg(long, visible_alias = "L")]
        total: usize,
        #[arg(long, value_enum, default_value_t = MetricArg::Loss)]
        metric: MetricArg,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Discrete-event simulation with replication confidence intervals.
    Simulate {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, allow_hyphen_values = true)]
        ell: String,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Verification suites; exit status 1 when a check fails.
    Verify {
        #[command(subcommand)]
        suite: Suite,
    },
    /// Data series for the plots, one CSV per figure.
    Figures {
        /// Figure number, 3 to 8.
        #[arg(value_parser = clap::value_parser!(u8).range(3..=8))]
        id: u8,
        #[command(flatten)]
        overrides: FigureArgs,
    },
}

/// Replacements for the built-in figure parameters.
#[derive(Args, Debug, Clone, Default)]
pub struct FigureArgs {
    /// Total number of slots (20 for figures 3 to 6, 40 for 7 and 8).
    #[arg(long, visible_alias = "L")]
    pub total: Option<usize>,
    /// Service rates for figures 3, 5, 7 and 8.
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<String>,
    /// Fast-server rates for figures 4 and 6; the slow server gets 1 - mu1.
    #[arg(long)]
    pub mu1: Option<String>,
    /// Fast-server slot counts for figure 5.
    #[arg(long)]
    pub splits: Option<String>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    #[arg(long, value_enum, default_value_t = SchedulerArg::Ps)]
    pub scheduler: SchedulerArg,
    #[arg(long, value_enum, default_value_t = ServiceArg::Exp)]
    pub service: ServiceArg,
    /// Squared coefficient of variation for --service hyper.
    #[arg(long, default_value_t = hetlb::simulator::HYPER_SCV)]
    pub scv: f64,
    /// Arrivals per replication, warm-up included.
    #[arg(long, conflicts_with = "time")]
    pub arrivals: Option<u64>,
    /// Simulated time per replication, warm-up included.
    #[arg(long)]
    pub time: Option<f64>,
    /// Fraction of the horizon discarded as warm-up.
    #[arg(long, default_value_t = hetlb::simulator::DEFAULT_WARMUP)]
    pub warmup: f64,
    #[arg(long, default_value_t = hetlb::simulator::DEFAULT_REPLICATIONS)]
    pub replications: usize,
    #[arg(long, default_value_t = hetlb::simulator::DEFAULT_CONFIDENCE)]
    pub confidence: f64,
}

#[derive(Subcommand, Debug)]
pub enum Suite {
    /// Closed form against the numerically solved chain on random instances.
    Productform {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = hetlb::oracle::ORACLE_CAP)]
        max_states: usize,
    },
    /// Two-server structural properties of the optimum, on a grid of loads.
    Propositions {
        /// Comma-separated fastest-server rates; the second server gets 1 - mu1.
        #[arg(long, default_value = "0.55,0.6,0.65,0.7,0.75,0.8,0.85,0.9,0.95")]
        mu1: String,
        /// Largest total number of slots examined.
        #[arg(long, visible_alias = "L", default_value_t = 12)]
        max_total: usize,
        /// Number of log-spaced loads in [0.1, 10].
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
    /// Prefix sums of the optimum along a load grid for three or more servers.
    Conjecture {
        #[arg(long, default_value = "0.45,0.3,0.2,0.05", allow_hyphen_values = true)]
        mu: String,
        #[arg(long, visible_alias = "L", default_value_t = 40)]
        total: usize,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Simulated metrics under three service laws against the exact values.
    Insensitivity {
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value = "0.75,0.25", allow_hyphen_values = true)]
        mu: String,
        #[arg(long, default_value = "12,8", allow_hyphen_values = true)]
        ell: String,
        #[arg(long, default_value_t = 125_000)]
        arrivals: u64,
        #[arg(long, default_value_t = hetlb::simulator::DEFAULT_WARMUP)]
        warmup: f64,
        #[arg(long, default_value_t = hetlb::simulator::DEFAULT_REPLICATIONS)]
        replications: usize,
        /// Joint level over every interval in the test.
        #[arg(long, default_value_t = hetlb::simulator::DEFAULT_CONFIDENCE)]
        confidence: f64,
    },
}

/// What a command produced: the text to emit and whether its checks held.
pub struct Outcome {
    pub text: String,
    pub passed: bool,
}

impl Outcome {
    pub fn ok(text: String) -> Self {
        Self { text, passed: true }
    }
}

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let args = match config::merge(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let outcome = match commands::run(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Err(e) = output::emit(&outcome.text, cli.global.out.as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    if outcome.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}
