//! `ntkms`: evaluate states, sweep β and run verification suites.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Angles, Format, RunConfig, Style, SystemName, TraceName};
use error::AppError;

#[derive(Debug, Parser)]
#[command(name = "ntkms", version, about = "KMS states on Nica-Toeplitz algebras of finite-type product systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the KMS (or ground) state on an expression.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Use the ground state instead of the KMS state.
        #[arg(long)]
        ground: bool,
        expression: String,
    },
    /// Tabulate ζ and observables over a β-grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `name=expression` or a bare expression; repeatable.
        #[arg(long = "observable")]
        observables: Vec<String>,
    },
    /// Run verification suites and print one JSON report per check.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        /// Prime bound for the Euler product and the reconstruction cutoff.
        #[arg(long)]
        primes: Option<u64>,
        #[arg(long, default_value_t = commands::DEFAULT_SAMPLES)]
        samples: usize,
    },
    /// List the built-in systems.
    Systems {
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Print the canonical form of an expression.
    Parse {
        #[command(flatten)]
        common: Common,
        expression: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Kms,
    Trace,
    Ground,
    Reconstruct,
    Euler,
    Structure,
    Fock,
    All,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    system: Option<SystemName>,
    /// Alphabet size for cuntz.
    #[arg(long)]
    k: Option<u64>,
    /// Dimension for lattice-dilation.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_enum)]
    style: Option<Style>,
    #[arg(long, value_enum)]
    trace: Option<TraceName>,
    /// Point-mass angle(s), comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    radius: Option<f64>,
    /// Basis index for vector_state.
    #[arg(long)]
    index: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// β-grid, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    betas: Option<Vec<f64>>,
    /// Truncation bound.
    #[arg(short = 'B', long = "bound")]
    bound: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Term budget for symbolic products.
    #[arg(long)]
    budget: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, AppError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(n) = self.system {
            if n != cfg.system {
                cfg.k = None;
                cfg.d = None;
                cfg.style = None;
            }
            cfg.system = n;
        }
        set(&mut cfg.k, self.k);
        set(&mut cfg.d, self.d);
        set(&mut cfg.style, self.style);
        let trace = match self.trace {
            Some(n) => Some(n),
            None if self.theta.is_some() => Some(TraceName::PointMass),
            None if self.radius.is_some() => Some(TraceName::Poisson),
            None if self.index.is_some() => Some(TraceName::VectorState),
            None => None,
        };
        if let Some(n) = trace {
            if n != cfg.trace {
                cfg.theta = None;
                cfg.radius = None;
                cfg.index = None;
            }
            cfg.trace = n;
        }
        set(&mut cfg.theta, self.theta.clone().map(Angles::from_vec));
        set(&mut cfg.radius, self.radius);
        set(&mut cfg.index, self.index);
        set(&mut cfg.beta, self.beta);
        if let Some(bs) = &self.betas {
            cfg.betas = bs.clone();
        }
        if let Some(b) = self.bound {
            cfg.bound = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        Ok(cfg)
    }
}

fn set<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn configure_threads() -> Result<(), AppError> {
    let Ok(v) = std::env::var("NTKMS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| AppError::Usage(format!("NTKMS_THREADS must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(AppError::Usage("NTKMS_THREADS must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(AppError::usage)
}

fn run(cli: Cli) -> Result<(), AppError> {
    configure_threads()?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Eval {
            common,
            ground,
            expression,
        } => commands::eval(&common.resolve()?, &expression, ground, &mut out),
        Command::Sweep { common, observables } => commands::sweep(&common.resolve()?, &observables, &mut out),
        Command::Verify {
            common,
            suite,
            primes,
            samples,
        } => {
            let mut err = std::io::stderr().lock();
            commands::verify(&common.resolve()?, suite, primes, samples, &mut out, &mut err)
        }
        Command::Systems { format } => commands::systems(format, &mut out),
        Command::Parse { common, expression } => commands::parse(&common.resolve()?, &expression, &mut out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, AppError::Failed) {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}
