use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "linetime", version, about = "Occupancy times of diffusions along lines")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "LINETIME_THREADS", global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Limit law of the occupancy time of the line a + b t.
    Analyze(AnalyzeArgs),
    /// Monte Carlo samples of an occupancy time.
    Simulate {
        #[command(subcommand)]
        target: SimTarget,
    },
    /// Exact joint moments, the moment generating function, or the fourth
    /// moment of an increment.
    Moments(MomentsArgs),
    /// Partial-sum and miss-count simulations.
    Partialsum {
        #[command(subcommand)]
        op: PsOp,
    },
    /// Run a named simulation preset and compare it with its limit law.
    Verify(VerifyArgs),
    /// Re-run a command from its manifest and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct AnalyzeArgs {
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub mu: String,
    #[arg(long, default_value = "1", allow_hyphen_values = true)]
    pub sigma: String,
    #[arg(long)]
    pub a: f64,
    #[arg(long)]
    pub b: f64,
    #[arg(long, default_value_t = 0.0)]
    pub x0: f64,
    /// Relative tolerance of the scale integrals.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StripArg {
    Centered,
    Lower,
}

#[derive(Debug, Args)]
pub struct SimOpts {
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub escape_margin: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub escape_tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub n_reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = StripArg::Centered)]
    pub strip: StripArg,
}

#[derive(Debug, Args)]
pub struct OutOpts {
    /// Directory for the CSV, summary and manifest. Without it the CSV goes
    /// to stdout and the summary to stderr.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SimTarget {
    /// General line a + b t for dX = mu(X) dt + sigma(X) dW.
    #[command(allow_negative_numbers = true)]
    Line {
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        mu: String,
        #[arg(long, default_value = "1", allow_hyphen_values = true)]
        sigma: String,
        #[arg(long, default_value_t = 0.0)]
        x0: f64,
        #[arg(long, default_value_t = 0.0)]
        a: f64,
        #[arg(long)]
        b: f64,
        #[command(flatten)]
        sim: SimOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Several rays b t on one Brownian path.
    #[command(allow_negative_numbers = true)]
    Joint {
        #[arg(long, value_delimiter = ',', required = true)]
        b: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        c: f64,
        #[command(flatten)]
        sim: SimOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// The ray b t from time c on.
    #[command(allow_negative_numbers = true)]
    Truncated {
        #[arg(long)]
        c: f64,
        #[arg(long)]
        b: f64,
        #[command(flatten)]
        sim: SimOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Relative time near the axis during [0, T].
    Axis {
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[command(flatten)]
        sim: SimOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Time after c with |W(t)| >= t inv_sigma.
    Exceedance {
        #[arg(long)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        inv_sigma: f64,
        #[command(flatten)]
        sim: SimOpts,
        #[command(flatten)]
        out: OutOpts,
    },
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct MomentsArgs {
    /// Smaller slope (decimal or p/q).
    #[arg(long)]
    pub b: Option<String>,
    /// Larger slope (decimal or p/q).
    #[arg(long)]
    pub c: Option<String>,
    #[arg(long)]
    pub p: Option<u32>,
    #[arg(long)]
    pub q: Option<u32>,
    /// Also evaluate in exact rational arithmetic.
    #[arg(long)]
    pub exact: bool,
    /// E exp(s V(b) + t V(c)).
    #[arg(long, num_args = 2, value_names = ["S", "T"], conflicts_with_all = ["p", "q", "m4"])]
    pub mgf: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-14)]
    pub mgf_tol: f64,
    /// E (V(b+h) - V(b))^4.
    #[arg(long, num_args = 2, value_names = ["B", "H"], conflicts_with_all = ["p", "q", "b", "c"])]
    pub m4: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Normal,
    Exponential,
    Uniform,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct PsOpts {
    #[arg(long, value_enum, default_value_t = FamilyArg::Normal)]
    pub family: FamilyArg,
    #[arg(long, default_value_t = 0.0)]
    pub xi: f64,
    /// Standard deviation of the data.
    #[arg(long, default_value_t = 1.0)]
    pub sd: f64,
    #[arg(long, default_value_t = 2000)]
    pub n_reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub escape_margin: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub escape_tol: f64,
    #[arg(long, default_value_t = 100.0)]
    pub cap_time: f64,
}

#[derive(Debug, Subcommand)]
pub enum PsOp {
    /// Occupancy of the strip above b n/m by S_n / sqrt(m).
    #[command(allow_negative_numbers = true)]
    Occupancy {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.0)]
        c: f64,
        #[arg(long)]
        b: f64,
        #[command(flatten)]
        data: PsOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Number of n >= c/delta^2 with |n/(n+k) mean_n - xi| >= delta.
    #[command(allow_negative_numbers = true)]
    DeltaMiss {
        #[arg(long)]
        k: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        c: f64,
        #[command(flatten)]
        data: PsOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// delta (Q_delta(k) - Q_delta(0)) from shared data.
    #[command(allow_negative_numbers = true)]
    SecondOrder {
        #[arg(long)]
        k: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        c: f64,
        #[command(flatten)]
        data: PsOpts,
        #[command(flatten)]
        out: OutOpts,
    },
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub suite: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub n_reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write the regenerated outputs here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
