use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use crate::trainer::TrainConfig;

use super::config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "dpkl", version = crate::BUILD_VERSION, about = "Deep probabilistic kernel learning")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write checkpoint, report and test predictions.
    Train(TrainArgs),
    /// Predict new rows with a saved checkpoint.
    Predict(PredictArgs),
    /// Run trials over labeled-set sizes and modes into a tidy CSV.
    Benchmark(BenchmarkArgs),
    /// Calibration, latent-embedding and entropy tables for a run directory.
    Report(ReportArgs),
}

/// Input data and split options.
#[derive(Clone, Debug, Default, Args)]
pub struct DataArgs {
    /// `regression` or `classification`.
    #[arg(long)]
    pub task: Option<String>,
    /// Delimited input file.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generated data instead of a file: sine, step, friedman or blobs.
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long)]
    pub synthetic_rows: Option<usize>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    /// Target column name (or 0-based index without a header).
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub delimiter: Option<String>,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long)]
    pub n_labeled: Option<usize>,
    #[arg(long)]
    pub n_unlabeled: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub no_normalize_features: bool,
}

impl DataArgs {
    pub fn apply(&self, cfg: &mut CliConfig) -> Result<()> {
        if let Some(p) = &self.data {
            cfg.data = Some(p.clone());
            cfg.synthetic = None;
        }
        if let Some(s) = &self.synthetic {
            cfg.synthetic = Some(s.clone());
            cfg.data = None;
        }
        set(&mut cfg.synthetic_rows, self.synthetic_rows);
        set(&mut cfg.input_dim, self.input_dim);
        set(&mut cfg.noise_std, self.noise_std);
        set(&mut cfg.classes, self.classes);
        set(&mut cfg.separation, self.separation);
        set(&mut cfg.target, self.target.clone());
        set(&mut cfg.delimiter, self.delimiter.clone());
        set(&mut cfg.n_labeled, self.n_labeled);
        set(&mut cfg.n_unlabeled, self.n_unlabeled);
        if self.n_test.is_some() {
            cfg.n_test = self.n_test;
        }
        if self.no_header {
            cfg.has_header = false;
        }
        if self.no_normalize_features {
            cfg.normalize_features = false;
        }
        Ok(())
    }
}

/// Training hyperparameters; unset flags keep the file or default value.
#[derive(Clone, Debug, Default, Args)]
pub struct ModelArgs {
    /// dpkl, ssdpkl or dkl.
    #[arg(long)]
    pub mode: Option<String>,
    /// rff or exact.
    #[arg(long)]
    pub kernel_mode: Option<String>,
    /// Particle count.
    #[arg(long)]
    pub m: Option<usize>,
    /// Random Fourier features.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long = "lr", alias = "learning-rate")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    /// SSDPKL variance-penalty weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "epochs", alias = "max-epochs")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long = "check-every")]
    pub early_stop_check_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden layer widths, comma separated.
    #[arg(long = "hidden", value_delimiter = ',')]
    pub hidden_dims: Option<Vec<usize>>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// relu or tanh.
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Fixed κ bandwidth instead of the median heuristic.
    #[arg(long)]
    pub kappa_bandwidth: Option<f64>,
    #[arg(long)]
    pub unlabeled_cap: Option<usize>,
    #[arg(long)]
    pub classifier_l2: Option<f64>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl ModelArgs {
    pub fn apply(&self, c: &mut TrainConfig) -> Result<()> {
        if let Some(m) = &self.mode {
            c.mode = m.parse()?;
        }
        if let Some(k) = &self.kernel_mode {
            c.kernel_mode = k.parse()?;
        }
        if let Some(a) = &self.activation {
            c.activation = a.parse()?;
        }
        set(&mut c.m, self.m);
        set(&mut c.q, self.q);
        set(&mut c.learning_rate, self.learning_rate);
        set(&mut c.noise_var, self.noise_var);
        set(&mut c.ssdpkl_alpha, self.alpha);
        set(&mut c.max_epochs, self.max_epochs);
        set(&mut c.val_fraction, self.val_fraction);
        set(&mut c.early_stop_check_every, self.early_stop_check_every);
        set(&mut c.seed, self.seed);
        set(&mut c.hidden_dims, self.hidden_dims.clone());
        set(&mut c.latent_dim, self.latent_dim);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.unlabeled_cap, self.unlabeled_cap);
        set(&mut c.classifier_l2, self.classifier_l2);
        if self.kappa_bandwidth.is_some() {
            c.kappa_bandwidth = self.kappa_bandwidth;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory.
    #[arg(long, default_value = "dpkl-run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Query rows; the target column is ignored when present.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub delimiter: Option<String>,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long, default_value = "predictions.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Labeled-set sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,300,400,500")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Training modes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "dpkl")]
    pub modes: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, default_value = "dpkl-benchmark")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Held-out rows to report on (defaults to the run's test split).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Variance quantile bins in the calibration table.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Output directory (defaults to the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
