//! Command-line surface. Defaults here are the ones baked into artifacts,
//! so changing them changes artifact bytes for runs that rely on defaults.

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "nslx", version, about = "Neural scaling-law extrapolation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Prior-related commands.
    #[command(subcommand)]
    Prior(PriorCommand),
    /// Fit one scaling family to a curve prefix by least squares.
    Fit(FitArgs),
    /// Sample a posterior over one family with an affine-invariant ensemble.
    Mcmc(McmcArgs),
    /// Train an in-context transformer on synthetic scaling curves.
    Train(TrainArgs),
    /// Predict quantile bands for a curve's holdout from a trained model.
    Predict(PredictArgs),
    /// Score a method across a dataset and a sweep of cutoff fractions.
    Evaluate(EvaluateArgs),
    /// Run variation-ratio active learning on one curve.
    Active(ActiveArgs),
    /// Render an SVG fan chart of model predictions for one curve.
    Plot(PlotArgs),
}

#[derive(Subcommand, Debug)]
pub enum PriorCommand {
    /// Draw synthetic curves from the training prior and write them as JSONL.
    Sample(PriorSampleArgs),
}

#[derive(Args, Debug)]
pub struct PriorSampleArgs {
    /// Number of curves to draw.
    #[arg(long)]
    pub n: usize,
    /// RNG seed; the same seed reproduces the same bytes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path, or - for standard output.
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Family: m1, m2, m3, m4, or bnsl.
    #[arg(long)]
    pub family: String,
    /// JSONL file holding exactly one curve.
    #[arg(long)]
    pub curve: String,
    /// Fraction of the curve visible to the fitter.
    #[arg(long, default_value_t = 0.5)]
    pub cutoff: f64,
    /// Random restarts for the optimizer.
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    /// Break-count cap, used only by bnsl.
    #[arg(long, default_value_t = 3)]
    pub max_breaks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path, or - for standard output.
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct McmcArgs {
    /// Family: m1, m2, m3, m4, or bnsl.
    #[arg(long)]
    pub family: String,
    /// JSONL file holding exactly one curve.
    #[arg(long)]
    pub curve: String,
    /// Fraction of the curve visible to the sampler.
    #[arg(long, default_value_t = 0.5)]
    pub cutoff: f64,
    /// Break count, used only by bnsl.
    #[arg(long, default_value_t = 0)]
    pub n_breaks: usize,
    #[arg(long, default_value_t = 30)]
    pub nwalkers: usize,
    /// Iterations per walker, including burn-in.
    #[arg(long, default_value_t = 150)]
    pub nsamples: usize,
    #[arg(long, default_value_t = 50)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Stretch-move scale parameter.
    #[arg(long, default_value_t = 2.0)]
    pub stretch_a: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path, or - for standard output.
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML file with a [model] table and optional seed and [prior] table.
    #[arg(long)]
    pub config: String,
    /// Checkpoint output path (must be a real file, not -).
    #[arg(long)]
    pub out: String,
    /// Training-log CSV path; defaults to the checkpoint path with .csv.
    #[arg(long)]
    pub log: Option<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Checkpoint produced by train.
    #[arg(long)]
    pub model: String,
    /// JSONL file holding exactly one curve.
    #[arg(long)]
    pub curve: String,
    /// Fraction of the curve visible to the model.
    #[arg(long, default_value_t = 0.5)]
    pub cutoff: f64,
    /// Comma-separated quantile levels in (0, 1).
    #[arg(long, default_value = "0.05,0.5,0.95")]
    pub quantiles: String,
    /// Output path, or - for standard output.
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Method: pfn, m1..m4, bnsl, or mcmc-m1..mcmc-bnsl.
    #[arg(long)]
    pub method: String,
    /// JSONL dataset of curves.
    #[arg(long)]
    pub dataset: String,
    /// Single fraction or inclusive start:end:step sweep, e.g. 0.1:0.9:0.1.
    #[arg(long)]
    pub cutoffs: String,
    /// Checkpoint path; required for method pfn.
    #[arg(long)]
    pub model: Option<String>,
    /// Random restarts for fit-based methods.
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    /// Break-count cap for bnsl methods.
    #[arg(long, default_value_t = 3)]
    pub max_breaks: usize,
    #[arg(long, default_value_t = 30)]
    pub nwalkers: usize,
    #[arg(long, default_value_t = 150)]
    pub nsamples: usize,
    #[arg(long, default_value_t = 50)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 2.0)]
    pub stretch_a: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path, or - for standard output.
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct ActiveArgs {
    /// Checkpoint trained with interpolation_variant = true.
    #[arg(long)]
    pub model: String,
    /// JSONL file holding exactly one curve.
    #[arg(long)]
    pub curve: String,
    /// Number of acquisitions to run.
    #[arg(long)]
    pub steps: usize,
    /// Output CSV path, or - for standard output.
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Checkpoint produced by train.
    #[arg(long)]
    pub model: String,
    /// JSONL file holding exactly one curve.
    #[arg(long)]
    pub curve: String,
    /// Fraction of the curve visible to the model.
    #[arg(long, default_value_t = 0.5)]
    pub cutoff: f64,
    /// Output SVG path, or - for standard output.
    #[arg(long)]
    pub out: String,
}
