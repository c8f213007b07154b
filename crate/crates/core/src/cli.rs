//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dataio::{
    inject_noise, kfold_split, load_dataset, mean_row_sum, save_dataset, to_plain, Dataset, Format,
    NoiseModel,
};
use crate::error::Result;
use crate::experiment::{
    ablate, cross_validate, fit_preprocessed, grid_search, AblationOptions, Component, GridOptions,
    GridSpec, Preprocessing,
};
use crate::solver::{predict_labels, predict_scores, Hyperparams, PrototypeRule, TrainedModel};

#[derive(Debug, Parser)]
#[command(
    name = "pmlma",
    version,
    about = "Partial multi-label learning by feature-label modal alignment"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add false-positive candidate labels to a dataset with ground truth.
    Inject(InjectArgs),
    /// Train a model and write it as JSON.
    Fit(FitArgs),
    /// Score a dataset with a trained model.
    Predict(PredictArgs),
    /// k-fold cross-validation report.
    Cv(CvArgs),
    /// Grid search over lambda, alpha, beta, gamma with inner cross-validation.
    Grid(GridArgs),
    /// Paired comparison of the full model against one disabled component.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset path.
    pub data: PathBuf,
    #[arg(long, default_value = "plain")]
    pub format: Format,
    /// Number of trailing label attributes (ARFF only).
    #[arg(long)]
    pub labels: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        load_dataset(&self.data, self.format, self.labels)
    }
}

#[derive(Debug, Clone, Args)]
pub struct HpArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// Shared subspace dimension (0 = min(d, c)).
    #[arg(long)]
    pub subspace_dim: Option<usize>,
    /// Neighbors per instance in the similarity graph.
    #[arg(long)]
    pub knn: Option<usize>,
    /// Relative objective change that stops the iteration.
    #[arg(long, allow_negative_numbers = true)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Prototype update: least-squares or weighted-mean.
    #[arg(long, value_parser = parse_prototype_rule)]
    pub prototype_rule: Option<PrototypeRule>,
    /// Use raw features instead of z-scores.
    #[arg(long)]
    pub no_standardize: bool,
    /// Do not append the constant intercept feature.
    #[arg(long)]
    pub no_bias: bool,
}

fn parse_prototype_rule(s: &str) -> std::result::Result<PrototypeRule, String> {
    match s {
        "least-squares" => Ok(PrototypeRule::LeastSquares),
        "weighted-mean" => Ok(PrototypeRule::WeightedMean),
        other => Err(format!("unknown prototype rule '{other}'")),
    }
}

impl HpArgs {
    pub fn hyperparams(&self) -> Result<Hyperparams> {
        let d = Hyperparams::default();
        let hp = Hyperparams {
            lambda: self.lambda.unwrap_or(d.lambda),
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            gamma: self.gamma.unwrap_or(d.gamma),
            m: self.subspace_dim.unwrap_or(d.m),
            k: self.knn.unwrap_or(d.k),
            tol: self.tol.unwrap_or(d.tol),
            t_max: self.max_iters.unwrap_or(d.t_max),
            seed: self.seed,
            prototype_rule: self.prototype_rule.unwrap_or(d.prototype_rule),
            ..d
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn preprocessing(&self) -> Preprocessing {
        Preprocessing {
            standardize: !self.no_standardize,
            bias: !self.no_bias,
        }
    }
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Target average number of candidate labels per instance.
    #[arg(long)]
    pub target: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "global")]
    pub noise_model: NoiseModel,
    /// Output path (plain format).
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hp: HpArgs,
    /// Model output path.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Predictions output path: `n c c`, then `scores | labels` per row.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hp: HpArgs,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Report path; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hp: HpArgs,
    /// Axes as `lambda=v,v;alpha=v;...`; omitted axes use 1e-4..1e1.
    #[arg(long, default_value = "")]
    pub grid: String,
    /// Inner cross-validation folds.
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, default_value = "average_precision")]
    pub select_metric: String,
    /// Evaluate at most this many cells, sampled with the seed.
    #[arg(long)]
    pub max_cells: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hp: HpArgs,
    /// lro, glma or mcp.
    #[arg(long)]
    pub component: String,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Number of paired runs, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn emit<T: Serialize>(value: &T, output: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match output {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct InjectSummary {
    n: usize,
    c: usize,
    truth_avg: f64,
    target: f64,
    achieved_avg: f64,
}

pub fn cmd_inject(args: &InjectArgs) -> Result<()> {
    let ds = args.input.load()?;
    // a file without a truth block is clean: its labels are the truth
    let truth = ds.truth_or_candidates().clone();
    let noisy = inject_noise(&truth, args.target, args.seed, args.noise_model)?;
    let achieved = mean_row_sum(&noisy);
    let out = Dataset::new(ds.x, noisy, Some(truth.clone()))?;
    save_dataset(&out, &args.output, Format::Plain)?;
    log::info!("candidate average {achieved:.4} (target {})", args.target);
    emit(
        &InjectSummary {
            n: out.n(),
            c: out.c(),
            truth_avg: mean_row_sum(&truth),
            target: args.target,
            achieved_avg: achieved,
        },
        None,
    )
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let hp = args.hp.hyperparams()?;
    let ds = args.data.load()?;
    let model = fit_preprocessed(&ds, &hp, &args.hp.preprocessing())?;
    log::info!(
        "fit finished after {} sweeps (converged: {})",
        model.iterations,
        model.converged
    );
    fs::write(&args.model, model.to_json()?)?;
    Ok(())
}

/// Plain-format predictions: header `n c c`, then scores `|` binary labels.
pub fn predictions_text(scores: &crate::Mat) -> String {
    // predicted label rows may be empty, so skip candidate validation
    let out = Dataset {
        x: scores.clone(),
        y_candidate: predict_labels(scores),
        y_truth: None,
        names: None,
    };
    to_plain(&out)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = TrainedModel::from_json(&fs::read_to_string(&args.model)?)?;
    let ds = args.data.load()?;
    let scores = predict_scores(&model, &ds.x)?;
    fs::write(&args.output, predictions_text(&scores))?;
    Ok(())
}

pub fn cmd_cv(args: &CvArgs) -> Result<()> {
    let hp = args.hp.hyperparams()?;
    let ds = args.data.load()?;
    let plan = kfold_split(ds.n(), args.folds, args.hp.seed)?;
    let report = cross_validate(&ds, &hp, &plan, &args.hp.preprocessing(), args.workers)?;
    emit(&report, args.output.as_deref())
}

pub fn cmd_grid(args: &GridArgs) -> Result<()> {
    let hp = args.hp.hyperparams()?;
    let spec: GridSpec = args.grid.parse()?;
    let opts = GridOptions {
        inner_folds: args.folds,
        seed: args.hp.seed,
        select_metric: args.select_metric.clone(),
        max_cells: args.max_cells,
        workers: args.workers,
        preprocessing: args.hp.preprocessing(),
    };
    let ds = args.data.load()?;
    let report = grid_search(&ds, &hp, &spec, &opts)?;
    emit(&report, args.output.as_deref())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let hp = args.hp.hyperparams()?;
    let component: Component = args.component.parse()?;
    let opts = AblationOptions {
        folds: args.folds,
        seed: args.hp.seed,
        repeats: args.repeats,
        workers: args.workers,
        preprocessing: args.hp.preprocessing(),
    };
    let ds = args.data.load()?;
    let report = ablate(&ds, &hp, component, &opts)?;
    emit(&report, args.output.as_deref())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Inject(a) => cmd_inject(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}
