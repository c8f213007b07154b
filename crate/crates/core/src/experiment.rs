//! Evaluation harness: k-fold cross-validation, grid search with inner
//! cross-validation, and component ablations.
//!
//! Folds and grid cells run on a rayon pool; results are collected in index
//! order, so the worker count never changes a report.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{kfold_split, Dataset, FoldPlan, Standardizer};
use crate::error::{PmlError, Result};
use crate::metrics::{evaluate_all, EvalReport, DEFAULT_THRESHOLD, METRIC_NAMES};
use crate::solver::{fit, predict_scores, Hyperparams, TrainedModel};

/// Feature preprocessing fitted on training rows only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Z-score every feature column.
    pub standardize: bool,
    /// Append a constant feature so the classifier has an intercept.
    pub bias: bool,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing {
            standardize: true,
            bias: true,
        }
    }
}

impl Preprocessing {
    pub fn fit(&self, x: &crate::Mat, rows: Option<&[usize]>) -> Result<Option<Standardizer>> {
        if !self.standardize && !self.bias {
            return Ok(None);
        }
        let st = if self.standardize {
            Standardizer::fit(x, rows)?
        } else {
            Standardizer {
                mean: vec![0.0; x.ncols()],
                std: vec![1.0; x.ncols()],
                bias: false,
            }
        };
        Ok(Some(st.with_bias(self.bias)))
    }
}

/// Fits on `ds` after preprocessing; the returned model carries the fitted
/// transform so [`predict_scores`] accepts raw features.
pub fn fit_preprocessed(
    ds: &Dataset,
    hp: &Hyperparams,
    prep: &Preprocessing,
) -> Result<TrainedModel> {
    match prep.fit(&ds.x, None)? {
        None => fit(ds, hp),
        Some(st) => {
            let train = Dataset::new(
                st.transform(&ds.x)?,
                ds.y_candidate.clone(),
                ds.y_truth.clone(),
            )?;
            let mut model = fit(&train, hp)?;
            model.standardizer = Some(st);
            Ok(model)
        }
    }
}

/// Runs `f(0..count)` on `workers` threads (0 = rayon default), keeping order.
fn run_indexed<T, F>(workers: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers == 1 {
        return Ok((0..count).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PmlError::invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(f).collect()))
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat {
            mean,
            std,
            count: n,
        })
    }
}

/// Per-metric summaries keyed by metric name.
pub fn summarize(reports: &[EvalReport]) -> BTreeMap<String, Stat> {
    METRIC_NAMES
        .iter()
        .filter_map(|&name| {
            let values: Vec<f64> = reports.iter().filter_map(|r| r.get(name)).collect();
            Stat::of(&values).map(|s| (name.to_string(), s))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub report: Option<EvalReport>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub n: usize,
    pub c: usize,
    pub folds: usize,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub preprocessing: Preprocessing,
    /// Whether held-out metrics use ground truth (else candidate labels).
    pub evaluated_on_truth: bool,
    pub fold_results: Vec<FoldResult>,
    pub failed_folds: usize,
    pub summary: BTreeMap<String, Stat>,
}

impl CvReport {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary.get(metric).map(|s| s.mean)
    }
}

/// Trains on candidates of one fold's training rows and scores the held-out rows.
pub fn evaluate_fold(
    ds: &Dataset,
    plan: &FoldPlan,
    fold: usize,
    hp: &Hyperparams,
    prep: &Preprocessing,
) -> Result<(EvalReport, TrainedModel)> {
    let train_rows = plan.train_indices(fold);
    let test_rows = plan.test_indices(fold);
    let train = ds.select_rows(&train_rows);
    let test = ds.select_rows(&test_rows);
    let model = fit_preprocessed(&train, hp, prep)?;
    let scores = predict_scores(&model, &test.x)?;
    let report = evaluate_all(&scores, test.truth_or_candidates(), DEFAULT_THRESHOLD)?;
    Ok((report, model))
}

/// Cross-validates on a given fold plan. A failing fold is recorded with its
/// error and excluded from the summary; the remaining folds still run.
pub fn cross_validate(
    ds: &Dataset,
    hp: &Hyperparams,
    plan: &FoldPlan,
    prep: &Preprocessing,
    workers: usize,
) -> Result<CvReport> {
    hp.validate()?;
    if plan.assignments.len() != ds.n() {
        return Err(PmlError::invalid(format!(
            "fold plan covers {} instances, dataset has {}",
            plan.assignments.len(),
            ds.n()
        )));
    }
    let fold_results = run_indexed(workers, plan.fold_count, |fold| {
        let test_size = plan.test_indices(fold).len();
        let train_size = ds.n() - test_size;
        match evaluate_fold(ds, plan, fold, hp, prep) {
            Ok((report, model)) => FoldResult {
                fold,
                train_size,
                test_size,
                report: Some(report),
                iterations: Some(model.iterations),
                converged: Some(model.converged),
                error: None,
            },
            Err(e) => {
                log::warn!("fold {fold} failed: {e}");
                FoldResult {
                    fold,
                    train_size,
                    test_size,
                    report: None,
                    iterations: None,
                    converged: None,
                    error: Some(e.to_string()),
                }
            }
        }
    })?;
    let reports: Vec<EvalReport> = fold_results.iter().filter_map(|f| f.report).collect();
    Ok(CvReport {
        n: ds.n(),
        c: ds.c(),
        folds: plan.fold_count,
        seed: plan.seed,
        hyperparams: hp.clone(),
        preprocessing: *prep,
        evaluated_on_truth: ds.y_truth.is_some(),
        failed_folds: fold_results.len() - reports.len(),
        summary: summarize(&reports),
        fold_results,
    })
}

/// Values tried for each tuned weight. Cells are the Cartesian product in
/// `(lambda, alpha, beta, gamma)` order, each axis sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

pub const DEFAULT_GRID_VALUES: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1];

impl Default for GridSpec {
    fn default() -> Self {
        let v = DEFAULT_GRID_VALUES.to_vec();
        GridSpec {
            lambda: v.clone(),
            alpha: v.clone(),
            beta: v.clone(),
            gamma: v,
        }
    }
}

impl std::str::FromStr for GridSpec {
    type Err = PmlError;

    /// `lambda=0.1,1;alpha=0.01;...`. Axes not mentioned keep the default values.
    fn from_str(s: &str) -> Result<Self> {
        let mut spec = GridSpec::default();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, values) = part.split_once('=').ok_or_else(|| {
                PmlError::invalid(format!("grid axis '{part}' is not name=values"))
            })?;
            let values = values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| PmlError::invalid(format!("bad grid value '{v}'")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let axis = match name.trim() {
                "lambda" => &mut spec.lambda,
                "alpha" => &mut spec.alpha,
                "beta" => &mut spec.beta,
                "gamma" => &mut spec.gamma,
                other => return Err(PmlError::invalid(format!("unknown grid axis '{other}'"))),
            };
            *axis = values;
        }
        Ok(spec)
    }
}

impl GridSpec {
    pub fn cell_count(&self) -> usize {
        self.lambda.len() * self.alpha.len() * self.beta.len() * self.gamma.len()
    }

    /// All cells in lexicographic order.
    pub fn cells(&self) -> Result<Vec<[f64; 4]>> {
        let mut axes = [
            self.lambda.clone(),
            self.alpha.clone(),
            self.beta.clone(),
            self.gamma.clone(),
        ];
        for axis in &mut axes {
            if axis.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(PmlError::invalid("grid values must be finite and >= 0"));
            }
            axis.sort_by(f64::total_cmp);
            axis.dedup();
        }
        let mut cells = Vec::new();
        for &l in &axes[0] {
            for &a in &axes[1] {
                for &b in &axes[2] {
                    for &g in &axes[3] {
                        cells.push([l, a, b, g]);
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(PmlError::invalid("grid has no cells"));
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Mean of the selection metric over successful inner folds.
    pub score: Option<f64>,
    pub score_std: Option<f64>,
    pub failed_folds: usize,
}

impl GridCell {
    fn tuple(&self) -> [f64; 4] {
        [self.lambda, self.alpha, self.beta, self.gamma]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub select_metric: String,
    pub inner_folds: usize,
    pub seed: u64,
    pub cells_declared: usize,
    pub cells_evaluated: usize,
    /// Best first; failed cells last.
    pub ranked: Vec<GridCell>,
    pub best: Hyperparams,
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub inner_folds: usize,
    pub seed: u64,
    pub select_metric: String,
    /// Evaluate a seeded random subset of this many cells when the grid is larger.
    pub max_cells: Option<usize>,
    pub workers: usize,
    pub preprocessing: Preprocessing,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            inner_folds: 3,
            seed: 0,
            select_metric: "average_precision".to_string(),
            max_cells: None,
            workers: 1,
            preprocessing: Preprocessing::default(),
        }
    }
}

fn with_cell(base: &Hyperparams, cell: [f64; 4]) -> Hyperparams {
    Hyperparams {
        lambda: cell[0],
        alpha: cell[1],
        beta: cell[2],
        gamma: cell[3],
        ..base.clone()
    }
}

/// Scores every cell by `inner_folds`-fold CV on `ds` and picks the best by
/// the selection metric; ties go to the lexicographically smallest tuple.
pub fn grid_search(
    ds: &Dataset,
    base: &Hyperparams,
    spec: &GridSpec,
    opts: &GridOptions,
) -> Result<GridReport> {
    base.validate()?;
    let metric = opts.select_metric.as_str();
    if !METRIC_NAMES.contains(&metric) {
        return Err(PmlError::invalid(format!(
            "unknown selection metric '{metric}' (expected one of {})",
            METRIC_NAMES.join(", ")
        )));
    }
    let mut cells = spec.cells()?;
    let declared = cells.len();
    if let Some(cap) = opts.max_cells {
        if cap == 0 {
            return Err(PmlError::invalid("max-cells must be >= 1"));
        }
        if cap < cells.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut keep = index::sample(&mut rng, cells.len(), cap).into_vec();
            keep.sort_unstable();
            cells = keep.into_iter().map(|i| cells[i]).collect();
        }
    }
    let plan = kfold_split(ds.n(), opts.inner_folds, opts.seed)?;

    let evaluated = run_indexed(opts.workers, cells.len(), |i| {
        let hp = with_cell(base, cells[i]);
        let cv = cross_validate(ds, &hp, &plan, &opts.preprocessing, 1);
        let (score, score_std, failed) = match cv {
            Ok(r) => {
                let s = r.summary.get(metric);
                (s.map(|s| s.mean), s.map(|s| s.std), r.failed_folds)
            }
            Err(e) => {
                log::warn!("grid cell {:?} failed: {e}", cells[i]);
                (None, None, plan.fold_count)
            }
        };
        GridCell {
            lambda: cells[i][0],
            alpha: cells[i][1],
            beta: cells[i][2],
            gamma: cells[i][3],
            score,
            score_std,
            failed_folds: failed,
        }
    })?;

    let higher = EvalReport::higher_is_better(metric);
    let mut ranked = evaluated;
    ranked.sort_by(|a, b| {
        let by_score = match (a.score, b.score) {
            (Some(x), Some(y)) if higher => y.total_cmp(&x),
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        by_score.then_with(|| {
            a.tuple()
                .iter()
                .zip(b.tuple().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let top = &ranked[0];
    if top.score.is_none() {
        return Err(PmlError::invalid("every grid cell failed"));
    }
    let best = with_cell(base, top.tuple());
    Ok(GridReport {
        select_metric: metric.to_string(),
        inner_folds: opts.inner_folds,
        seed: opts.seed,
        cells_declared: declared,
        cells_evaluated: ranked.len(),
        best,
        ranked,
    })
}

/// Model component removed in an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    /// Low-rank orthogonal label decomposition: `λ = 0`, `Q` frozen at `I`.
    Lro,
    /// Global and local modal alignment: `α = 0`, global weight 0.
    Glma,
    /// Multi-peak class prototypes: `β = 0`.
    Mcp,
}

impl std::str::FromStr for Component {
    type Err = PmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lro" => Ok(Component::Lro),
            "glma" => Ok(Component::Glma),
            "mcp" => Ok(Component::Mcp),
            other => Err(PmlError::invalid(format!(
                "unknown component '{other}' (expected lro, glma or mcp)"
            ))),
        }
    }
}

impl Component {
    pub fn disable(self, hp: &Hyperparams) -> Hyperparams {
        let mut hp = hp.clone();
        match self {
            Component::Lro => {
                hp.lambda = 0.0;
                hp.freeze_q = true;
            }
            Component::Glma => {
                hp.alpha = 0.0;
                hp.global_weight = 0.0;
            }
            Component::Mcp => hp.beta = 0.0,
        }
        hp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub full: BTreeMap<String, Stat>,
    pub ablated: BTreeMap<String, Stat>,
    pub full_failed_folds: usize,
    pub ablated_failed_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub component: Component,
    pub folds: usize,
    pub full_hyperparams: Hyperparams,
    pub ablated_hyperparams: Hyperparams,
    pub runs: Vec<AblationRun>,
    /// Across runs, statistics of each run's mean metric.
    pub full: BTreeMap<String, Stat>,
    pub ablated: BTreeMap<String, Stat>,
}

fn across_runs(runs: &[&BTreeMap<String, Stat>]) -> BTreeMap<String, Stat> {
    METRIC_NAMES
        .iter()
        .filter_map(|&name| {
            let values: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.get(name).map(|s| s.mean))
                .collect();
            Stat::of(&values).map(|s| (name.to_string(), s))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AblationOptions {
    pub folds: usize,
    pub seed: u64,
    pub repeats: usize,
    pub workers: usize,
    pub preprocessing: Preprocessing,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions {
            folds: 10,
            seed: 0,
            repeats: 5,
            workers: 1,
            preprocessing: Preprocessing::default(),
        }
    }
}

/// Paired full-versus-ablated cross-validation. Run `i` uses seed `seed + i`
/// for both the fold plan and the model initialization, shared by the pair.
pub fn ablate(
    ds: &Dataset,
    hp: &Hyperparams,
    component: Component,
    opts: &AblationOptions,
) -> Result<AblationReport> {
    if opts.repeats == 0 {
        return Err(PmlError::invalid("repeats must be >= 1"));
    }
    let ablated_hp = component.disable(hp);
    let prep = &opts.preprocessing;
    let mut runs = Vec::with_capacity(opts.repeats);
    for i in 0..opts.repeats {
        let run_seed = opts.seed.wrapping_add(i as u64);
        let plan = kfold_split(ds.n(), opts.folds, run_seed)?;
        let full_hp = Hyperparams {
            seed: run_seed,
            ..hp.clone()
        };
        let abl_hp = Hyperparams {
            seed: run_seed,
            ..ablated_hp.clone()
        };
        let full = cross_validate(ds, &full_hp, &plan, prep, opts.workers)?;
        let abl = cross_validate(ds, &abl_hp, &plan, prep, opts.workers)?;
        runs.push(AblationRun {
            seed: run_seed,
            full_failed_folds: full.failed_folds,
            ablated_failed_folds: abl.failed_folds,
            full: full.summary,
            ablated: abl.summary,
        });
    }
    let full = across_runs(&runs.iter().map(|r| &r.full).collect::<Vec<_>>());
    let ablated = across_runs(&runs.iter().map(|r| &r.ablated).collect::<Vec<_>>());
    Ok(AblationReport {
        component,
        folds: opts.folds,
        full_hyperparams: hp.clone(),
        ablated_hyperparams: ablated_hp,
        runs,
        full,
        ablated,
    })
}
