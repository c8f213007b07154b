//! The PML-MA model: objective, block updates and the alternating driver.
//!
//! The objective over `P1 (d×m)`, `P2 (c×m)`, `Q (c×c)`, `R (n×c)`,
//! `V (d×c)` and the diagonal weights `D` is
//!
//! ```text
//!   w‖XP1 − RP2‖² + ‖Y − RQᵀ‖² + λ‖R‖_*
//! + α Σ_ij s_ij ‖P1ᵀx_i − P2ᵀr_j‖²
//! + β ‖XᵀD − VRᵀ‖² + γ ‖P2P1ᵀ‖²
//! s.t. P2ᵀP2 = I, QᵀQ = I, 0 ≤ r_ij ≤ y_ij
//! ```
//!
//! with `w = 1` unless the global alignment term is ablated. One sweep updates
//! `P2, P1, Q, V`, refreshes `D` from `R`, takes one proximal-gradient step on
//! `R`, and refreshes `D` again.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Standardizer};
use crate::error::{PmlError, Result};
use crate::graph::{knn_similarity, SimilarityGraph};
use crate::linalg::{
    nuclear_norm, polar_decompose, scale_rows, solve_sylvester, spectral_norm, svt, Mat,
    SylvesterLeft,
};
use crate::metrics::{threshold_scores, DEFAULT_THRESHOLD};

pub const MODEL_FORMAT: &str = "pmlma-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrototypeRule {
    /// `V = XᵀDR (RᵀR + εI)⁻¹`, the exact minimizer of the prototype term.
    #[default]
    LeastSquares,
    /// `v_j = Σ_i r_ij x_i / Σ_i r_ij`.
    WeightedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Nuclear-norm weight on the pseudo-labels.
    pub lambda: f64,
    /// Local (neighborhood) alignment weight.
    pub alpha: f64,
    /// Multi-peak prototype weight.
    pub beta: f64,
    /// Classifier regularization weight.
    pub gamma: f64,
    /// Weight of the global alignment term; 0 only in ablations.
    pub global_weight: f64,
    /// Subspace dimension; 0 selects `min(d, c)`.
    pub m: usize,
    /// Neighborhood size of the similarity graph.
    pub k: usize,
    pub tol: f64,
    pub t_max: usize,
    pub seed: u64,
    pub eps_stab: f64,
    /// Keep `Q = I` (low-rank decomposition ablation).
    pub freeze_q: bool,
    pub prototype_rule: PrototypeRule,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda: 0.1,
            alpha: 0.01,
            beta: 0.001,
            gamma: 0.1,
            global_weight: 1.0,
            m: 0,
            k: 5,
            tol: 1e-3,
            t_max: 50,
            seed: 0,
            eps_stab: 1e-10,
            freeze_q: false,
            prototype_rule: PrototypeRule::LeastSquares,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("global_weight", self.global_weight),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(PmlError::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(PmlError::invalid("tol must be > 0"));
        }
        if self.eps_stab.is_nan() || self.eps_stab <= 0.0 {
            return Err(PmlError::invalid("eps_stab must be > 0"));
        }
        if self.k == 0 {
            return Err(PmlError::invalid("k must be >= 1"));
        }
        Ok(())
    }

    /// Validates against the data shape and fills in the automatic `m`.
    pub fn resolve(&self, n: usize, d: usize, c: usize) -> Result<Hyperparams> {
        self.validate()?;
        let mut hp = self.clone();
        let cap = d.min(c);
        if hp.m == 0 {
            hp.m = cap;
        }
        if hp.m == 0 || hp.m > cap {
            return Err(PmlError::invalid(format!(
                "subspace dimension m = {} must satisfy 1 <= m <= min(d, c) = {cap}",
                hp.m
            )));
        }
        if hp.alpha > 0.0 && hp.k >= n {
            return Err(PmlError::invalid(format!("k = {} must be < n = {n}", hp.k)));
        }
        Ok(hp)
    }
}

/// All optimization variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub p1: Mat,
    pub p2: Mat,
    pub q: Mat,
    pub r: Mat,
    pub v: Mat,
    pub d_weights: Vec<f64>,
}

/// Fixed inputs of one fit.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub x: &'a Mat,
    pub y: &'a Mat,
    pub graph: &'a SimilarityGraph,
}

impl<'a> Problem<'a> {
    pub fn new(x: &'a Mat, y: &'a Mat, graph: &'a SimilarityGraph) -> Result<Self> {
        if x.nrows() != y.nrows() || graph.n() != x.nrows() {
            return Err(PmlError::invalid(format!(
                "row counts differ: x {}, y {}, graph {}",
                x.nrows(),
                y.nrows(),
                graph.n()
            )));
        }
        Ok(Problem { x, y, graph })
    }
}

/// Objective value split by term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub global: f64,
    pub reconstruction: f64,
    pub nuclear: f64,
    pub local: f64,
    pub prototype: f64,
    pub classifier: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.global
            + self.reconstruction
            + self.nuclear
            + self.local
            + self.prototype
            + self.classifier
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("global alignment", self.global),
            ("label reconstruction", self.reconstruction),
            ("nuclear norm", self.nuclear),
            ("local alignment", self.local),
            ("prototype", self.prototype),
            ("classifier regularization", self.classifier),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

fn check_shapes(state: &ModelState, prob: &Problem) -> Result<()> {
    let (n, d) = prob.x.shape();
    let c = prob.y.ncols();
    let m = state.p1.ncols();
    let ok = prob.y.nrows() == n
        && state.p1.shape() == (d, m)
        && state.p2.shape() == (c, m)
        && state.q.shape() == (c, c)
        && state.r.shape() == (n, c)
        && state.v.shape() == (d, c)
        && state.d_weights.len() == n
        && prob.graph.n() == n;
    if ok {
        Ok(())
    } else {
        Err(PmlError::invalid(
            "model state shapes do not match the problem",
        ))
    }
}

/// `Σ_ij s_ij ‖a_i − b_j‖²` for row sets `a`, `b`, through the degree form.
pub fn local_alignment(a: &Mat, b: &Mat, graph: &SimilarityGraph) -> f64 {
    let deg = &graph.degree;
    let mut total = 0.0;
    for (i, di) in deg.iter().enumerate() {
        total += di * (a.row(i).norm_squared() + b.row(i).norm_squared());
    }
    let sb = &graph.s * b;
    total - 2.0 * a.component_mul(&sb).sum()
}

pub fn objective_terms(
    state: &ModelState,
    prob: &Problem,
    hp: &Hyperparams,
) -> Result<ObjectiveTerms> {
    check_shapes(state, prob)?;
    let xp1 = prob.x * &state.p1;
    let rp2 = &state.r * &state.p2;
    let global = if hp.global_weight > 0.0 {
        hp.global_weight * (&xp1 - &rp2).norm_squared()
    } else {
        0.0
    };
    let reconstruction = (prob.y - &state.r * state.q.transpose()).norm_squared();
    let nuclear = if hp.lambda > 0.0 {
        hp.lambda * nuclear_norm(&state.r).map_err(|_| divergence(0, "nuclear norm"))?
    } else {
        0.0
    };
    let local = if hp.alpha > 0.0 {
        hp.alpha * local_alignment(&xp1, &rp2, prob.graph)
    } else {
        0.0
    };
    let prototype = if hp.beta > 0.0 {
        // ‖XᵀD − VRᵀ‖ = ‖DX − RVᵀ‖
        let dx = scale_rows(prob.x, &state.d_weights);
        hp.beta * (dx - &state.r * state.v.transpose()).norm_squared()
    } else {
        0.0
    };
    let classifier = hp.gamma * (&state.p2 * state.p1.transpose()).norm_squared();
    Ok(ObjectiveTerms {
        global,
        reconstruction,
        nuclear,
        local,
        prototype,
        classifier,
    })
}

pub fn objective(state: &ModelState, prob: &Problem, hp: &Hyperparams) -> Result<f64> {
    Ok(objective_terms(state, prob, hp)?.total())
}

fn divergence(iteration: usize, term: &str) -> PmlError {
    PmlError::NumericalDivergence {
        iteration,
        term: term.to_string(),
    }
}

/// `Mᵀ (w I + α Dˢ) N`.
fn weighted_gram(m: &Mat, n: &Mat, graph: &SimilarityGraph, w: f64, alpha: f64) -> Mat {
    let mut weights = vec![w; m.nrows()];
    if alpha > 0.0 {
        for (wi, di) in weights.iter_mut().zip(&graph.degree) {
            *wi += alpha * di;
        }
    }
    m.transpose() * scale_rows(n, &weights)
}

/// `(w I + α S) N`.
fn smoothed(n: &Mat, graph: &SimilarityGraph, w: f64, alpha: f64) -> Mat {
    let mut out = n * w;
    if alpha > 0.0 {
        out += (&graph.s * n) * alpha;
    }
    out
}

/// Unprojected P2 from its Sylvester equation.
pub fn p2_sylvester(state: &ModelState, prob: &Problem, hp: &Hyperparams) -> Result<Mat> {
    let a2 = weighted_gram(&state.r, &state.r, prob.graph, hp.global_weight, hp.alpha);
    let b2 = (state.p1.transpose() * &state.p1) * hp.gamma;
    let xp1 = prob.x * &state.p1;
    let c2 = state.r.transpose() * smoothed(&xp1, prob.graph, hp.global_weight, hp.alpha);
    solve_sylvester(&a2, &b2, &c2)
}

/// Sylvester step followed by projection onto orthonormal columns. A
/// rank-deficient Sylvester solution keeps the current `P2`.
pub fn update_p2(state: &ModelState, prob: &Problem, hp: &Hyperparams) -> Result<Mat> {
    let raw = match p2_sylvester(state, prob, hp) {
        Ok(raw) => raw,
        Err(e @ PmlError::SingularSystem { .. }) => {
            log::warn!("P2 step skipped: {e}");
            return Ok(state.p2.clone());
        }
        Err(e) => return Err(e),
    };
    let polar = polar_decompose(&raw)?;
    if polar.is_rank_deficient() {
        log::warn!(
            "P2 Sylvester solution has rank {} < {}; keeping previous P2",
            polar.rank,
            raw.ncols()
        );
        return Ok(state.p2.clone());
    }
    Ok(polar.factor)
}

/// Left Sylvester coefficient of the P1 step; fixed for the whole fit.
pub fn p1_left(prob: &Problem, hp: &Hyperparams) -> Result<SylvesterLeft> {
    SylvesterLeft::new(weighted_gram(
        prob.x,
        prob.x,
        prob.graph,
        hp.global_weight,
        hp.alpha,
    ))
}

pub fn update_p1(state: &ModelState, prob: &Problem, hp: &Hyperparams) -> Result<Mat> {
    update_p1_with(&p1_left(prob, hp)?, state, prob, hp)
}

fn update_p1_with(
    a1: &SylvesterLeft,
    state: &ModelState,
    prob: &Problem,
    hp: &Hyperparams,
) -> Result<Mat> {
    let b1 = (state.p2.transpose() * &state.p2) * hp.gamma;
    let rp2 = &state.r * &state.p2;
    let c1 = prob.x.transpose() * smoothed(&rp2, prob.graph, hp.global_weight, hp.alpha);
    a1.solve(&b1, &c1)
}

/// Orthogonal `Q` maximizing `Tr(Q Rᵀ Y)`: `Q = V Uᵀ` for `RᵀY = U Σ Vᵀ`.
pub fn update_q(r: &Mat, y: &Mat) -> Result<Mat> {
    if r.shape() != y.shape() {
        return Err(PmlError::invalid("update_q: R and Y shapes differ"));
    }
    let polar = polar_decompose(&(r.transpose() * y))?;
    if polar.is_rank_deficient() {
        log::debug!("RᵀY has rank {} < {}", polar.rank, y.ncols());
    }
    Ok(polar.factor.transpose())
}

/// Ridge-stabilized least squares for the class prototypes,
/// `V = XᵀDR (RᵀR + εI)⁻¹`.
pub fn update_v(x: &Mat, d_weights: &[f64], r: &Mat, eps_stab: f64) -> Result<Mat> {
    if x.nrows() != r.nrows() || d_weights.len() != r.nrows() {
        return Err(PmlError::invalid("update_v: row counts differ"));
    }
    let c = r.ncols();
    let gram = r.transpose() * r + Mat::identity(c, c) * eps_stab;
    let rhs = r.transpose() * scale_rows(x, d_weights);
    let vt = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| PmlError::invalid("update_v: singular prototype system"))?,
    };
    Ok(vt.transpose())
}

/// Membership-weighted feature means; columns of `r` with zero mass give 0.
pub fn update_v_weighted_mean(x: &Mat, r: &Mat) -> Mat {
    let mut v = x.transpose() * r;
    for j in 0..r.ncols() {
        let mass = r.column(j).sum();
        if mass > 0.0 {
            v.column_mut(j).unscale_mut(mass);
        } else {
            v.column_mut(j).fill(0.0);
        }
    }
    v
}

/// Row sums of `r`.
pub fn update_d(r: &Mat) -> Vec<f64> {
    r.row_iter().map(|row| row.sum()).collect()
}

/// Gradient of the smooth part of the objective in `R`, with `D` held at
/// `state.d_weights`.
pub fn grad_r(state: &ModelState, prob: &Problem, hp: &Hyperparams) -> Result<Mat> {
    check_shapes(state, prob)?;
    let xp1 = prob.x * &state.p1;
    let rp2 = &state.r * &state.p2;
    let p2t = state.p2.transpose();
    let mut g = (&state.r * state.q.transpose() - prob.y) * &state.q * 2.0;
    if hp.global_weight > 0.0 {
        g += (&rp2 - &xp1) * &p2t * (2.0 * hp.global_weight);
    }
    if hp.alpha > 0.0 {
        let inner = scale_rows(&rp2, &prob.graph.degree) - &prob.graph.s * &xp1;
        g += inner * &p2t * (2.0 * hp.alpha);
    }
    if hp.beta > 0.0 {
        let dx = scale_rows(prob.x, &state.d_weights);
        g += (&state.r * state.v.transpose() - dx) * &state.v * (2.0 * hp.beta);
    }
    Ok(g)
}

/// Lipschitz constant of [`grad_r`]:
/// `2(‖w P2P2ᵀ + QᵀQ + βVᵀV‖₂ + α max_i Dˢ_ii ‖P2P2ᵀ‖₂)`.
pub fn lipschitz_l(state: &ModelState, prob: &Problem, hp: &Hyperparams) -> Result<f64> {
    let p2p2 = &state.p2 * state.p2.transpose();
    let mut core = state.q.transpose() * &state.q;
    if hp.global_weight > 0.0 {
        core += &p2p2 * hp.global_weight;
    }
    if hp.beta > 0.0 {
        core += state.v.transpose() * &state.v * hp.beta;
    }
    let mut l = spectral_norm(&core)?;
    if hp.alpha > 0.0 {
        l += hp.alpha * prob.graph.max_degree() * spectral_norm(&p2p2)?;
    }
    Ok((2.0 * l).max(f64::MIN_POSITIVE))
}

/// One forward-backward step: `svt(R − ∇J(R)/L, λ/L)`, before the box step.
pub fn prox_step(state: &ModelState, prob: &Problem, hp: &Hyperparams) -> Result<Mat> {
    let g = grad_r(state, prob, hp)?;
    let l = lipschitz_l(state, prob, hp)?;
    let z = &state.r - g / l;
    svt(&z, hp.lambda / l)
}

/// Multiplicative KKT step toward the box `0 ≤ r ≤ y`, followed by the
/// Euclidean projection onto the box.
///
/// `r⁺ = r ⊙ r̂ / (r + ε) − Ψ ⊙ y / (r + ε)` with `Ψ = max(0, r − y)`.
/// Entries with `r = 0` stay at zero.
pub fn box_step(r_prev: &Mat, r_hat: &Mat, y: &Mat, eps: f64) -> Mat {
    Mat::from_fn(r_prev.nrows(), r_prev.ncols(), |i, j| {
        let r = r_prev[(i, j)];
        let yij = y[(i, j)];
        let psi = (r - yij).max(0.0);
        let v = r * r_hat[(i, j)] / (r + eps) - psi * yij / (r + eps);
        v.clamp(0.0, yij)
    })
}

pub fn update_r(state: &ModelState, prob: &Problem, hp: &Hyperparams) -> Result<Mat> {
    let r_hat = prox_step(state, prob, hp)?;
    Ok(box_step(&state.r, &r_hat, prob.y, hp.eps_stab))
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Seeded initial state: orthonormal random `P1`, `P2`; `Q = I`; `R = Y`;
/// Gaussian `V`; `D` from the row sums of `R`. `hp.m` must be resolved.
pub fn init_state(ds: &Dataset, hp: &Hyperparams) -> Result<ModelState> {
    let (d, c, m) = (ds.d(), ds.c(), hp.m);
    if m == 0 || m > d.min(c) {
        return Err(PmlError::invalid(format!(
            "unresolved subspace dimension m = {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let p1 = polar_decompose(&gaussian(d, m, &mut rng))?.factor;
    let p2 = polar_decompose(&gaussian(c, m, &mut rng))?.factor;
    let v = gaussian(d, c, &mut rng);
    let r = ds.y_candidate.clone();
    let d_weights = update_d(&r);
    Ok(ModelState {
        p1,
        p2,
        q: Mat::identity(c, c),
        r,
        v,
        d_weights,
    })
}

fn ensure_block_finite(m: &Mat, iteration: usize, name: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(divergence(iteration, name))
    }
}

/// One full sweep of block updates in place.
pub fn sweep(
    state: &mut ModelState,
    prob: &Problem,
    hp: &Hyperparams,
    iteration: usize,
) -> Result<()> {
    sweep_with(&p1_left(prob, hp)?, state, prob, hp, iteration)
}

fn sweep_with(
    a1: &SylvesterLeft,
    state: &mut ModelState,
    prob: &Problem,
    hp: &Hyperparams,
    iteration: usize,
) -> Result<()> {
    let tag = |e: PmlError, block: &str| match e {
        PmlError::InvalidInput(_) => divergence(iteration, block),
        other => other,
    };
    state.p2 = update_p2(state, prob, hp).map_err(|e| tag(e, "P2"))?;
    ensure_block_finite(&state.p2, iteration, "P2")?;
    state.p1 = update_p1_with(a1, state, prob, hp).map_err(|e| tag(e, "P1"))?;
    ensure_block_finite(&state.p1, iteration, "P1")?;
    if !hp.freeze_q {
        state.q = update_q(&state.r, prob.y).map_err(|e| tag(e, "Q"))?;
    }
    state.v = match hp.prototype_rule {
        PrototypeRule::LeastSquares => update_v(prob.x, &state.d_weights, &state.r, hp.eps_stab)?,
        PrototypeRule::WeightedMean => update_v_weighted_mean(prob.x, &state.r),
    };
    ensure_block_finite(&state.v, iteration, "V")?;
    state.d_weights = update_d(&state.r);
    state.r = update_r(state, prob, hp).map_err(|e| tag(e, "R"))?;
    ensure_block_finite(&state.r, iteration, "R")?;
    state.d_weights = update_d(&state.r);
    Ok(())
}

/// Classifier `W = P1 P2ᵀ` (d×c) with fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub w: Mat,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub hyperparams: Hyperparams,
    /// Feature standardization applied before training, if any.
    pub standardizer: Option<Standardizer>,
    /// Final optimization state; not serialized.
    pub state: Option<ModelState>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    d: usize,
    c: usize,
    w: Vec<f64>,
    hyperparams: Hyperparams,
    objective_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    standardizer: Option<Standardizer>,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        let (d, c) = self.w.shape();
        let w = (0..d)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .map(|(i, j)| self.w[(i, j)])
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            d,
            c,
            w,
            hyperparams: self.hyperparams.clone(),
            objective_trace: self.objective_trace.clone(),
            iterations: self.iterations,
            converged: self.converged,
            standardizer: self.standardizer.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| PmlError::ModelFormat(e.to_string()))?;
        let format = value
            .get("format")
            .and_then(|v| v.as_str())
            .unwrap_or_default();
        let version = value.get("version").and_then(|v| v.as_u64());
        if format != MODEL_FORMAT {
            return Err(PmlError::ModelFormat(format!(
                "unexpected format '{format}'"
            )));
        }
        if version != Some(MODEL_VERSION as u64) {
            return Err(PmlError::ModelFormat(format!(
                "unsupported model version {version:?}, expected {MODEL_VERSION}"
            )));
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| PmlError::ModelFormat(e.to_string()))?;
        if file.w.len() != file.d * file.c {
            return Err(PmlError::ModelFormat(format!(
                "classifier has {} entries, expected {}",
                file.w.len(),
                file.d * file.c
            )));
        }
        Ok(TrainedModel {
            w: Mat::from_row_slice(file.d, file.c, &file.w),
            objective_trace: file.objective_trace,
            iterations: file.iterations,
            converged: file.converged,
            hyperparams: file.hyperparams,
            standardizer: file.standardizer,
            state: None,
        })
    }
}

/// Builds the similarity graph the fit needs (empty when `alpha = 0`).
pub fn build_graph(x: &Mat, hp: &Hyperparams) -> Result<SimilarityGraph> {
    if hp.alpha > 0.0 {
        knn_similarity(x, hp.k)
    } else {
        Ok(SimilarityGraph::empty(x.nrows()))
    }
}

pub fn fit(ds: &Dataset, hp: &Hyperparams) -> Result<TrainedModel> {
    fit_with_observer(ds, hp, |_, _| {})
}

/// Like [`fit`], calling `observer(sweep, state)` after every sweep.
pub fn fit_with_observer<F>(ds: &Dataset, hp: &Hyperparams, observer: F) -> Result<TrainedModel>
where
    F: FnMut(usize, &ModelState),
{
    let hp = hp.resolve(ds.n(), ds.d(), ds.c())?;
    let graph = build_graph(&ds.x, &hp)?;
    fit_on_graph(ds, &graph, &hp, observer)
}

/// Runs the alternating minimization on a prebuilt graph. `hp` must be resolved.
pub fn fit_on_graph<F>(
    ds: &Dataset,
    graph: &SimilarityGraph,
    hp: &Hyperparams,
    mut observer: F,
) -> Result<TrainedModel>
where
    F: FnMut(usize, &ModelState),
{
    let prob = Problem::new(&ds.x, &ds.y_candidate, graph)?;
    let mut state = init_state(ds, hp)?;
    let a1 = p1_left(&prob, hp).map_err(|e| match e {
        PmlError::InvalidInput(_) => divergence(1, "P1"),
        other => other,
    })?;
    let mut trace = Vec::new();
    let mut previous = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=hp.t_max {
        sweep_with(&a1, &mut state, &prob, hp, t)?;
        let terms = objective_terms(&state, &prob, hp).map_err(|e| match e {
            PmlError::InvalidInput(_) => divergence(t, "objective"),
            other => other,
        })?;
        if let Some(term) = terms.first_non_finite() {
            return Err(divergence(t, term));
        }
        let current = terms.total();
        trace.push(current);
        iterations = t;
        observer(t, &state);
        log::debug!("sweep {t}: objective {current:.6e}");

        if previous.is_finite() {
            let change = (current - previous).abs();
            if change == 0.0 || change / previous.abs() < hp.tol {
                converged = true;
                break;
            }
        }
        previous = current;
    }

    Ok(TrainedModel {
        w: &state.p1 * state.p2.transpose(),
        objective_trace: trace,
        iterations,
        converged,
        hyperparams: hp.clone(),
        standardizer: None,
        state: Some(state),
    })
}

/// Scores `x · W`, after applying the model's feature standardization if it has one.
pub fn predict_scores(model: &TrainedModel, x_new: &Mat) -> Result<Mat> {
    let prepared;
    let x = match &model.standardizer {
        Some(st) => {
            prepared = st.transform(x_new)?;
            &prepared
        }
        None => x_new,
    };
    if x.ncols() != model.w.nrows() {
        return Err(PmlError::invalid(format!(
            "model expects {} features, got {}",
            model.w.nrows(),
            x.ncols()
        )));
    }
    Ok(x * &model.w)
}

/// Binary labels: 1 iff the score exceeds 0.5.
pub fn predict_labels(scores: &Mat) -> Mat {
    threshold_scores(scores, DEFAULT_THRESHOLD)
}

/// Outcome of the label-only low-rank orthogonal decomposition.
#[derive(Debug, Clone)]
pub struct LroResult {
    pub r: Mat,
    pub q: Mat,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// Alternates the `Q` and `R` updates on `‖Y − RQᵀ‖² + λ‖R‖_*` subject to
/// `QᵀQ = I`, `0 ≤ R ≤ Y`, starting from `R = Y`, `Q = I`.
pub fn lro_subproblem(y: &Mat, lambda: f64, t_max: usize, tol: f64) -> Result<LroResult> {
    if lambda.is_nan() || lambda < 0.0 || tol.is_nan() || tol <= 0.0 {
        return Err(PmlError::invalid(
            "lro_subproblem: need lambda >= 0 and tol > 0",
        ));
    }
    let c = y.ncols();
    let eps = Hyperparams::default().eps_stab;
    let mut r = y.clone();
    let mut q = Mat::identity(c, c);
    let mut trace = Vec::new();
    let mut previous = f64::INFINITY;
    let mut converged = false;
    for t in 1..=t_max {
        q = update_q(&r, y)?;
        let qtq = q.transpose() * &q;
        let grad = (&r * &qtq - y * &q) * 2.0;
        let l = (2.0 * spectral_norm(&qtq)?).max(f64::MIN_POSITIVE);
        let r_hat = svt(&(&r - grad / l), lambda / l)?;
        r = box_step(&r, &r_hat, y, eps);
        let obj = (y - &r * q.transpose()).norm_squared() + lambda * nuclear_norm(&r)?;
        if !obj.is_finite() {
            return Err(divergence(t, "objective"));
        }
        trace.push(obj);
        if previous.is_finite() {
            let change = (obj - previous).abs();
            if change == 0.0 || change / previous.abs() < tol {
                converged = true;
                break;
            }
        }
        previous = obj;
    }
    Ok(LroResult {
        r,
        q,
        objective_trace: trace,
        converged,
    })
}
