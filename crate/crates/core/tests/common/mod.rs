//! Shared fixtures and independent reference implementations for the
//! integration tests. Each `check_*` function runs one property suite and
//! returns a verdict with a short detail line, so the per-module tests and the
//! acceptance report share the same code.

#![allow(dead_code)]

use std::time::Instant;

use pmlma::dataio::{kfold_split, synthetic_dataset, Dataset, SyntheticSpec};
use pmlma::experiment::{cross_validate, fit_preprocessed, Preprocessing};
use pmlma::graph::{knn_similarity, SimilarityGraph};
use pmlma::linalg::{
    nuclear_norm, orthonormality_residual, polar_orthogonal_factor, solve_sylvester, svd_thin, svt,
};
use pmlma::metrics::{average_precision, coverage, hamming_loss, one_error, ranking_loss};
use pmlma::solver::{
    fit_with_observer, grad_r, lipschitz_l, local_alignment, lro_subproblem, objective_terms,
    Hyperparams, ModelState, Problem,
};
use pmlma::Mat;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Symmetric positive definite with eigenvalues bounded away from zero.
pub fn spd(p: usize, rng: &mut ChaCha8Rng) -> Mat {
    let g = gaussian(p, p, rng);
    &g * g.transpose() + Mat::identity(p, p) * 0.5
}

/// Orthonormal columns via QR of a Gaussian matrix.
pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let q = gaussian(rows, cols, rng).qr().q();
    q.columns(0, cols).into_owned()
}

pub fn random_binary(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(
        rows,
        cols,
        |_, _| if rng.random::<f64>() < p { 1.0 } else { 0.0 },
    )
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Dense Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                let pivot_row = a[col].clone();
                for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                    *dst -= f * src;
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Solves `aX + Xb = c` through `(I⊗a + bᵀ⊗I) vec(X) = vec(c)`, column-major vec.
pub fn kronecker_oracle(a: &Mat, b: &Mat, c: &Mat) -> Mat {
    let (p, q) = c.shape();
    let n = p * q;
    let mut k = vec![vec![0.0; n]; n];
    for j in 0..q {
        for i in 0..p {
            let row = j * p + i;
            for kk in 0..p {
                k[row][j * p + kk] += a[(i, kk)];
            }
            for l in 0..q {
                k[row][l * p + i] += b[(l, j)];
            }
        }
    }
    let rhs: Vec<f64> = (0..q)
        .flat_map(|j| (0..p).map(move |i| c[(i, j)]))
        .collect();
    let x = gauss_solve(k, rhs);
    Mat::from_fn(p, q, |i, j| x[j * p + i])
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            passed,
            detail: detail.into(),
        }
    }

    pub fn assert_ok(&self) {
        assert!(self.passed, "{}", self.detail);
    }
}

/// 100 random SPD/diagonal instances with p, q ≤ 8 against the Kronecker oracle.
pub fn check_sylvester() -> Verdict {
    let mut worst_rel = 0.0f64;
    let mut worst_resid = 0.0f64;
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let p = r.random_range(1..=8);
        let q = r.random_range(1..=8);
        let a = spd(p, &mut r);
        let b = if seed % 2 == 0 {
            Mat::from_diagonal(&nalgebra::DVector::from_fn(q, |_, _| {
                r.random_range(0.0..3.0)
            }))
        } else {
            spd(q, &mut r)
        };
        let c = gaussian(p, q, &mut r);
        let x = match solve_sylvester(&a, &b, &c) {
            Ok(x) => x,
            Err(e) => return Verdict::new(false, format!("instance {seed}: {e}")),
        };
        let oracle = kronecker_oracle(&a, &b, &c);
        worst_rel = worst_rel.max((&x - &oracle).norm() / oracle.norm().max(1e-300));
        let resid = (&a * &x + &x * &b - &c).norm();
        worst_resid = worst_resid.max(resid / ((a.norm() + b.norm()) * x.norm()).max(1e-300));
    }
    Verdict::new(
        worst_rel <= 1e-8 && worst_resid <= 1e-8,
        format!("100 instances; max relative error {worst_rel:.2e}, max scaled residual {worst_resid:.2e}"),
    )
}

fn prox_objective(r: &Mat, z: &Mat, tau: f64) -> f64 {
    0.5 * (r - z).norm_squared() + tau * nuclear_norm(r).unwrap()
}

/// Exact soft-threshold on diagonals and prox optimality against random candidates.
pub fn check_svt() -> Verdict {
    let z = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 2.0, 0.5]));
    let got = svt(&z, 1.0).unwrap();
    let want = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.0]));
    if max_abs(&(&got - &want)) > 1e-12 {
        return Verdict::new(false, format!("diag(4,2,0.5), tau 1 gave {got}"));
    }
    let mut r = rng(77);
    for trial in 0..20 {
        let k = r.random_range(1..=5);
        let diag: Vec<f64> = (0..k).map(|_| r.random_range(0.0..5.0)).collect();
        let tau = r.random_range(0.0..3.0);
        let got = svt(
            &Mat::from_diagonal(&nalgebra::DVector::from_vec(diag.clone())),
            tau,
        )
        .unwrap();
        for (i, d) in diag.iter().enumerate() {
            if (got[(i, i)] - (d - tau).max(0.0)).abs() > 1e-12 {
                return Verdict::new(
                    false,
                    format!("diagonal trial {trial} entry {i} not soft-thresholded"),
                );
            }
        }
    }
    let mut candidates = 0;
    for trial in 0..10 {
        let rows = r.random_range(1..=6);
        let cols = r.random_range(1..=6);
        let z = gaussian(rows, cols, &mut r);
        let tau = r.random_range(0.05..2.0);
        let best = svt(&z, tau).unwrap();
        let f_best = prox_objective(&best, &z, tau);
        for k in 0..1000 {
            let scale = [1e-3, 1e-2, 1e-1, 1.0][k % 4];
            let cand = if k % 5 == 0 {
                gaussian(rows, cols, &mut r)
            } else {
                &best + gaussian(rows, cols, &mut r) * scale
            };
            candidates += 1;
            if prox_objective(&cand, &z, tau) < f_best - 1e-12 * (1.0 + f_best) {
                return Verdict::new(
                    false,
                    format!("trial {trial}: candidate {k} beats the SVT output"),
                );
            }
        }
    }
    Verdict::new(
        true,
        format!("diagonal closed forms exact; {candidates} random candidates never beat the prox"),
    )
}

/// Orthonormality and trace optimality against 1000 random orthonormal matrices.
pub fn check_procrustes() -> Verdict {
    let mut worst_resid = 0.0f64;
    for inst in 0..20 {
        let mut r = rng(500 + inst);
        let m = gaussian(4, 2, &mut r);
        let o = polar_orthogonal_factor(&m).unwrap();
        worst_resid = worst_resid.max(orthonormality_residual(&o));
        let best = (o.transpose() * &m).trace();
        for k in 0..1000 {
            let q = random_orthonormal(4, 2, &mut r);
            if (q.transpose() * &m).trace() > best + 1e-12 {
                return Verdict::new(
                    false,
                    format!("instance {inst}: candidate {k} has a larger trace"),
                );
            }
        }
    }
    Verdict::new(
        worst_resid <= 1e-10,
        format!("20 instances x 1000 candidates; max orthonormality residual {worst_resid:.2e}"),
    )
}

/// Random small problem with a feasible state and a kNN graph.
pub struct Instance {
    pub x: Mat,
    pub y: Mat,
    pub graph: SimilarityGraph,
    pub state: ModelState,
    pub hp: Hyperparams,
}

impl Instance {
    pub fn problem(&self) -> Problem<'_> {
        Problem::new(&self.x, &self.y, &self.graph).unwrap()
    }
}

pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(5..=12);
    let d = r.random_range(2..=6);
    let c = r.random_range(2..=5);
    let m = r.random_range(1..=d.min(c).min(3));
    let x = gaussian(n, d, &mut r);
    let y = random_binary(n, c, 0.6, &mut r);
    let graph = knn_similarity(&x, 3).unwrap();
    let rr = Mat::from_fn(n, c, |i, j| y[(i, j)] * r.random::<f64>());
    let state = ModelState {
        p1: gaussian(d, m, &mut r),
        p2: random_orthonormal(c, m, &mut r),
        q: random_orthonormal(c, c, &mut r),
        d_weights: rr.row_iter().map(|row| row.sum()).collect(),
        r: rr,
        v: gaussian(d, c, &mut r),
    };
    let hp = Hyperparams {
        lambda: r.random_range(0.01..1.0),
        alpha: r.random_range(0.01..1.0),
        beta: r.random_range(0.01..1.0),
        gamma: r.random_range(0.01..1.0),
        m,
        ..Hyperparams::default()
    };
    Instance {
        x,
        y,
        graph,
        state,
        hp,
    }
}

/// Objective without the nuclear term, `D` held at `state.d_weights`.
pub fn smooth_objective(state: &ModelState, prob: &Problem, hp: &Hyperparams) -> f64 {
    let t = objective_terms(state, prob, hp).unwrap();
    t.total() - t.nuclear
}

/// Central differences of the smooth objective at 20 random coordinates per instance.
pub fn check_gradient() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let inst = random_instance(2000 + seed);
        let prob = inst.problem();
        let g = grad_r(&inst.state, &prob, &inst.hp).unwrap();
        let tol = (1e-4 * g.norm()).max(1e-5);
        let mut r = rng(3000 + seed);
        let (n, c) = inst.state.r.shape();
        for _ in 0..20 {
            let (i, j) = (r.random_range(0..n), r.random_range(0..c));
            let h = 1e-5;
            let mut plus = inst.state.clone();
            plus.r[(i, j)] += h;
            let mut minus = inst.state.clone();
            minus.r[(i, j)] -= h;
            let fd = (smooth_objective(&plus, &prob, &inst.hp)
                - smooth_objective(&minus, &prob, &inst.hp))
                / (2.0 * h);
            let err = (fd - g[(i, j)]).abs();
            worst = worst.max(err / tol);
            if err > tol {
                return Verdict::new(
                    false,
                    format!(
                        "instance {seed} ({i},{j}): analytic {} vs finite difference {fd}",
                        g[(i, j)]
                    ),
                );
            }
        }
    }
    Verdict::new(
        true,
        format!("20 instances x 20 coordinates; worst error / tolerance {worst:.3}"),
    )
}

/// `‖∇J(R1) − ∇J(R2)‖ ≤ L ‖R1 − R2‖` on 50 random pairs for 10 instances.
pub fn check_lipschitz() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let inst = random_instance(4000 + seed);
        let prob = inst.problem();
        let l = lipschitz_l(&inst.state, &prob, &inst.hp).unwrap();
        let mut r = rng(5000 + seed);
        let (n, c) = inst.state.r.shape();
        for _ in 0..50 {
            let mut s1 = inst.state.clone();
            let mut s2 = inst.state.clone();
            s1.r = gaussian(n, c, &mut r);
            s2.r = gaussian(n, c, &mut r);
            let dg = (grad_r(&s1, &prob, &inst.hp).unwrap()
                - grad_r(&s2, &prob, &inst.hp).unwrap())
            .norm();
            let dr = (&s1.r - &s2.r).norm();
            let ratio = dg / (l * dr);
            worst = worst.max(ratio);
            if ratio > 1.0 + 1e-9 {
                return Verdict::new(
                    false,
                    format!("instance {seed}: gradient ratio {ratio:.6} exceeds 1"),
                );
            }
        }
    }
    Verdict::new(true, format!("500 pairs; max ‖Δ∇‖/(L‖ΔR‖) = {worst:.4}"))
}

pub fn local_alignment_double_sum(a: &Mat, b: &Mat, s: &Mat) -> f64 {
    let mut total = 0.0;
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            total += s[(i, j)] * (a.row(i) - b.row(j)).norm_squared();
        }
    }
    total
}

/// Double-sum versus degree/trace form of the local alignment term.
pub fn check_trace_identity() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = rng(6000 + seed);
        let n = r.random_range(3..=15);
        let m = r.random_range(1..=4);
        let x = gaussian(n, 3, &mut r);
        let g = knn_similarity(&x, r.random_range(1..n)).unwrap();
        let a = gaussian(n, m, &mut r);
        let b = gaussian(n, m, &mut r);
        let fast = local_alignment(&a, &b, &g);
        let slow = local_alignment_double_sum(&a, &b, &g.s);
        let err = (fast - slow).abs() / (1.0 + slow.abs());
        worst = worst.max(err);
    }
    Verdict::new(
        worst <= 1e-9,
        format!("20 instances; max relative gap {worst:.2e}"),
    )
}

/// Brute-force rank: 1 + labels strictly above, plus equal-score labels with lower index.
fn brute_rank(s: &[f64], j: usize) -> usize {
    1 + (0..s.len())
        .filter(|&k| s[k] > s[j] || (s[k] == s[j] && k < j))
        .count()
}

pub struct BruteMetrics {
    pub hamming: f64,
    pub ranking: f64,
    pub one_error: f64,
    pub coverage: f64,
    pub ap: f64,
}

pub fn brute_metrics(scores: &Mat, truth: &Mat) -> BruteMetrics {
    let (n, c) = scores.shape();
    let mut wrong = 0usize;
    let (mut rl, mut rl_n) = (0.0, 0usize);
    let (mut oe, mut cov, mut ap, mut used) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..n {
        let s: Vec<f64> = (0..c).map(|j| scores[(i, j)]).collect();
        for j in 0..c {
            if (s[j] > 0.5) != (truth[(i, j)] == 1.0) {
                wrong += 1;
            }
        }
        let rel: Vec<usize> = (0..c).filter(|&j| truth[(i, j)] == 1.0).collect();
        let irr: Vec<usize> = (0..c).filter(|&j| truth[(i, j)] == 0.0).collect();
        if !rel.is_empty() && !irr.is_empty() {
            let mut bad = 0;
            for &a in &rel {
                for &b in &irr {
                    if s[a] <= s[b] {
                        bad += 1;
                    }
                }
            }
            rl += bad as f64 / (rel.len() * irr.len()) as f64;
            rl_n += 1;
        }
        if rel.is_empty() {
            continue;
        }
        used += 1;
        let top = (0..c).find(|&j| brute_rank(&s, j) == 1).unwrap();
        if truth[(i, top)] != 1.0 {
            oe += 1.0;
        }
        let worst = rel.iter().map(|&j| brute_rank(&s, j)).max().unwrap();
        cov += (worst - 1) as f64 / c as f64;
        let mut p = 0.0;
        for &y in &rel {
            let ry = brute_rank(&s, y);
            let count = rel.iter().filter(|&&z| brute_rank(&s, z) <= ry).count();
            p += count as f64 / ry as f64;
        }
        ap += p / rel.len() as f64;
    }
    let div = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
    BruteMetrics {
        hamming: wrong as f64 / (n * c) as f64,
        ranking: div(rl, rl_n),
        one_error: div(oe, used),
        coverage: div(cov, used),
        ap: div(ap, used),
    }
}

/// Random scores with occasional exact ties.
pub fn random_scores(n: usize, c: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(n, c, |_, _| {
        if rng.random::<f64>() < 0.15 {
            0.5
        } else {
            rng.random::<f64>()
        }
    })
}

/// Library metrics against the enumeration above on 200 random instances.
pub fn check_metrics_bruteforce() -> Verdict {
    for seed in 0..200 {
        let mut r = rng(7000 + seed);
        let n = r.random_range(1..=10);
        let c = r.random_range(1..=6);
        let scores = random_scores(n, c, &mut r);
        let truth = random_binary(n, c, 0.4, &mut r);
        let pred = scores.map(|s| if s > 0.5 { 1.0 } else { 0.0 });
        let b = brute_metrics(&scores, &truth);
        let pairs = [
            (
                "hamming_loss",
                hamming_loss(&pred, &truth).unwrap(),
                b.hamming,
            ),
            (
                "ranking_loss",
                ranking_loss(&scores, &truth).unwrap(),
                b.ranking,
            ),
            (
                "one_error",
                one_error(&scores, &truth).unwrap(),
                b.one_error,
            ),
            ("coverage", coverage(&scores, &truth).unwrap(), b.coverage),
            (
                "average_precision",
                average_precision(&scores, &truth).unwrap(),
                b.ap,
            ),
        ];
        for (name, got, want) in pairs {
            if (got - want).abs() > 1e-12 {
                return Verdict::new(
                    false,
                    format!("instance {seed}: {name} {got} vs brute force {want}"),
                );
            }
        }
    }
    Verdict::new(
        true,
        "200 instances, all five metrics agree with enumeration",
    )
}

/// Ranking metrics unchanged under s -> 2s + 1 and s -> s³.
pub fn check_monotone_invariance() -> Verdict {
    for seed in 0..100 {
        let mut r = rng(8000 + seed);
        let n = r.random_range(1..=10);
        let c = r.random_range(2..=6);
        let scores = random_scores(n, c, &mut r).map(|v| v - 0.5);
        let truth = random_binary(n, c, 0.4, &mut r);
        let base = [
            ranking_loss(&scores, &truth).unwrap(),
            one_error(&scores, &truth).unwrap(),
            coverage(&scores, &truth).unwrap(),
            average_precision(&scores, &truth).unwrap(),
        ];
        for t in [scores.map(|s| 2.0 * s + 1.0), scores.map(|s| s * s * s)] {
            let got = [
                ranking_loss(&t, &truth).unwrap(),
                one_error(&t, &truth).unwrap(),
                coverage(&t, &truth).unwrap(),
                average_precision(&t, &truth).unwrap(),
            ];
            if got != base {
                return Verdict::new(false, format!("instance {seed}: {got:?} vs {base:?}"));
            }
        }
    }
    Verdict::new(
        true,
        "100 instances x 2 transforms, four ranking metrics unchanged",
    )
}

pub fn small_synthetic(seed: u64) -> Dataset {
    synthetic_dataset(&SyntheticSpec {
        n: 40,
        d: 6,
        c: 4,
        max_true_labels: 2,
        noise: 1.0,
        target_avg_cls: Some(2.5),
        seed,
    })
    .unwrap()
}

/// Feasibility after every sweep on 10 fits, plus bit-identical repeat fits.
pub fn check_constraints_and_determinism() -> Verdict {
    let mut worst_orth = 0.0f64;
    let mut sweeps = 0;
    for seed in 0..10 {
        let ds = small_synthetic(seed);
        let hp = Hyperparams {
            seed,
            t_max: 15,
            tol: 1e-12,
            ..Hyperparams::default()
        };
        let mut failure: Option<String> = None;
        let y = ds.y_candidate.clone();
        let first = fit_with_observer(&ds, &hp, |t, s| {
            sweeps += 1;
            let o = orthonormality_residual(&s.p2).max(orthonormality_residual(&s.q));
            worst_orth = worst_orth.max(o);
            if o > 1e-8 {
                failure.get_or_insert(format!(
                    "fit {seed} sweep {t}: orthonormality residual {o:.2e}"
                ));
            }
            for i in 0..y.nrows() {
                let mut sum = 0.0;
                for j in 0..y.ncols() {
                    let v = s.r[(i, j)];
                    if !(0.0..=y[(i, j)]).contains(&v) {
                        failure.get_or_insert(format!(
                            "fit {seed} sweep {t}: r[{i},{j}] = {v} outside box"
                        ));
                    }
                    sum += v;
                }
                if (s.d_weights[i] - sum).abs() > 1e-10 {
                    failure
                        .get_or_insert(format!("fit {seed} sweep {t}: d[{i}] is not the row sum"));
                }
            }
        })
        .unwrap();
        if let Some(f) = failure {
            return Verdict::new(false, f);
        }
        let second = fit_with_observer(&ds, &hp, |_, _| {}).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&first.objective_trace) != bits(&second.objective_trace) {
            return Verdict::new(false, format!("fit {seed}: repeated traces differ"));
        }
    }
    Verdict::new(
        true,
        format!("10 fits, {sweeps} sweeps; max orthonormality residual {worst_orth:.2e}; traces bit-identical"),
    )
}

pub fn convergence_dataset(seed: u64) -> Dataset {
    synthetic_dataset(&SyntheticSpec {
        n: 300,
        d: 20,
        c: 6,
        max_true_labels: 3,
        noise: 1.0,
        target_avg_cls: Some(3.0),
        seed,
    })
    .unwrap()
}

/// Relative change below 1e-3 within 20 sweeps and a non-increasing trace.
pub fn check_convergence() -> Verdict {
    let start = Instant::now();
    let mut details = Vec::new();
    for seed in 0..5 {
        let ds = convergence_dataset(100 + seed);
        let avg = ds.avg_candidates();
        let hp = Hyperparams {
            seed,
            ..Hyperparams::default()
        };
        let model = fit_preprocessed(&ds, &hp, &Preprocessing::default()).unwrap();
        let tr = &model.objective_trace;
        let settled = tr
            .windows(2)
            .position(|w| (w[1] - w[0]).abs() / w[0].abs() < 1e-3)
            .map(|p| p + 2);
        let increase = tr.windows(2).any(|w| w[1] > w[0] + 1e-6 * w[0].abs());
        details.push(format!(
            "{}:{}",
            seed,
            settled.map_or("none".into(), |s| s.to_string())
        ));
        if increase {
            return Verdict::new(
                false,
                format!("dataset {seed} (avg CLs {avg:.2}): objective increased: {tr:?}"),
            );
        }
        match settled {
            Some(s) if s <= 20 => {}
            _ => {
                return Verdict::new(
                    false,
                    format!("dataset {seed}: no settling within 20 sweeps: {tr:?}"),
                )
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        secs < 30.0,
        format!(
            "sweeps to relative change < 1e-3 per dataset [{}]; {secs:.1}s total",
            details.join(", ")
        ),
    )
}

/// Rank-2 truth: even rows carry pattern `a`, odd rows the disjoint pattern `b`.
pub fn rank2_truth(n: usize, c: usize, rng: &mut ChaCha8Rng) -> Mat {
    loop {
        let a: Vec<bool> = (0..c).map(|_| rng.random::<f64>() < 0.4).collect();
        let b: Vec<bool> = (0..c).map(|j| !a[j] && rng.random::<f64>() < 0.5).collect();
        if a.iter().any(|&v| v) && b.iter().any(|&v| v) {
            return Mat::from_fn(n, c, |i, j| {
                let on = if i % 2 == 0 { a[j] } else { b[j] };
                if on {
                    1.0
                } else {
                    0.0
                }
            });
        }
    }
}

/// Turns `fraction · n · c` zero entries of `t` into ones.
pub fn add_false_positives(t: &Mat, fraction: f64, rng: &mut ChaCha8Rng) -> Mat {
    let (n, c) = t.shape();
    let zeros: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..c).map(move |j| (i, j)))
        .filter(|&(i, j)| t[(i, j)] == 0.0)
        .collect();
    let flips = ((fraction * (n * c) as f64).round() as usize).min(zeros.len());
    let mut y = t.clone();
    for k in index::sample(rng, zeros.len(), flips).iter() {
        let (i, j) = zeros[k];
        y[(i, j)] = 1.0;
    }
    y
}

pub const RECOVERY_LAMBDA: f64 = 1.0;

/// Ratios `‖R − T‖ / ‖E‖` over 20 trials with the label-only decomposition.
pub fn recovery_ratios() -> Vec<f64> {
    (0..20)
        .map(|trial| {
            let mut r = rng(9000 + trial);
            let t = rank2_truth(100, 10, &mut r);
            let y = add_false_positives(&t, 0.05, &mut r);
            let e = (&y - &t).norm();
            let res = lro_subproblem(&y, RECOVERY_LAMBDA, 200, 1e-6).unwrap();
            (&res.r - &t).norm() / e
        })
        .collect()
}

pub fn check_recovery() -> Verdict {
    let ratios = recovery_ratios();
    let ok = ratios.iter().filter(|&&q| q <= 1.5).count();
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let shown: Vec<String> = sorted.iter().map(|q| format!("{q:.3}")).collect();
    Verdict::new(
        ok >= 18,
        format!(
            "{ok}/20 trials with ‖R−T‖ ≤ 1.5‖E‖ (lambda {RECOVERY_LAMBDA}); ratios [{}]",
            shown.join(" ")
        ),
    )
}

/// With a huge nuclear weight the recovered matrix is numerically low rank.
pub fn check_recovery_low_rank() -> Verdict {
    let mut worst = 0.0f64;
    for trial in 0..5 {
        let mut r = rng(9500 + trial);
        let t = rank2_truth(100, 10, &mut r);
        let y = add_false_positives(&t, 0.05, &mut r);
        let res = lro_subproblem(&y, 1e3, 200, 1e-6).unwrap();
        let s = svd_thin(&res.r).unwrap().sigma;
        let ratio = if s[0] > 0.0 { s[2] / s[0] } else { 0.0 };
        worst = worst.max(ratio);
    }
    Verdict::new(
        worst <= 0.05,
        format!("lambda 1e3, 5 trials; max σ3/σ1 = {worst:.3e}"),
    )
}

/// Three well-separated Gaussian clusters, one label each, clean candidates.
pub fn clean_clusters(seed: u64) -> Dataset {
    synthetic_dataset(&SyntheticSpec {
        n: 300,
        d: 10,
        c: 3,
        max_true_labels: 1,
        noise: 0.5,
        target_avg_cls: None,
        seed,
    })
    .unwrap()
}

pub fn check_clean_cv() -> Verdict {
    let ds = clean_clusters(21);
    let plan = kfold_split(ds.n(), 10, 0).unwrap();
    let report = cross_validate(
        &ds,
        &Hyperparams::default(),
        &plan,
        &Preprocessing::default(),
        0,
    )
    .unwrap();
    let ap = report.mean("average_precision").unwrap_or(0.0);
    let hl = report.mean("hamming_loss").unwrap_or(1.0);
    Verdict::new(
        ap >= 0.99 && hl <= 0.02 && report.failed_folds == 0,
        format!(
            "10-fold CV: average precision {ap:.4}, hamming loss {hl:.4}, failed folds {}",
            report.failed_folds
        ),
    )
}

pub const EMOTIONS_ENV: &str = "PMLMA_EMOTIONS_ARFF";
pub const EMOTIONS_LABELS: usize = 6;

/// Loads the emotions ARFF named by the environment, if any, with its labels as truth.
pub fn emotions_from_env() -> Option<Dataset> {
    let path = std::env::var_os(EMOTIONS_ENV)?;
    let ds = pmlma::dataio::load_dataset(
        std::path::Path::new(&path),
        pmlma::dataio::Format::Arff,
        Some(EMOTIONS_LABELS),
    )
    .unwrap_or_else(|e| panic!("{EMOTIONS_ENV}: {e}"));
    Some(Dataset::new(ds.x.clone(), ds.y_candidate.clone(), Some(ds.y_candidate)).unwrap())
}

/// Replaces the candidates by noisy ones with the given average count.
pub fn with_noise(ds: &Dataset, target: f64, seed: u64) -> Dataset {
    let truth = ds.truth_or_candidates().clone();
    let noisy =
        pmlma::dataio::inject_noise(&truth, target, seed, pmlma::dataio::NoiseModel::Global)
            .unwrap();
    Dataset::new(ds.x.clone(), noisy, Some(truth)).unwrap()
}

#[derive(Debug, Clone)]
pub struct NestedResult {
    pub average_precision: Vec<f64>,
    pub hamming_loss: Vec<f64>,
    pub chosen: Vec<[f64; 4]>,
}

/// Outer k-fold CV; each training fold picks its cell by inner-CV grid search.
pub fn nested_cv(ds: &Dataset, folds: usize, max_cells: usize, seed: u64) -> NestedResult {
    use pmlma::experiment::{evaluate_fold, grid_search, GridOptions, GridSpec};
    let plan = kfold_split(ds.n(), folds, seed).unwrap();
    let base = Hyperparams {
        seed,
        ..Hyperparams::default()
    };
    let mut out = NestedResult {
        average_precision: Vec::new(),
        hamming_loss: Vec::new(),
        chosen: Vec::new(),
    };
    for fold in 0..folds {
        let train = ds.select_rows(&plan.train_indices(fold));
        let opts = GridOptions {
            max_cells: Some(max_cells),
            seed: seed + fold as u64,
            workers: 0,
            ..GridOptions::default()
        };
        let grid = grid_search(&train, &base, &GridSpec::default(), &opts).unwrap();
        let (report, _) =
            evaluate_fold(ds, &plan, fold, &grid.best, &Preprocessing::default()).unwrap();
        out.average_precision.push(report.average_precision);
        out.hamming_loss.push(report.hamming_loss);
        out.chosen.push([
            grid.best.lambda,
            grid.best.alpha,
            grid.best.beta,
            grid.best.gamma,
        ]);
    }
    out
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let s = pmlma::experiment::Stat::of(v).expect("empty sample");
    (s.mean, s.std)
}
