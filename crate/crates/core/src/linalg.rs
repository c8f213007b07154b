//! Dense matrix primitives used by the solver.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. Decompositions come from nalgebra;
//! the Procrustes projection, Sylvester solver, singular value thresholding
//! and spectral norm are built on top of them.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{PmlError, Result};

pub type Mat = DMatrix<f64>;

/// Above this many unknowns the Sylvester solver switches from the dense
/// Kronecker system to the eigendecomposition path.
pub const KRONECKER_MAX_UNKNOWNS: usize = 256;

const POWER_ITER_SEED: u64 = 0;
const POWER_ITER_MAX: usize = 200;
const POWER_ITER_TOL: f64 = 1e-8;
/// Matrices with both dimensions at most this use the SVD for the spectral norm.
const SPECTRAL_SVD_MAX_DIM: usize = 64;

/// Thin SVD `m = u * diag(sigma) * vt`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub vt: Mat,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.vt
    }

    /// Number of singular values above `max(rows, cols) * eps * sigma_max`.
    pub fn numerical_rank(&self) -> usize {
        let smax = self.sigma.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        let dim = self.u.nrows().max(self.vt.ncols()) as f64;
        let tol = dim * f64::EPSILON * smax;
        self.sigma.iter().filter(|&&s| s > tol).count()
    }
}

pub fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PmlError::invalid(format!(
            "{what} contains non-finite entries"
        )))
    }
}

/// Thin SVD with singular values in descending order. Each left singular
/// vector is sign-normalized so that its largest-magnitude entry is positive.
pub fn svd_thin(m: &Mat) -> Result<SvdResult> {
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(SvdResult {
            u: Mat::zeros(rows, 0),
            sigma: Vec::new(),
            vt: Mat::zeros(0, cols),
        });
    }
    let svd = m.clone().svd(true, true);
    let mut u = svd.u.expect("u requested");
    let mut vt = svd.v_t.expect("v_t requested");
    let sigma_raw: Vec<f64> = svd.singular_values.iter().copied().collect();

    // nalgebra already sorts, but ties and negative zeros are normalized here
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sigma_raw[b].total_cmp(&sigma_raw[a]).then(a.cmp(&b)));
    if order.iter().enumerate().any(|(i, &j)| i != j) {
        u = Mat::from_fn(rows, k, |r, c| u[(r, order[c])]);
        vt = Mat::from_fn(k, cols, |r, c| vt[(order[r], c)]);
    }
    let sigma: Vec<f64> = order.iter().map(|&j| sigma_raw[j].max(0.0)).collect();

    for j in 0..k {
        let mut best = 0.0f64;
        let mut best_abs = -1.0f64;
        for r in 0..rows {
            let v = u[(r, j)];
            if v.abs() > best_abs + 1e-14 {
                best_abs = v.abs();
                best = v;
            }
        }
        if best < 0.0 {
            u.column_mut(j).neg_mut();
            vt.row_mut(j).neg_mut();
        }
    }
    Ok(SvdResult { u, sigma, vt })
}

/// Orthogonal polar factor together with the numerical rank of the input.
#[derive(Debug, Clone)]
pub struct PolarFactor {
    pub factor: Mat,
    pub rank: usize,
}

impl PolarFactor {
    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.factor.ncols().min(self.factor.nrows())
    }
}

pub fn polar_decompose(m: &Mat) -> Result<PolarFactor> {
    let svd = svd_thin(m)?;
    let rank = svd.numerical_rank();
    let factor = &svd.u * &svd.vt;
    Ok(PolarFactor { factor, rank })
}

/// Nearest matrix with orthonormal columns, `U * V^T` from the SVD of `m`.
///
/// This maximizes `trace(O^T m)` over all `O` with orthonormal columns.
/// A rank-deficient input still yields an orthonormal factor, but it is no
/// longer unique; a warning is logged.
pub fn polar_orthogonal_factor(m: &Mat) -> Result<Mat> {
    let polar = polar_decompose(m)?;
    if polar.is_rank_deficient() {
        log::warn!(
            "polar factor of rank-deficient {}x{} matrix (rank {})",
            m.nrows(),
            m.ncols(),
            polar.rank
        );
    }
    Ok(polar.factor)
}

fn is_symmetric(m: &Mat) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return false;
            }
        }
    }
    true
}

/// Solve `a * x + x * b = c` for `x`.
///
/// Small systems (`p * q <= KRONECKER_MAX_UNKNOWNS`) are solved through the
/// vectorized form `(I_q ⊗ a + b^T ⊗ I_p) vec(x) = vec(c)`. Larger systems
/// with symmetric `a` diagonalize `a` and solve one shifted `q x q` system per
/// eigenvalue.
pub fn solve_sylvester(a: &Mat, b: &Mat, c: &Mat) -> Result<Mat> {
    SylvesterLeft::new(a.clone())?.solve(b, c)
}

/// The left coefficient of a Sylvester equation, kept for repeated solves
/// with different `b` and `c`. The eigendecomposition is computed on first use.
#[derive(Debug, Clone)]
pub struct SylvesterLeft {
    a: Mat,
    symmetric: bool,
    eig: OnceLock<SymmetricEigen<f64, Dyn>>,
}

impl SylvesterLeft {
    pub fn new(a: Mat) -> Result<Self> {
        if !a.is_square() {
            return Err(PmlError::invalid("sylvester: a and b must be square"));
        }
        ensure_finite(&a, "sylvester a")?;
        let symmetric = is_symmetric(&a);
        Ok(SylvesterLeft {
            a,
            symmetric,
            eig: OnceLock::new(),
        })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn solve(&self, b: &Mat, c: &Mat) -> Result<Mat> {
        let a = &self.a;
        let p = a.nrows();
        let q = b.nrows();
        if !b.is_square() {
            return Err(PmlError::invalid("sylvester: a and b must be square"));
        }
        if c.shape() != (p, q) {
            return Err(PmlError::invalid(format!(
                "sylvester: c must be {p}x{q}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        ensure_finite(b, "sylvester b")?;
        ensure_finite(c, "sylvester c")?;
        if p == 0 || q == 0 {
            return Ok(Mat::zeros(p, q));
        }

        let x = if p * q <= KRONECKER_MAX_UNKNOWNS || !self.symmetric {
            sylvester_kronecker(a, b, c)
        } else {
            let eig = self.eig.get_or_init(|| a.clone().symmetric_eigen());
            sylvester_eigen(eig, b, c)
        };

        match x {
            Some(x) if x.iter().all(|v| v.is_finite()) => {
                let residual = (a * &x + &x * b - c).norm();
                let bound = 1e-8 * (a.norm() + b.norm()) * x.norm().max(f64::MIN_POSITIVE);
                if residual <= bound.max(1e-12 * c.norm()) {
                    Ok(x)
                } else {
                    Err(singular_diagnostic(a, b))
                }
            }
            _ => Err(singular_diagnostic(a, b)),
        }
    }
}

fn sylvester_kronecker(a: &Mat, b: &Mat, c: &Mat) -> Option<Mat> {
    let p = a.nrows();
    let q = b.nrows();
    let n = p * q;
    // column-major vec: index (i, j) -> j * p + i
    let mut k = Mat::zeros(n, n);
    for j in 0..q {
        for i in 0..p {
            let row = j * p + i;
            for l in 0..p {
                k[(row, j * p + l)] += a[(i, l)];
            }
            for l in 0..q {
                // (x b)_{ij} = sum_l x_{il} b_{lj}
                k[(row, l * p + i)] += b[(l, j)];
            }
        }
    }
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = k.lu().solve(&rhs)?;
    Some(Mat::from_column_slice(p, q, sol.as_slice()))
}

fn sylvester_eigen(eig: &SymmetricEigen<f64, Dyn>, b: &Mat, c: &Mat) -> Option<Mat> {
    let p = c.nrows();
    let q = b.nrows();
    let u = &eig.eigenvectors;
    // a = U L U^T  =>  L (U^T x) + (U^T x) b = U^T c, one row per eigenvalue
    let ct = u.transpose() * c;
    let bt = b.transpose();
    let mut xt = Mat::zeros(p, q);
    for i in 0..p {
        let mut shifted = bt.clone();
        for d in 0..q {
            shifted[(d, d)] += eig.eigenvalues[i];
        }
        let rhs = ct.row(i).transpose();
        let sol = shifted.lu().solve(&rhs)?;
        xt.row_mut(i).copy_from(&sol.transpose());
    }
    Some(u * xt)
}

fn singular_diagnostic(a: &Mat, b: &Mat) -> PmlError {
    let ea = a.complex_eigenvalues();
    let eb = b.complex_eigenvalues();
    let mut best = (f64::INFINITY, String::new(), String::new());
    for la in ea.iter() {
        for lb in eb.iter() {
            let s = (la + lb).norm();
            if s < best.0 {
                best = (s, format!("{la}"), format!("{lb}"));
            }
        }
    }
    PmlError::SingularSystem {
        sum: best.0,
        eig_a: best.1,
        eig_b: best.2,
    }
}

/// Singular value thresholding: the proximal operator of `tau * ||.||_*`.
pub fn svt(z: &Mat, tau: f64) -> Result<Mat> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(PmlError::invalid(format!(
            "svt threshold must be >= 0, got {tau}"
        )));
    }
    let mut svd = svd_thin(z)?;
    for s in svd.sigma.iter_mut() {
        *s = (*s - tau).max(0.0);
    }
    Ok(svd.reconstruct())
}

pub fn nuclear_norm(m: &Mat) -> Result<f64> {
    Ok(svd_thin(m)?.sigma.iter().sum())
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> Result<f64> {
    ensure_finite(m, "matrix")?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    if m.nrows().max(m.ncols()) <= SPECTRAL_SVD_MAX_DIM {
        return Ok(svd_thin(m)?.sigma[0]);
    }
    Ok(spectral_norm_power(m))
}

/// Power iteration on `m^T m` from a fixed Gaussian start vector.
pub fn spectral_norm_power(m: &Mat) -> f64 {
    let n = m.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITER_SEED);
    let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let norm = v.norm();
    if norm == 0.0 {
        return 0.0;
    }
    v /= norm;
    let mut estimate = 0.0;
    for _ in 0..POWER_ITER_MAX {
        let mv = m * &v;
        let w = m.transpose() * &mv;
        let next = mv.norm();
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        let done = (next - estimate).abs() <= POWER_ITER_TOL * next.max(1.0);
        estimate = next;
        if done {
            break;
        }
    }
    (m * &v).norm()
}

/// `diag(v) * m` without forming the diagonal matrix.
pub fn scale_rows(m: &Mat, v: &[f64]) -> Mat {
    let mut out = m.clone();
    for (i, s) in v.iter().enumerate() {
        out.row_mut(i).scale_mut(*s);
    }
    out
}

pub fn orthonormality_residual(m: &Mat) -> f64 {
    (m.transpose() * m - Mat::identity(m.ncols(), m.ncols())).norm()
}
