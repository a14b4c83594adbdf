//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative singular-value cutoff below which a direction counts as null.
pub const RANK_TOL: f64 = 1e-10;

/// Solution of a dense least-squares problem `min ||y - X b||`.
#[derive(Debug, Clone)]
pub struct LeastSquares<T: Real> {
    pub coef: DVector<T>,
    /// Residual sum of squares `||y - X b||^2`, computed from the explicit
    /// residual rather than by subtraction of norms.
    pub rss: T,
    /// False when `X` had numerical rank below its column count; `coef` is
    /// then the minimum-norm solution.
    pub full_rank: bool,
}

/// Least squares through a Householder QR of `x`.
///
/// Rank-deficient designs return the minimum-norm solution from the
/// singular triplets of the triangular factor instead of failing.
pub fn least_squares<T: Real>(x: &DMatrix<T>, y: &DVector<T>) -> Result<LeastSquares<T>> {
    let (m, k) = x.shape();
    if y.len() != m {
        return Err(Error::domain(format!(
            "least squares: design has {m} rows but target has {}",
            y.len()
        )));
    }
    if k == 0 {
        return Ok(LeastSquares {
            coef: DVector::zeros(0),
            rss: y.norm_squared(),
            full_rank: true,
        });
    }
    if m < k {
        return Err(Error::UnderDetermined {
            params: k,
            equations: m,
        });
    }

    let qr = x.clone().qr();
    let r = qr.r();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let qty = qty.rows(0, k).into_owned();

    let coef = match clearly_full_rank(&r) {
        Some(true) => r.solve_upper_triangular(&qty).ok_or(Error::Rank)?,
        Some(false) => return Err(Error::Rank),
        None => {
            let svd = Svd::new(&r);
            let smax = svd.values.first().copied().unwrap_or_else(T::zero);
            let cutoff = smax * T::tol(RANK_TOL);
            if svd.values.iter().all(|&s| s > cutoff) {
                r.solve_upper_triangular(&qty).ok_or(Error::Rank)?
            } else {
                let coef = svd.pinv_solve(&qty, cutoff);
                let resid = y - x * &coef;
                return Ok(LeastSquares {
                    rss: resid.norm_squared(),
                    coef,
                    full_rank: false,
                });
            }
        }
    };

    let resid = y - x * &coef;
    Ok(LeastSquares {
        rss: resid.norm_squared(),
        coef,
        full_rank: true,
    })
}

/// Cheap screen on the Gram eigenvalues of `r`: `Some(true)` when the
/// conditioning is far from the rank cutoff, `Some(false)` for a zero
/// matrix, `None` when a careful decomposition is needed.
fn clearly_full_rank<T: Real>(r: &DMatrix<T>) -> Option<bool> {
    let gram = r.transpose() * r;
    let eig = symmetrize(gram).symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > T::zero()) {
        return Some(false);
    }
    // squared singular values carry absolute error near eps * hi
    (lo > hi * T::lit(1e-12)).then_some(true)
}

/// Thin singular value decomposition computed from the symmetric
/// eigenproblem of `[[0, M], [M^T, 0]]`, whose eigenvalues are `+-s_i`.
///
/// Used in place of nalgebra's bidiagonal SVD, which can return wrong
/// factors for rank-deficient input.
#[derive(Debug, Clone)]
pub struct Svd<T: Real> {
    /// Positive singular values, descending.
    pub values: Vec<T>,
    /// Left singular vectors as columns, one per value.
    pub u: DMatrix<T>,
    /// Right singular vectors as columns, one per value.
    pub v: DMatrix<T>,
}

impl<T: Real> Svd<T> {
    pub fn new(m: &DMatrix<T>) -> Self {
        let (a, b) = m.shape();
        let mut big = DMatrix::zeros(a + b, a + b);
        big.view_mut((0, a), (a, b)).copy_from(m);
        big.view_mut((a, 0), (b, a)).copy_from(&m.transpose());
        let eig = big.symmetric_eigen();
        let mut order: Vec<usize> = (0..a + b).filter(|&i| eig.eigenvalues[i] > T::zero()).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[j]
                .partial_cmp(&eig.eigenvalues[i])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        order.truncate(a.min(b));
        let scale = T::lit(std::f64::consts::SQRT_2);
        let u = DMatrix::from_fn(a, order.len(), |i, c| eig.eigenvectors[(i, order[c])] * scale);
        let v = DMatrix::from_fn(b, order.len(), |i, c| eig.eigenvectors[(a + i, order[c])] * scale);
        Svd {
            values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
            u,
            v,
        }
    }

    /// `sum_{s_i > cutoff} v_i (u_i^T rhs) / s_i`.
    pub fn pinv_solve(&self, rhs: &DVector<T>, cutoff: T) -> DVector<T> {
        let mut out = DVector::zeros(self.v.nrows());
        for (c, &s) in self.values.iter().enumerate() {
            if s > cutoff {
                let w = self.u.column(c).dot(rhs) / s;
                out.axpy(w, &self.v.column(c), T::one());
            }
        }
        out
    }
}

/// Largest singular value.
pub fn operator_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let gram = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let top = symmetrize(gram).symmetric_eigenvalues().max();
    if top > T::zero() {
        top.sqrt()
    } else {
        T::zero()
    }
}

/// Ratio of extreme singular values; infinite for a singular matrix.
pub fn condition_number<T: Real>(m: &DMatrix<T>) -> f64 {
    let svd = Svd::new(m);
    if svd.values.len() < m.nrows().min(m.ncols()) {
        return f64::INFINITY;
    }
    let smax = svd.values.first().map_or(0.0, |s| s.as_f64());
    let smin = svd.values.last().map_or(0.0, |s| s.as_f64());
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius<T: Real>(m: &DMatrix<T>) -> Result<T> {
    let p = m.nrows();
    if p == 0 {
        return Ok(T::zero());
    }
    let schur = nalgebra::Schur::try_new(m.clone(), T::eps(), 10_000 * p)
        .ok_or(Error::NoConvergence("Schur decomposition"))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re * z.re + z.im * z.im).sqrt())
        .fold(T::zero(), |a, b| if b > a { b } else { a }))
}

/// Solves `X = D X D^T + Q` by the doubling iteration
/// `X <- X + D_k X D_k^T`, `D_k <- D_k^2`.
///
/// Requires the spectral radius of `d` to be below one.
pub fn solve_discrete_lyapunov<T: Real>(d: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>> {
    let mut x = q.clone();
    let mut a = d.clone();
    for _ in 0..128 {
        let step = &a * &x * a.transpose();
        x += &step;
        if step.norm() <= T::eps() * x.norm() {
            return Ok(symmetrize(x));
        }
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }
        a = &a * &a;
    }
    Err(Error::NoConvergence("Lyapunov doubling"))
}

/// Symmetric positive semi-definite square root; negative eigenvalues are
/// clipped to zero.
pub fn sym_sqrt<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = symmetrize(m.clone()).symmetric_eigen();
    let vals = eig
        .eigenvalues
        .map(|v| if v > T::zero() { v.sqrt() } else { T::zero() });
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_sym_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    symmetrize(m.clone()).symmetric_eigenvalues().min()
}

pub(crate) fn symmetrize<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    let half = T::lit(0.5);
    (&m + m.transpose()) * half
}
