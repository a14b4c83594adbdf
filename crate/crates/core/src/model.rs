//! Banded model types and band-support index arithmetic.
//!
//! Row and column indices are 0-based throughout the library; text formats
//! written by the CLI use 1-based indices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// Largest condition number of `I - A` accepted before inversion.
pub const MAX_CONDITION: f64 = 1e12;
/// Margin below one that the spectral radius must clear.
pub const STABILITY_MARGIN: f64 = 1e-8;

/// Columns carrying free coefficients in row `row` of a bandwidth-`k` model.
///
/// `spatial` indexes the off-diagonal band of `A` (`1 <= |j - row| <= k`),
/// `dynamic` the full band of `B` (`|j - row| <= k`), both ascending and
/// clipped to `0..p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandSupport {
    pub row: usize,
    pub k: usize,
    pub spatial: Vec<usize>,
    pub dynamic: Vec<usize>,
}

impl BandSupport {
    pub fn new(p: usize, k: usize, row: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::domain("panel dimension must be positive"));
        }
        if row >= p {
            return Err(Error::domain(format!("row {row} out of range for p = {p}")));
        }
        if k >= p {
            return Err(Error::domain(format!(
                "bandwidth {k} must be smaller than p = {p}"
            )));
        }
        let lo = row.saturating_sub(k);
        let hi = (row + k).min(p - 1);
        let dynamic: Vec<usize> = (lo..=hi).collect();
        let spatial = dynamic.iter().copied().filter(|&j| j != row).collect();
        Ok(BandSupport {
            row,
            k,
            spatial,
            dynamic,
        })
    }

    /// Number of free parameters in the row, `|S| + |S+|`.
    pub fn tau(&self) -> usize {
        self.spatial.len() + self.dynamic.len()
    }
}

/// Largest per-row parameter count for bandwidth `k`.
pub fn max_tau(p: usize, k: usize) -> usize {
    (0..p)
        .map(|i| {
            let lo = i.saturating_sub(k);
            let hi = (i + k).min(p.saturating_sub(1));
            2 * (hi - lo + 1) - 1
        })
        .max()
        .unwrap_or(0)
}

/// True when every entry with `|i - j| > k` is exactly zero.
pub fn is_banded<T: Real>(m: &DMatrix<T>, k: usize) -> bool {
    m.iter().enumerate().all(|(idx, v)| {
        let (i, j) = (idx % m.nrows(), idx / m.nrows());
        i.abs_diff(j) <= k || *v == T::zero()
    })
}

/// `y_t = A y_t + B y_{t-1} + e_t` with banded `A`, `B` and `Var(e_t) = sigma_eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedModel<T: Real> {
    k0: usize,
    a: DMatrix<T>,
    b: DMatrix<T>,
    sigma_eps: DMatrix<T>,
}

impl<T: Real> BandedModel<T> {
    pub fn new(k0: usize, a: DMatrix<T>, b: DMatrix<T>, sigma_eps: DMatrix<T>) -> Result<Self> {
        let p = a.nrows();
        if p == 0 || !a.is_square() {
            return Err(Error::domain("A must be a non-empty square matrix"));
        }
        if b.shape() != (p, p) || sigma_eps.shape() != (p, p) {
            return Err(Error::domain(
                "A, B and sigma_eps must share the same p x p shape",
            ));
        }
        if k0 >= p {
            return Err(Error::domain(format!(
                "bandwidth {k0} must be smaller than p = {p}"
            )));
        }
        if !is_banded(&a, k0) || !is_banded(&b, k0) {
            return Err(Error::domain(format!(
                "A and B must vanish outside bandwidth {k0}"
            )));
        }
        if a.diagonal().iter().any(|v| *v != T::zero()) {
            return Err(Error::domain("diagonal of A must be zero"));
        }
        let asym = (&sigma_eps - sigma_eps.transpose()).norm();
        if asym > T::tol(1e-10) * (T::one() + sigma_eps.norm()) {
            return Err(Error::domain("sigma_eps must be symmetric"));
        }
        if linalg::min_sym_eigenvalue(&sigma_eps) <= T::tol(1e-10) {
            return Err(Error::domain("sigma_eps must be positive definite"));
        }
        Ok(BandedModel { k0, a, b, sigma_eps })
    }

    /// Model with identity innovation covariance.
    pub fn with_unit_noise(k0: usize, a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        let p = a.nrows();
        Self::new(k0, a, b, DMatrix::identity(p, p))
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn k0(&self) -> usize {
        self.k0
    }

    /// Spatial coefficients.
    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    /// Dynamic coefficients.
    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn sigma_eps(&self) -> &DMatrix<T> {
        &self.sigma_eps
    }

    pub fn support(&self, row: usize) -> Result<BandSupport> {
        BandSupport::new(self.p(), self.k0, row)
    }

    /// `(I - A)^{-1}`.
    pub fn spatial_inverse(&self) -> Result<DMatrix<T>> {
        spatial_inverse(&self.a)
    }

    /// Reduced-form transition `D = (I - A)^{-1} B`.
    pub fn reduced_form(&self) -> Result<DMatrix<T>> {
        reduced_form(&self.a, &self.b)
    }

    pub fn check_stability(&self) -> Result<Stability<T>> {
        check_stability(&self.a, &self.b)
    }

    /// Free coefficients of row `row`: the `A` band over `S` then the `B`
    /// band over `S+`, each in ascending column order.
    pub fn pack_beta(&self, row: usize) -> Result<DVector<T>> {
        let support = self.support(row)?;
        Ok(pack_beta(&self.a, &self.b, &support))
    }
}

/// Outcome of a stationarity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability<T> {
    pub stable: bool,
    pub rho: T,
}

pub fn spatial_inverse<T: Real>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    let p = a.nrows();
    let i_minus_a = DMatrix::<T>::identity(p, p) - a;
    let cond = linalg::condition_number(&i_minus_a);
    if !(cond < MAX_CONDITION) {
        return Err(Error::NotInvertible { cond });
    }
    i_minus_a.lu().try_inverse().ok_or(Error::NotInvertible { cond })
}

/// `D = (I - A)^{-1} B`.
pub fn reduced_form<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    let p = a.nrows();
    let i_minus_a = DMatrix::<T>::identity(p, p) - a;
    let cond = linalg::condition_number(&i_minus_a);
    if !(cond < MAX_CONDITION) {
        return Err(Error::NotInvertible { cond });
    }
    i_minus_a.lu().solve(b).ok_or(Error::NotInvertible { cond })
}

/// Spectral radius of the reduced form and whether it clears `1 - 1e-8`.
pub fn check_stability<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<Stability<T>> {
    let d = reduced_form(a, b)?;
    let rho = linalg::spectral_radius(&d)?;
    Ok(Stability {
        stable: rho < T::one() - T::tol(STABILITY_MARGIN),
        rho,
    })
}

/// Stacks the banded entries of row `support.row` of `a` and `b`.
pub fn pack_beta<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, support: &BandSupport) -> DVector<T> {
    let i = support.row;
    let a_part = support.spatial.iter().map(|&j| a[(i, j)]);
    let b_part = support.dynamic.iter().map(|&j| b[(i, j)]);
    DVector::from_iterator(support.tau(), a_part.chain(b_part))
}

/// Inverse of [`pack_beta`]: scatters a stacked vector into full-length
/// rows `(a_i, b_i)` of a `p`-dimensional model.
pub fn unpack_beta<T: Real>(
    beta: &DVector<T>,
    support: &BandSupport,
    p: usize,
) -> Result<(DVector<T>, DVector<T>)> {
    if beta.len() != support.tau() {
        return Err(Error::domain(format!(
            "coefficient vector has length {} but the support needs {}",
            beta.len(),
            support.tau()
        )));
    }
    if support.dynamic.last().is_some_and(|&j| j >= p) {
        return Err(Error::domain("support does not fit the panel dimension"));
    }
    let mut a_row = DVector::zeros(p);
    let mut b_row = DVector::zeros(p);
    let s = support.spatial.len();
    for (idx, &j) in support.spatial.iter().enumerate() {
        a_row[j] = beta[idx];
    }
    for (idx, &j) in support.dynamic.iter().enumerate() {
        b_row[j] = beta[s + idx];
    }
    Ok((a_row, b_row))
}

/// Observations of a `p`-dimensional panel over `n` time points, stored
/// with time along the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSeries<T: Real> {
    data: DMatrix<T>,
    centered: bool,
    /// `ordering[r]` is the original component now stored in row `r`.
    ordering: Vec<usize>,
    /// Means removed by [`PanelSeries::centered`], in current row order.
    row_means: Vec<T>,
}

impl<T: Real> PanelSeries<T> {
    /// Wraps raw observations as-is (identity ordering, not centered).
    pub fn new(data: DMatrix<T>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::domain("panel must have at least one row and one column"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("panel contains non-finite values"));
        }
        let p = data.nrows();
        Ok(PanelSeries {
            data,
            centered: false,
            ordering: (0..p).collect(),
            row_means: vec![T::zero(); p],
        })
    }

    /// Subtracts each row's mean, remembering it for later un-centering.
    /// Means accumulate on top of any earlier centering.
    pub fn centered(mut self) -> Self {
        let n = T::of_usize(self.n());
        for (r, mut row) in self.data.row_iter_mut().enumerate() {
            let mean = row.sum() / n;
            row.add_scalar_mut(-mean);
            self.row_means[r] += mean;
        }
        self.centered = true;
        self
    }

    /// Reorders rows so that row `r` holds current row `ordering[r]`.
    pub fn permuted(&self, ordering: &[usize]) -> Result<Self> {
        validate_permutation(ordering, self.p())?;
        let data = DMatrix::from_fn(self.p(), self.n(), |r, t| self.data[(ordering[r], t)]);
        Ok(PanelSeries {
            data,
            centered: self.centered,
            ordering: ordering.iter().map(|&r| self.ordering[r]).collect(),
            row_means: ordering.iter().map(|&r| self.row_means[r]).collect(),
        })
    }

    /// Columns `start..start + len` as a new series sharing the metadata.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.n() {
            return Err(Error::domain(format!(
                "window {start}..{} exceeds series length {}",
                start + len,
                self.n()
            )));
        }
        Ok(PanelSeries {
            data: self.data.columns(start, len).into_owned(),
            centered: self.centered,
            ordering: self.ordering.clone(),
            row_means: self.row_means.clone(),
        })
    }

    pub fn p(&self) -> usize {
        self.data.nrows()
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn row_means(&self) -> &[T] {
        &self.row_means
    }

    pub fn into_data(self) -> DMatrix<T> {
        self.data
    }
}

pub fn validate_permutation(ordering: &[usize], p: usize) -> Result<()> {
    if ordering.len() != p {
        return Err(Error::domain(format!(
            "ordering has {} entries but p = {p}",
            ordering.len()
        )));
    }
    let mut seen = vec![false; p];
    for &r in ordering {
        if r >= p || std::mem::replace(&mut seen[r], true) {
            return Err(Error::domain("ordering is not a permutation"));
        }
    }
    Ok(())
}
