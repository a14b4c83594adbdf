//! Sample autocovariances and the stacked multi-lag regressor matrix.
//!
//! Every lag divides by `n`, and the lag-0 matrix drops the final outer
//! product `y_n y_n^T`, so that the first regressor block pairs
//! `y_{t-1}` with `u_t` over the same `t = 2..n` range.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BandSupport, BandedModel};
use crate::scalar::Real;

/// `(1/n) sum_{t=2}^{n} y_{t-1} y_{t-1}^T`.
pub fn sigma0_hat<T: Real>(y: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = y.ncols();
    if n < 2 {
        return Err(Error::domain(format!("need n >= 2 observations, got {n}")));
    }
    let head = y.columns(0, n - 1);
    Ok(head * head.transpose() / T::of_usize(n))
}

/// `(1/n) sum_{t=j+1}^{n} y_t y_{t-j}^T` for `j >= 1`.
pub fn sigma_j_hat<T: Real>(y: &DMatrix<T>, j: usize) -> Result<DMatrix<T>> {
    let n = y.ncols();
    if j == 0 || j >= n {
        return Err(Error::domain(format!("lag {j} must lie in 1..{n}")));
    }
    Ok(y.columns(j, n - j) * y.columns(0, n - j).transpose() / T::of_usize(n))
}

/// The `rp x 2p` matrix whose block row `j` is
/// `(1/n) sum_{t=j+1}^{n} y_{t-j} (y_t^T, y_{t-1}^T)`.
pub fn build_g_hat<T: Real>(y: &DMatrix<T>, r: usize) -> Result<DMatrix<T>> {
    Ok(MomentSet::from_data(y, r)?.g_hat())
}

/// Lag-`j` cross moments used by all estimators.
///
/// `lead[j-1]` is `Sigma_j^T` and `lag[j-1]` is the matching right half of
/// block row `j` of the stacked regressor matrix (with `lag[0] = Sigma_0`).
/// Built either from data or from the population autocovariances of a
/// known model.
#[derive(Debug, Clone)]
pub struct MomentSet<T: Real> {
    lead: Vec<DMatrix<T>>,
    lag: Vec<DMatrix<T>>,
    n: Option<usize>,
}

impl<T: Real> MomentSet<T> {
    /// Sample moments up to lag `r` from a `p x n` data matrix.
    pub fn from_data(y: &DMatrix<T>, r: usize) -> Result<Self> {
        let n = y.ncols();
        if r == 0 {
            return Err(Error::domain(
                "number of Yule-Walker equations r must be at least 1",
            ));
        }
        if n < 2 || r + 1 >= n {
            return Err(Error::domain(format!(
                "r = {r} lags need more than r + 1 observations, got n = {n}"
            )));
        }
        let inv_n = T::one() / T::of_usize(n);
        let mut lead = Vec::with_capacity(r);
        let mut lag = Vec::with_capacity(r);
        for j in 1..=r {
            let past = y.columns(0, n - j);
            lead.push(past * y.columns(j, n - j).transpose() * inv_n);
            lag.push(past * y.columns(j - 1, n - j).transpose() * inv_n);
        }
        Ok(MomentSet {
            lead,
            lag,
            n: Some(n),
        })
    }

    /// Population moments of a stable model: `Sigma_0` from the Lyapunov
    /// equation and `Sigma_j = D^j Sigma_0`.
    pub fn population(model: &BandedModel<T>, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::domain(
                "number of Yule-Walker equations r must be at least 1",
            ));
        }
        let sigmas = population_autocovariances(model, r)?;
        let lead = (1..=r).map(|j| sigmas[j].transpose()).collect();
        let lag = (0..r).map(|j| sigmas[j].transpose()).collect();
        Ok(MomentSet { lead, lag, n: None })
    }

    pub fn p(&self) -> usize {
        self.lead[0].nrows()
    }

    /// Number of stacked Yule-Walker equations available.
    pub fn max_lag(&self) -> usize {
        self.lead.len()
    }

    /// Sample length, `None` for population moments.
    pub fn n(&self) -> Option<usize> {
        self.n
    }

    pub fn sigma0(&self) -> &DMatrix<T> {
        &self.lag[0]
    }

    /// `Sigma_j` for `1 <= j <= r`.
    pub fn sigma(&self, j: usize) -> Option<DMatrix<T>> {
        j.checked_sub(1)
            .and_then(|idx| self.lead.get(idx))
            .map(|m| m.transpose())
    }

    /// Materializes the full stacked `rp x 2p` regressor matrix.
    pub fn g_hat(&self) -> DMatrix<T> {
        let p = self.p();
        let r = self.max_lag();
        let mut g = DMatrix::zeros(r * p, 2 * p);
        for j in 0..r {
            g.view_mut((j * p, 0), (p, p)).copy_from(&self.lead[j]);
            g.view_mut((j * p, p), (p, p)).copy_from(&self.lag[j]);
        }
        g
    }

    /// Regressor matrix and target of row `support.row` using the first
    /// `lags` block rows: columns `S` of the lead blocks followed by
    /// columns `S+` of the lag blocks.
    pub fn design(&self, support: &BandSupport, lags: usize) -> (DMatrix<T>, DVector<T>) {
        let p = self.p();
        let lags = lags.min(self.max_lag());
        let s = support.spatial.len();
        let mut x = DMatrix::zeros(lags * p, support.tau());
        let mut z = DVector::zeros(lags * p);
        for j in 0..lags {
            let rows = j * p;
            for (c, &col) in support.spatial.iter().enumerate() {
                x.view_mut((rows, c), (p, 1)).copy_from(&self.lead[j].column(col));
            }
            for (c, &col) in support.dynamic.iter().enumerate() {
                x.view_mut((rows, s + c), (p, 1))
                    .copy_from(&self.lag[j].column(col));
            }
            z.rows_mut(rows, p).copy_from(&self.lead[j].column(support.row));
        }
        (x, z)
    }

    /// Lag-one design restricted to the equations in `rows`, kept in the
    /// order given.
    pub fn design_rows(&self, support: &BandSupport, rows: &[usize]) -> (DMatrix<T>, DVector<T>) {
        let s = support.spatial.len();
        let lead = &self.lead[0];
        let lag = &self.lag[0];
        let x = DMatrix::from_fn(rows.len(), support.tau(), |r, c| {
            if c < s {
                lead[(rows[r], support.spatial[c])]
            } else {
                lag[(rows[r], support.dynamic[c - s])]
            }
        });
        let z = DVector::from_fn(rows.len(), |r, _| lead[(rows[r], support.row)]);
        (x, z)
    }
}

/// Population autocovariances `Sigma_0, ..., Sigma_r` of a stable model.
pub fn population_autocovariances<T: Real>(model: &BandedModel<T>, r: usize) -> Result<Vec<DMatrix<T>>> {
    let stability = model.check_stability()?;
    if !stability.stable {
        return Err(Error::Unstable {
            rho: stability.rho.as_f64(),
        });
    }
    let d = model.reduced_form()?;
    let mut out = Vec::with_capacity(r + 1);
    out.push(stationary_covariance(model)?);
    for j in 1..=r {
        let next = &d * &out[j - 1];
        out.push(next);
    }
    Ok(out)
}

/// `Var(y_t)`, solving `X = D X D^T + (I-A)^{-1} Sigma_eps (I-A)^{-T}`.
pub fn stationary_covariance<T: Real>(model: &BandedModel<T>) -> Result<DMatrix<T>> {
    let d = model.reduced_form()?;
    let q = innovation_variance(model)?;
    linalg::solve_discrete_lyapunov(&d, &q)
}

/// `(I-A)^{-1} Sigma_eps (I-A)^{-T}`, the variance of the reduced-form shock.
pub fn innovation_variance<T: Real>(model: &BandedModel<T>) -> Result<DMatrix<T>> {
    let m = model.spatial_inverse()?;
    Ok(&m * model.sigma_eps() * m.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn row(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn scalar_examples() {
        let y = row(&[1.0, 2.0, 3.0]);
        assert_relative_eq!(sigma0_hat(&y).unwrap()[(0, 0)], 5.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(sigma_j_hat(&y, 1).unwrap()[(0, 0)], 8.0 / 3.0, epsilon = 1e-15);
        // j = n - 1 keeps the single product y_n y_1
        assert_relative_eq!(sigma_j_hat(&y, 2).unwrap()[(0, 0)], 3.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_series() {
        let y = DMatrix::<f64>::zeros(3, 10);
        assert_eq!(sigma0_hat(&y).unwrap(), DMatrix::zeros(3, 3));
        assert_eq!(build_g_hat(&y, 2).unwrap(), DMatrix::zeros(6, 6));
    }

    #[test]
    fn domain_errors() {
        let y = row(&[1.0]);
        assert!(sigma0_hat(&y).is_err());
        let y = row(&[1.0, 2.0, 3.0]);
        assert!(sigma_j_hat(&y, 3).is_err());
        assert!(sigma_j_hat(&y, 0).is_err());
        assert!(build_g_hat(&y, 2).is_err());
        assert!(build_g_hat(&y, 0).is_err());
        assert!(build_g_hat(&y, 1).is_ok());
    }

    #[test]
    fn single_lag_g_is_sigma1t_sigma0() {
        let y = DMatrix::from_fn(3, 7, |i, t| ((i * 7 + t * 3) % 5) as f64 - 2.0);
        let g = build_g_hat(&y, 1).unwrap();
        assert_relative_eq!(
            g.columns(0, 3).into_owned(),
            sigma_j_hat(&y, 1).unwrap().transpose(),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            g.columns(3, 3).into_owned(),
            sigma0_hat(&y).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn sigma0_psd() {
        let y = DMatrix::from_fn(4, 9, |i, t| ((i * 13 + t * 7) % 11) as f64 - 5.0);
        let s = sigma0_hat(&y).unwrap();
        assert_eq!(s, s.transpose());
        assert!(linalg::min_sym_eigenvalue(&s) >= -1e-10);
    }

    #[test]
    fn design_picks_support_columns() {
        let y = DMatrix::from_fn(4, 12, |i, t| ((i * 5 + t * 3) % 7) as f64 - 3.0);
        let m = MomentSet::from_data(&y, 2).unwrap();
        let s = BandSupport::new(4, 1, 1).unwrap();
        let (x, z) = m.design(&s, 2);
        let g = m.g_hat();
        assert_eq!(x.shape(), (8, 5));
        assert_eq!(x.column(0), g.column(0));
        assert_eq!(x.column(1), g.column(2));
        assert_eq!(x.column(2), g.column(4));
        assert_eq!(x.column(4), g.column(6));
        assert_eq!(z, g.column(1).into_owned());
        let (xr, zr) = m.design_rows(&s, &[0, 1, 2, 3]);
        assert_eq!(xr, x.rows(0, 4).into_owned());
        assert_eq!(zr, z.rows(0, 4).into_owned());
    }

    // Block row j from the corrected autocovariance form.
    fn g_corrected(y: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
        let (p, n) = y.shape();
        let mut g = DMatrix::zeros(r * p, 2 * p);
        for j in 1..=r {
            let left = sigma_j_hat(y, j).unwrap().transpose();
            let right = if j == 1 {
                sigma0_hat(y).unwrap()
            } else {
                sigma_j_hat(y, j - 1).unwrap().transpose()
                    - y.column(n - j) * y.column(n - 1).transpose() / n as f64
            };
            g.view_mut(((j - 1) * p, 0), (p, p)).copy_from(&left);
            g.view_mut(((j - 1) * p, p), (p, p)).copy_from(&right);
        }
        g
    }

    // Same block rows by explicit summation over t.
    fn g_summed(y: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
        let (p, n) = y.shape();
        let mut g = DMatrix::zeros(r * p, 2 * p);
        for j in 1..=r {
            for t in j..n {
                for a in 0..p {
                    for b in 0..p {
                        g[((j - 1) * p + a, b)] += y[(a, t - j)] * y[(b, t)] / n as f64;
                        g[((j - 1) * p + a, p + b)] += y[(a, t - j)] * y[(b, t - 1)] / n as f64;
                    }
                }
            }
        }
        g
    }

    proptest! {
        #[test]
        fn g_hat_constructions_agree(
            p in 1usize..=10,
            n in 6usize..=50,
            r in 1usize..=4,
            vals in proptest::collection::vec(-3.0f64..3.0, 500),
        ) {
            prop_assume!(r + 1 < n);
            let y = DMatrix::from_fn(p, n, |i, t| vals[i * 50 + t]);
            let g = build_g_hat(&y, r).unwrap();
            let scale = 1.0 + g.amax();
            prop_assert!((&g - g_corrected(&y, r)).amax() <= 1e-12 * scale);
            prop_assert!((&g - g_summed(&y, r)).amax() <= 1e-12 * scale);
        }
    }
}
