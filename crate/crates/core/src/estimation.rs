//! Row-wise generalized Yule-Walker least squares.
//!
//! Row `i` of the model gives the moment identity
//! `Sigma_1^T e_i = Sigma_1^T a_i + Sigma_0 b_i`, which is linear in the
//! banded coefficients `beta_i`. Three estimators solve sample versions of
//! it by least squares:
//!
//! * [`Method::FullYw`] uses all `p` equations of the lag-one identity.
//! * [`Method::ReducedYw`] keeps the `d` equations whose lagged component
//!   correlates most strongly with the row's regressors.
//! * [`Method::MultiYw`] stacks the identities for lags `1..=r`.
//!
//! Regressing `y_t` on `(y_t, y_{t-1})` directly would be inconsistent
//! because `y_t` is correlated with the innovation; the moment equations
//! sidestep that by instrumenting with lagged values.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bandwidth::{self, SelectionConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, BandSupport, PanelSeries};
use crate::moments::MomentSet;
use crate::scalar::Real;

/// Which moment equations feed the least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FullYw,
    /// Keeps `d` screened equations per row.
    ReducedYw(usize),
    /// Stacks `r` lags.
    MultiYw(usize),
}

impl Method {
    /// Number of lags of sample moments the method consumes.
    pub fn lags(&self) -> usize {
        match self {
            Method::MultiYw(r) => *r,
            _ => 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::FullYw => f.write_str("full"),
            Method::ReducedYw(d) => write!(f, "reduced:{d}"),
            Method::MultiYw(r) => write!(f, "multi:{r}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((name, arg)) => (name, Some(arg)),
            None => (s, None),
        };
        let parse_arg = |what: &str| -> Result<usize> {
            arg.ok_or_else(|| Error::domain(format!("method '{name}' needs ':{what}'")))?
                .parse()
                .map_err(|_| Error::domain(format!("bad {what} in method '{s}'")))
        };
        match name {
            "full" => Ok(Method::FullYw),
            "reduced" => Ok(Method::ReducedYw(parse_arg("d")?)),
            "multi" => match parse_arg("r")? {
                0 => Err(Error::domain("multi needs r >= 1")),
                r => Ok(Method::MultiYw(r)),
            },
            _ => Err(Error::domain(format!("unknown method '{s}'"))),
        }
    }
}

/// Default number of screened equations, `min(p, floor(n^0.495))`.
pub fn default_equation_count(p: usize, n: usize) -> usize {
    let d = (n as f64).powf(0.495).floor() as usize;
    d.min(p)
}

/// Estimate for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFit<T: Real> {
    pub row: usize,
    pub k: usize,
    /// Stacked coefficients: `A` band over `S`, then `B` band over `S+`.
    pub beta: DVector<T>,
    /// Residual sum of squares divided by `p`.
    pub rss: T,
    pub method: Method,
    /// False when the design was rank deficient and a minimum-norm
    /// solution was returned.
    pub rank_ok: bool,
}

/// Fitted coefficient matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T: Real> {
    pub a_hat: DMatrix<T>,
    pub b_hat: DMatrix<T>,
    pub k: usize,
    pub method: Method,
    pub rows: Vec<RowFit<T>>,
    /// Sample length the fit used, if fitted from data.
    pub n: Option<usize>,
}

impl<T: Real> FitResult<T> {
    /// Assembles a result from per-row fits.
    pub fn from_rows(
        p: usize,
        k: usize,
        method: Method,
        rows: Vec<RowFit<T>>,
        n: Option<usize>,
    ) -> Result<Self> {
        let mut a_hat = DMatrix::zeros(p, p);
        let mut b_hat = DMatrix::zeros(p, p);
        for fit in &rows {
            let support = BandSupport::new(p, k, fit.row)?;
            let (a_row, b_row) = model::unpack_beta(&fit.beta, &support, p)?;
            a_hat.set_row(fit.row, &a_row.transpose());
            b_hat.set_row(fit.row, &b_row.transpose());
        }
        Ok(FitResult {
            a_hat,
            b_hat,
            k,
            method,
            rows,
            n,
        })
    }

    pub fn p(&self) -> usize {
        self.a_hat.nrows()
    }

    /// `(I - A_hat)^{-1} B_hat`.
    pub fn reduced_form(&self) -> Result<DMatrix<T>> {
        model::reduced_form(&self.a_hat, &self.b_hat)
    }

    pub fn rank_ok(&self) -> bool {
        self.rows.iter().all(|r| r.rank_ok)
    }
}

fn row_fit<T: Real>(
    x: &DMatrix<T>,
    z: &DVector<T>,
    support: &BandSupport,
    method: Method,
    p: usize,
) -> Result<RowFit<T>> {
    let ls = linalg::least_squares(x, z)?;
    Ok(RowFit {
        row: support.row,
        k: support.k,
        beta: ls.coef,
        rss: ls.rss / T::of_usize(p),
        method,
        rank_ok: ls.full_rank,
    })
}

/// Lag-one estimator of row `row` at bandwidth `k`.
pub fn fit_row_full<T: Real>(moments: &MomentSet<T>, row: usize, k: usize) -> Result<RowFit<T>> {
    let p = moments.p();
    let support = BandSupport::new(p, k, row)?;
    if support.tau() > p {
        return Err(Error::UnderDetermined {
            params: support.tau(),
            equations: p,
        });
    }
    let (x, z) = moments.design(&support, 1);
    row_fit(&x, &z, &support, Method::FullYw, p)
}

/// Stacked-lag estimator using lags `1..=r`.
pub fn fit_row_multi<T: Real>(moments: &MomentSet<T>, row: usize, k: usize, r: usize) -> Result<RowFit<T>> {
    let p = moments.p();
    if r == 0 || r > moments.max_lag() {
        return Err(Error::domain(format!(
            "r = {r} lags requested but moments hold {}",
            moments.max_lag()
        )));
    }
    let support = BandSupport::new(p, k, row)?;
    if support.tau() > r * p {
        return Err(Error::UnderDetermined {
            params: support.tau(),
            equations: r * p,
        });
    }
    let (x, z) = moments.design(&support, r);
    row_fit(&x, &z, &support, Method::MultiYw(r), p)
}

/// Screening strengths
/// `delta_l = (1/n) sum_{t=2}^{n} |y_{l,t-1}| (sum_{j in S} |y_{j,t}| + sum_{j in S+} |y_{j,t-1}|)`
/// for every component `l`.
pub fn delta_strengths<T: Real>(y: &DMatrix<T>, support: &BandSupport) -> Result<DVector<T>> {
    let (p, n) = y.shape();
    if n < 2 {
        return Err(Error::domain("screening needs n >= 2"));
    }
    if support.dynamic.last().is_some_and(|&j| j >= p) {
        return Err(Error::domain("support does not fit the panel dimension"));
    }
    // weight[t-1] = sum_{S} |y_{j,t}| + sum_{S+} |y_{j,t-1}|, t = 1..n-1 (0-based)
    let weight = DVector::from_fn(n - 1, |s, _| {
        let now: T = support
            .spatial
            .iter()
            .map(|&j| y[(j, s + 1)].abs())
            .fold(T::zero(), |a, b| a + b);
        let before: T = support
            .dynamic
            .iter()
            .map(|&j| y[(j, s)].abs())
            .fold(T::zero(), |a, b| a + b);
        now + before
    });
    let lagged = y.columns(0, n - 1).map(|v| v.abs());
    Ok(lagged * weight / T::of_usize(n))
}

/// Indices of the `d` largest strengths, ties to the smaller index,
/// returned in ascending order.
pub fn screen_equations<T: Real>(delta: &DVector<T>, d: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..delta.len()).collect();
    idx.sort_by(|&a, &b| {
        delta[b]
            .partial_cmp(&delta[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(d);
    idx.sort_unstable();
    idx
}

/// Lag-one estimator restricted to the given equations.
pub fn fit_row_screened<T: Real>(
    moments: &MomentSet<T>,
    row: usize,
    k: usize,
    equations: &[usize],
) -> Result<RowFit<T>> {
    let p = moments.p();
    let support = BandSupport::new(p, k, row)?;
    if equations.iter().any(|&l| l >= p) {
        return Err(Error::domain("screened equation index out of range"));
    }
    if support.tau() > equations.len() {
        return Err(Error::UnderDetermined {
            params: support.tau(),
            equations: equations.len(),
        });
    }
    let (x, z) = moments.design_rows(&support, equations);
    row_fit(&x, &z, &support, Method::ReducedYw(equations.len()), p)
}

/// Reduced estimator keeping the `d` equations with the largest
/// screening strength.
pub fn fit_row_reduced<T: Real>(
    moments: &MomentSet<T>,
    y: &DMatrix<T>,
    row: usize,
    k: usize,
    d: usize,
) -> Result<RowFit<T>> {
    let p = moments.p();
    if y.nrows() != p {
        return Err(Error::domain("data and moments disagree on p"));
    }
    if d > p {
        return Err(Error::domain(format!("d = {d} exceeds p = {p}")));
    }
    let support = BandSupport::new(p, k, row)?;
    if d < support.tau() {
        return Err(Error::UnderDetermined {
            params: support.tau(),
            equations: d,
        });
    }
    let delta = delta_strengths(y, &support)?;
    let equations = screen_equations(&delta, d);
    fit_row_screened(moments, row, k, &equations)
}

/// Dispatches to the estimator for `method`. `y` is only read by the
/// reduced estimator.
pub fn fit_row<T: Real>(
    moments: &MomentSet<T>,
    y: Option<&DMatrix<T>>,
    row: usize,
    k: usize,
    method: Method,
) -> Result<RowFit<T>> {
    match method {
        Method::FullYw => fit_row_full(moments, row, k),
        Method::MultiYw(r) => fit_row_multi(moments, row, k, r),
        Method::ReducedYw(d) => {
            let y = y.ok_or_else(|| Error::domain("reduced estimator needs the data for screening"))?;
            fit_row_reduced(moments, y, row, k, d)
        }
    }
}

/// Fits every row in parallel and assembles `A_hat`, `B_hat`.
pub fn fit_rows<T: Real>(
    moments: &MomentSet<T>,
    y: Option<&DMatrix<T>>,
    k: usize,
    method: Method,
) -> Result<FitResult<T>> {
    let p = moments.p();
    let rows = (0..p)
        .into_par_iter()
        .map(|i| fit_row(moments, y, i, k, method).map_err(|e| e.at_row(i + 1)))
        .collect::<Result<Vec<_>>>()?;
    FitResult::from_rows(p, k, method, rows, moments.n())
}

/// Lag-one estimator for every row.
pub fn fit_full<T: Real>(y: &PanelSeries<T>, k: usize) -> Result<FitResult<T>> {
    let moments = MomentSet::from_data(y.data(), 1)?;
    fit_rows(&moments, Some(y.data()), k, Method::FullYw)
}

/// How the bandwidth is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthChoice {
    Fixed(usize),
    Select(SelectionConfig),
}

/// Fits `y` with `method`, selecting the bandwidth first when asked.
pub fn fit<T: Real>(y: &PanelSeries<T>, method: Method, bandwidth: &BandwidthChoice) -> Result<FitResult<T>> {
    let moments = MomentSet::from_data(y.data(), method.lags())?;
    let k = match bandwidth {
        BandwidthChoice::Fixed(k) => *k,
        BandwidthChoice::Select(cfg) => bandwidth::select_with_moments(&moments, cfg)?.k_hat,
    };
    fit_rows(&moments, Some(y.data()), k, method)
}
