//! Ratio-based bandwidth selection.
//!
//! With exact moments `RSS_i(k)` is positive below the true bandwidth and
//! zero from it onwards, so `RSS_i(k-1) / RSS_i(k)` spikes at `k = k0`. A
//! small `w_n = C/n` added to both terms keeps the ratio finite past `k0`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation;
use crate::model::{max_tau, BandSupport, PanelSeries};
use crate::moments::MomentSet;
use crate::scalar::Real;

/// How per-row choices combine into one bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Largest per-row choice.
    #[default]
    Max,
    /// Lower median of the per-row choices.
    Median,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    /// Largest candidate `K`; defaults to [`default_max_k`].
    pub max_k: Option<usize>,
    /// Constant in `w_n = C / n`.
    pub c: f64,
    /// Overrides `C / n`; needed for population moments, which have no `n`.
    pub w_n: Option<f64>,
    pub aggregation: Aggregation,
    /// Yule-Walker lags used for the RSS profile (1 = lag-one estimator).
    pub lags: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            max_k: None,
            c: 1.0,
            w_n: None,
            aggregation: Aggregation::Max,
            lags: 1,
        }
    }
}

impl SelectionConfig {
    pub fn with_max_k(max_k: usize) -> Self {
        SelectionConfig {
            max_k: Some(max_k),
            ..Default::default()
        }
    }
}

/// RSS profile and ratios for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioProfile<T: Real> {
    pub row: usize,
    /// `RSS_i(k)` for `k = 0..=K`.
    pub rss: Vec<T>,
    /// `(RSS_i(k-1) + w_n) / (RSS_i(k) + w_n)` for `k = 1..=K`; `ratios[0]` is `k = 1`.
    pub ratios: Vec<T>,
    pub w_n: T,
    pub k_hat: usize,
}

impl<T: Real> RatioProfile<T> {
    pub fn max_k(&self) -> usize {
        self.ratios.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSelection<T: Real> {
    pub k_hat: usize,
    pub max_k: usize,
    pub w_n: T,
    pub profiles: Vec<RatioProfile<T>>,
}

/// `floor(sqrt(n))`, lowered until every row has at least as many
/// equations as parameters.
pub fn default_max_k(p: usize, n: usize) -> Result<usize> {
    let mut k = ((n as f64).sqrt().floor() as usize).min(p.saturating_sub(1));
    while k >= 1 && max_tau(p, k) > p {
        k -= 1;
    }
    if k == 0 {
        return Err(Error::domain(format!(
            "p = {p} is too small to compare any positive bandwidth"
        )));
    }
    Ok(k)
}

/// `RSS_i(k)` for `k = 0..=max_k`.
pub fn rss_profile<T: Real>(moments: &MomentSet<T>, row: usize, max_k: usize, lags: usize) -> Result<Vec<T>> {
    let p = moments.p();
    let equations = lags * p;
    let tau = BandSupport::new(p, max_k, row)?.tau();
    if tau > equations {
        return Err(Error::domain(format!(
            "K = {max_k} needs {tau} parameters in row {} but only {equations} equations exist; use a smaller K",
            row + 1
        )));
    }
    (0..=max_k)
        .map(|k| {
            let fit = if lags == 1 {
                estimation::fit_row_full(moments, row, k)
            } else {
                estimation::fit_row_multi(moments, row, k, lags)
            };
            fit.map(|f| f.rss)
        })
        .collect()
}

/// Ratios for `k = 1..=K` and their first maximizer.
pub fn ratio_profile<T: Real>(rss: &[T], w_n: T) -> (Vec<T>, usize) {
    let ratios: Vec<T> = rss.windows(2).map(|w| (w[0] + w_n) / (w[1] + w_n)).collect();
    let mut best = 0;
    for (idx, r) in ratios.iter().enumerate() {
        if *r > ratios[best] {
            best = idx;
        }
    }
    (ratios, best + 1)
}

/// Selects the bandwidth from moments already computed.
pub fn select_with_moments<T: Real>(
    moments: &MomentSet<T>,
    cfg: &SelectionConfig,
) -> Result<BandwidthSelection<T>> {
    let p = moments.p();
    if cfg.lags == 0 || cfg.lags > moments.max_lag() {
        return Err(Error::domain(format!(
            "selection with {} lags needs moments up to that lag",
            cfg.lags
        )));
    }
    let w_n = match (cfg.w_n, moments.n()) {
        (Some(w), _) => w,
        (None, Some(n)) => cfg.c / n as f64,
        (None, None) => return Err(Error::domain("w_n must be given for population moments")),
    };
    if !(w_n > 0.0) {
        return Err(Error::domain("w_n = C/n must be positive"));
    }
    let max_k = match cfg.max_k {
        Some(0) => return Err(Error::domain("K must be at least 1")),
        Some(k) => k,
        None => default_max_k(p, moments.n().unwrap_or(usize::MAX))?,
    };
    let w_n = T::lit(w_n);
    let profiles = (0..p)
        .into_par_iter()
        .map(|row| {
            let rss = rss_profile(moments, row, max_k, cfg.lags)?;
            let (ratios, k_hat) = ratio_profile(&rss, w_n);
            Ok(RatioProfile {
                row,
                rss,
                ratios,
                w_n,
                k_hat,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k_hat = aggregate(profiles.iter().map(|pr| pr.k_hat), cfg.aggregation);
    Ok(BandwidthSelection {
        k_hat,
        max_k,
        w_n,
        profiles,
    })
}

fn aggregate(choices: impl Iterator<Item = usize>, how: Aggregation) -> usize {
    let mut v: Vec<usize> = choices.collect();
    match how {
        Aggregation::Max => v.into_iter().max().unwrap_or(1),
        Aggregation::Median => {
            v.sort_unstable();
            v.get((v.len().saturating_sub(1)) / 2).copied().unwrap_or(1)
        }
    }
}

/// Selects the bandwidth of `y`.
pub fn select_bandwidth<T: Real>(y: &PanelSeries<T>, cfg: &SelectionConfig) -> Result<BandwidthSelection<T>> {
    let moments = MomentSet::from_data(y.data(), cfg.lags.max(1))?;
    select_with_moments(&moments, cfg)
}
