//! Post-sample prediction, moving-window cross-validation and ordering
//! selection.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bandwidth::{self, SelectionConfig};
use crate::error::{Error, Result};
use crate::estimation::{self, FitResult, Method};
use crate::model::{self, BandSupport, PanelSeries};
use crate::moments::MomentSet;
use crate::scalar::Real;

/// Iterates `y <- D y` `h` times; future innovations are set to zero.
pub fn iterate_forecast<T: Real>(d: &DMatrix<T>, y_last: &DVector<T>, h: usize) -> DVector<T> {
    let mut y = y_last.clone();
    for _ in 0..h {
        y = d * y;
    }
    y
}

/// `h`-step prediction `D_hat^h y_last` from a fitted model.
pub fn forecast<T: Real>(fit: &FitResult<T>, y_last: &DVector<T>, h: usize) -> Result<DVector<T>> {
    if h == 0 {
        return Err(Error::domain("forecast horizon must be at least 1"));
    }
    if y_last.len() != fit.p() {
        return Err(Error::domain(format!(
            "last observation has {} components but the model has {}",
            y_last.len(),
            fit.p()
        )));
    }
    let d = fit.reduced_form()?;
    Ok(iterate_forecast(&d, y_last, h))
}

/// Whether the training window slides or grows with the forecast origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowMode {
    #[default]
    Sliding,
    Expanding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    /// Observations in each training window.
    pub window: usize,
    pub horizons: Vec<usize>,
    pub method: Method,
    /// Fixed bandwidth; when `None` it is selected once on the first window.
    pub k: Option<usize>,
    pub selection: SelectionConfig,
    pub mode: WindowMode,
}

impl CvConfig {
    pub fn new(window: usize, horizons: Vec<usize>) -> Self {
        CvConfig {
            window,
            horizons,
            method: Method::FullYw,
            k: None,
            selection: SelectionConfig::default(),
            mode: WindowMode::Sliding,
        }
    }
}

/// Errors at one horizon. `predicted` and `actual` are `p x origins`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSummary<T: Real> {
    pub h: usize,
    /// Mean of squared errors over components and origins.
    pub mspe: T,
    /// Sample standard deviation of those squared errors.
    pub sd: T,
    pub predicted: DMatrix<T>,
    pub actual: DMatrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport<T: Real> {
    pub label: String,
    pub k_hat: usize,
    /// 0-based index of the first forecast origin (first column not in the
    /// first training window).
    pub first_origin: usize,
    pub horizons: Vec<HorizonSummary<T>>,
}

impl<T: Real> CvReport<T> {
    pub fn horizon(&self, h: usize) -> Option<&HorizonSummary<T>> {
        self.horizons.iter().find(|s| s.h == h)
    }
}

fn mean_sd<T: Real>(values: impl Iterator<Item = T> + Clone) -> (T, T) {
    let count = values.clone().count();
    if count == 0 {
        return (T::zero(), T::zero());
    }
    let mean = values.clone().fold(T::zero(), |a, b| a + b) / T::of_usize(count);
    if count < 2 {
        return (mean, T::zero());
    }
    let ss = values.fold(T::zero(), |a, b| a + (b - mean) * (b - mean));
    (mean, (ss / T::of_usize(count - 1)).sqrt())
}

/// Refits on the window before each origin and scores `h`-step forecasts.
///
/// Origins run from `window` to `n - max(h)` (0-based column of the first
/// unseen observation); the forecast for horizon `h` targets column
/// `origin + h - 1`.
pub fn moving_window_cv<T: Real>(y: &PanelSeries<T>, cfg: &CvConfig, label: &str) -> Result<CvReport<T>> {
    let (p, n) = (y.p(), y.n());
    let max_h = *cfg
        .horizons
        .iter()
        .max()
        .ok_or_else(|| Error::domain("at least one horizon is required"))?;
    if cfg.horizons.contains(&0) {
        return Err(Error::domain("horizons must be positive"));
    }
    if cfg.window < 3 || cfg.window + max_h > n {
        return Err(Error::domain(format!(
            "window {} plus horizon {max_h} exceeds n = {n}",
            cfg.window
        )));
    }
    let lags = cfg.method.lags();
    let first = y.window(0, cfg.window)?;
    let k = match cfg.k {
        Some(k) => k,
        None => bandwidth::select_bandwidth(&first, &cfg.selection)?.k_hat,
    };
    let needed = (0..p)
        .map(|i| BandSupport::new(p, k, i).map(|s| s.tau()))
        .try_fold(0, |m, t| t.map(|t| m.max(t)))?;
    let equations = match cfg.method {
        Method::FullYw => p,
        Method::ReducedYw(d) => d,
        Method::MultiYw(r) => r * p,
    };
    if needed > equations {
        return Err(Error::domain(format!(
            "bandwidth {k} needs {needed} equations per row but {} provides {equations}",
            cfg.method
        )));
    }

    let origins: Vec<usize> = (cfg.window..=n - max_h).collect();
    let data = y.data();
    let per_origin = origins
        .par_iter()
        .map(|&origin| {
            let start = match cfg.mode {
                WindowMode::Sliding => origin - cfg.window,
                WindowMode::Expanding => 0,
            };
            let train = data.columns(start, origin - start).into_owned();
            let moments = MomentSet::from_data(&train, lags)?;
            let fit = estimation::fit_rows(&moments, Some(&train), k, cfg.method)?;
            let d = fit.reduced_form()?;
            let mut preds = Vec::with_capacity(max_h);
            let mut cur = data.column(origin - 1).into_owned();
            for _ in 0..max_h {
                cur = &d * cur;
                preds.push(cur.clone());
            }
            Ok(preds)
        })
        .collect::<Result<Vec<_>>>()?;

    let horizons = cfg
        .horizons
        .iter()
        .map(|&h| {
            let predicted = DMatrix::from_fn(p, origins.len(), |i, o| per_origin[o][h - 1][i]);
            let actual = DMatrix::from_fn(p, origins.len(), |i, o| data[(i, origins[o] + h - 1)]);
            let sq = (&predicted - &actual).map(|e| e * e);
            let (mspe, sd) = mean_sd(sq.iter().copied());
            HorizonSummary {
                h,
                mspe,
                sd,
                predicted,
                actual,
            }
        })
        .collect();
    Ok(CvReport {
        label: label.to_string(),
        k_hat: k,
        first_origin: cfg.window,
        horizons,
    })
}

/// A candidate arrangement of the panel components.
#[derive(Debug, Clone, PartialEq)]
pub struct Ordering {
    pub label: String,
    /// `perm[r]` is the original component placed in row `r`.
    pub perm: Vec<usize>,
}

/// Scores each ordering by moving-window cross-validation on the centered,
/// permuted panel and ranks them by the error at the first horizon.
pub fn select_ordering<T: Real>(
    raw: &DMatrix<T>,
    orderings: &[Ordering],
    cfg: &CvConfig,
) -> Result<Vec<CvReport<T>>> {
    let base = PanelSeries::new(raw.clone())?;
    let mut reports = orderings
        .iter()
        .map(|o| {
            model::validate_permutation(&o.perm, raw.nrows())?;
            let y = base.permuted(&o.perm)?.centered();
            moving_window_cv(&y, cfg, &o.label)
        })
        .collect::<Result<Vec<_>>>()?;
    // stable sort keeps input order among equal scores
    reports.sort_by(|a, b| {
        let ka = a.horizons[0].mspe;
        let kb = b.horizons[0].mspe;
        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(reports)
}

/// Hit counts for one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelHit {
    pub level: usize,
    /// Instances whose actual value falls in this level.
    pub total: usize,
    /// Of those, instances predicted in the same level.
    pub hits: usize,
}

impl LevelHit {
    /// `hits / total`, `None` when the level never occurs.
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }
}

/// Level of `v` under ascending breaks: the number of breaks `<= v`.
pub fn level_of<T: Real>(v: T, thresholds: &[T]) -> usize {
    thresholds.partition_point(|t| *t <= v)
}

/// Per-level hit rates of `pred` against `actual` with `thresholds.len() + 1` levels.
pub fn level_accuracy<T: Real>(pred: &[T], actual: &[T], thresholds: &[T]) -> Result<Vec<LevelHit>> {
    if pred.len() != actual.len() {
        return Err(Error::domain("predictions and actual values differ in length"));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("thresholds must be strictly ascending"));
    }
    let mut out: Vec<LevelHit> = (0..=thresholds.len())
        .map(|level| LevelHit {
            level,
            total: 0,
            hits: 0,
        })
        .collect();
    for (&p, &a) in pred.iter().zip(actual) {
        let la = level_of(a, thresholds);
        out[la].total += 1;
        if level_of(p, thresholds) == la {
            out[la].hits += 1;
        }
    }
    Ok(out)
}
