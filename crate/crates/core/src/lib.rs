//! Banded spatio-temporal autoregressions.
//!
//! The model is `y_t = A y_t + B y_{t-1} + e_t` for a `p`-dimensional panel
//! whose components are ordered in space. `A` and `B` are banded with
//! half-width `k0` and `A` has a zero diagonal. Coefficients are estimated
//! row by row from generalized Yule-Walker equations, the bandwidth is
//! chosen by an RSS-ratio criterion, and forecasts iterate the reduced form
//! `D = (I - A)^{-1} B`.
//!
//! Row and column indices are 0-based throughout the library; text formats
//! in [`io`] use 1-based indices.
//!
//! ```
//! use bstar::{simulation, estimation, bandwidth, Case};
//!
//! let draw = simulation::draw_stable_model::<f64>(Case::Case2, 20, 1, 7, simulation::DEFAULT_ETA_RANGE).unwrap();
//! let y = simulation::simulate(&draw.model, 500, 200, 1).unwrap();
//! let sel = bandwidth::select_bandwidth(&y, &bandwidth::SelectionConfig::with_max_k(3)).unwrap();
//! let fit = estimation::fit_full(&y, sel.k_hat).unwrap();
//! assert_eq!(fit.a_hat.nrows(), 20);
//! ```

// negated comparisons deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod error;
pub mod estimation;
pub mod forecasting;
pub mod io;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod montecarlo;
pub mod scalar;
pub mod simulation;

pub use bandwidth::{select_bandwidth, Aggregation, BandwidthSelection, RatioProfile, SelectionConfig};
pub use error::{Error, Result};
pub use estimation::{fit, fit_full, BandwidthChoice, FitResult, Method, RowFit};
pub use forecasting::{forecast, moving_window_cv, select_ordering, CvConfig, CvReport, LevelHit, Ordering};
pub use model::{BandSupport, BandedModel, PanelSeries};
pub use moments::MomentSet;
pub use montecarlo::{run_experiment, CellSummary, DRule, ExperimentSpec};
pub use scalar::Real;
pub use simulation::{Case, SimConfig};

pub type BandedModel64 = BandedModel<f64>;
pub type BandedModel32 = BandedModel<f32>;
pub type PanelSeries64 = PanelSeries<f64>;
pub type PanelSeries32 = PanelSeries<f32>;
pub type FitResult64 = FitResult<f64>;
pub type FitResult32 = FitResult<f32>;
pub type MomentSet64 = MomentSet<f64>;
pub type MomentSet32 = MomentSet<f32>;
pub type CvReport64 = CvReport<f64>;
