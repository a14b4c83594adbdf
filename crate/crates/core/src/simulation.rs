//! Coefficient designs and stationary sample paths.
//!
//! Randomness comes from ChaCha8 seeded by a 64-bit seed, with a separate
//! 64-bit stream id for each purpose (coefficients, rescaling, innovations).
//! Different seeds or different streams give independent sequences, so a
//! replication harness can hand each replication its own seed without
//! coordination.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BandedModel, PanelSeries};
use crate::moments;
use crate::scalar::Real;

pub const STREAM_COEFFICIENTS: u64 = 1;
pub const STREAM_RESCALE: u64 = 2;
pub const STREAM_INNOVATIONS: u64 = 3;

pub const DEFAULT_BURN_IN: usize = 500;
pub const DEFAULT_ETA_RANGE: (f64, f64) = (0.4, 0.8);
/// Redraw budget for unstable coefficient draws.
pub const MAX_DRAW_ATTEMPTS: u64 = 1000;

/// Generator for `(seed, stream)`.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Coefficient design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    /// Outer band from `{-2, 2}`, inner band from a 40% zero-inflated N(0,1).
    Case1,
    /// Outer band from `U([-2.5,-1.5] u [1.5,2.5])`, inner band from `U[-1,1]`.
    Case2,
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "case1" => Ok(Case::Case1),
            "2" | "case2" => Ok(Case::Case2),
            other => Err(Error::domain(format!(
                "unknown case '{other}' (expected case1 or case2)"
            ))),
        }
    }
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Case::Case1 => "case1",
            Case::Case2 => "case2",
        })
    }
}

/// Settings for one simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub p: usize,
    pub k0: usize,
    pub n: usize,
    pub case: Case,
    pub burn_in: usize,
    pub seed: u64,
    pub eta_range: (f64, f64),
}

impl SimConfig {
    pub fn new(p: usize, k0: usize, n: usize, case: Case, seed: u64) -> Self {
        SimConfig {
            p,
            k0,
            n,
            case,
            burn_in: DEFAULT_BURN_IN,
            seed,
            eta_range: DEFAULT_ETA_RANGE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::domain("n must be at least 2"));
        }
        if self.k0 == 0 || self.k0 >= self.p {
            return Err(Error::domain(format!(
                "k0 must satisfy 1 <= k0 < p (k0 = {}, p = {})",
                self.k0, self.p
            )));
        }
        check_eta_range(self.eta_range)
    }
}

fn check_eta_range((lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(Error::domain(format!(
            "eta range [{lo}, {hi}] must lie inside (0, 1)"
        )));
    }
    Ok(())
}

fn check_design_args(p: usize, k0: usize) -> Result<()> {
    if k0 == 0 {
        return Err(Error::domain(
            "coefficient designs need k0 >= 1 (no outer band at k0 = 0)",
        ));
    }
    if k0 >= p {
        return Err(Error::domain(format!("k0 = {k0} must be smaller than p = {p}")));
    }
    Ok(())
}

/// Fills the band of `A` and `B` entry by entry, row-major, `A` first.
fn fill_band<T: Real>(
    p: usize,
    k0: usize,
    rng: &mut ChaCha8Rng,
    mut outer: impl FnMut(&mut ChaCha8Rng) -> f64,
    mut inner: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> (DMatrix<T>, DMatrix<T>) {
    let mut a = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(p, p);
    for (m, is_spatial) in [(&mut a, true), (&mut b, false)] {
        for i in 0..p {
            let lo = i.saturating_sub(k0);
            let hi = (i + k0).min(p - 1);
            for j in lo..=hi {
                let dist = i.abs_diff(j);
                if is_spatial && dist == 0 {
                    continue;
                }
                let v = if dist == k0 { outer(rng) } else { inner(rng) };
                m[(i, j)] = T::lit(v);
            }
        }
    }
    (a, b)
}

/// Unscaled Case 1 draw.
pub fn gen_case1<T: Real>(p: usize, k0: usize, seed: u64) -> Result<(DMatrix<T>, DMatrix<T>)> {
    check_design_args(p, k0)?;
    let mut rng = rng(seed, STREAM_COEFFICIENTS);
    Ok(fill_band(
        p,
        k0,
        &mut rng,
        |r| if r.random::<bool>() { 2.0 } else { -2.0 },
        |r| {
            if r.random_bool(0.4) {
                0.0
            } else {
                r.sample(StandardNormal)
            }
        },
    ))
}

/// Unscaled Case 2 draw.
pub fn gen_case2<T: Real>(p: usize, k0: usize, seed: u64) -> Result<(DMatrix<T>, DMatrix<T>)> {
    check_design_args(p, k0)?;
    let mut rng = rng(seed, STREAM_COEFFICIENTS);
    Ok(fill_band(
        p,
        k0,
        &mut rng,
        |r| {
            let mag = r.random_range(1.5..=2.5);
            if r.random::<bool>() {
                mag
            } else {
                -mag
            }
        },
        |r| r.random_range(-1.0..=1.0),
    ))
}

pub fn gen_case<T: Real>(case: Case, p: usize, k0: usize, seed: u64) -> Result<(DMatrix<T>, DMatrix<T>)> {
    match case {
        Case::Case1 => gen_case1(p, k0, seed),
        Case::Case2 => gen_case2(p, k0, seed),
    }
}

/// Rescales to `eta1 A / ||A||_2` and `eta2 B / ||B||_2`.
pub fn rescale_with<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    eta1: T,
    eta2: T,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let na = linalg::operator_norm(a);
    let nb = linalg::operator_norm(b);
    if !(na > T::zero()) || !(nb > T::zero()) {
        return Err(Error::domain("cannot rescale a zero coefficient matrix"));
    }
    Ok((a * (eta1 / na), b * (eta2 / nb)))
}

/// Rescaled `A`, `B` and the `(eta1, eta2)` used.
pub type Rescaled<T> = (DMatrix<T>, DMatrix<T>, (f64, f64));

/// Rescaled pair with `eta1, eta2` drawn independently from `eta_range`.
pub fn rescale_pair<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    seed: u64,
    eta_range: (f64, f64),
) -> Result<Rescaled<T>> {
    check_eta_range(eta_range)?;
    let mut rng = rng(seed, STREAM_RESCALE);
    let (lo, hi) = eta_range;
    let eta1 = rng.random_range(lo..=hi);
    let eta2 = rng.random_range(lo..=hi);
    let (a2, b2) = rescale_with(a, b, T::lit(eta1), T::lit(eta2))?;
    Ok((a2, b2, (eta1, eta2)))
}

/// A stable model and the number of draws it took.
#[derive(Debug, Clone)]
pub struct StableDraw<T: Real> {
    pub model: BandedModel<T>,
    pub eta: (f64, f64),
    /// Attempts used; `attempts - 1` draws were rejected as unstable.
    pub attempts: u64,
}

/// Draws, rescales and checks stability, retrying with `seed + attempt`
/// until a stable pair appears.
pub fn draw_stable_model<T: Real>(
    case: Case,
    p: usize,
    k0: usize,
    seed: u64,
    eta_range: (f64, f64),
) -> Result<StableDraw<T>> {
    let mut last_rho = f64::NAN;
    for attempt in 0..MAX_DRAW_ATTEMPTS {
        let sub_seed = seed.wrapping_add(attempt);
        let (a, b) = gen_case::<T>(case, p, k0, sub_seed)?;
        let (a, b, eta) = rescale_pair(&a, &b, sub_seed, eta_range)?;
        let model = BandedModel::with_unit_noise(k0, a, b)?;
        match model.check_stability() {
            Ok(s) if s.stable => {
                return Ok(StableDraw {
                    model,
                    eta,
                    attempts: attempt + 1,
                })
            }
            Ok(s) => last_rho = s.rho.as_f64(),
            Err(e) if e.is_numerical() => {}
            Err(e) => return Err(e),
        }
        log::debug!("rejected unstable draw (seed {sub_seed})");
    }
    Err(Error::Unstable { rho: last_rho })
}

/// Simulates `n` observations after discarding `burn_in`, starting from
/// `y_0 = 0` and iterating `y_t = D y_{t-1} + (I - A)^{-1} e_t`.
pub fn simulate<T: Real>(
    model: &BandedModel<T>,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<PanelSeries<T>> {
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    let stability = model.check_stability()?;
    if !stability.stable {
        return Err(Error::Unstable {
            rho: stability.rho.as_f64(),
        });
    }
    let p = model.p();
    let d = model.reduced_form()?;
    let mut shock = model.spatial_inverse()?;
    if *model.sigma_eps() != DMatrix::identity(p, p) {
        shock *= linalg::sym_sqrt(model.sigma_eps());
    }

    let mut rng = rng(seed, STREAM_INNOVATIONS);
    let mut out = DMatrix::zeros(p, n);
    let mut y = DVector::zeros(p);
    let mut next = DVector::zeros(p);
    let mut eps = DVector::zeros(p);
    for step in 0..burn_in + n {
        for e in eps.iter_mut() {
            *e = T::lit(rng.sample::<f64, _>(StandardNormal));
        }
        next.gemv(T::one(), &d, &y, T::zero());
        next.gemv(T::one(), &shock, &eps, T::one());
        std::mem::swap(&mut y, &mut next);
        if step >= burn_in {
            out.set_column(step - burn_in, &y);
        }
    }
    PanelSeries::new(out)
}

/// `tr Var(y_t) / tr{(I-A)^{-1} Sigma_eps (I-A)^{-T}}`.
pub fn snr<T: Real>(model: &BandedModel<T>) -> Result<T> {
    let stability = model.check_stability()?;
    if !stability.stable {
        return Err(Error::Unstable {
            rho: stability.rho.as_f64(),
        });
    }
    let q = moments::innovation_variance(model)?;
    let sigma0 = moments::stationary_covariance(model)?;
    Ok(sigma0.trace() / q.trace())
}
