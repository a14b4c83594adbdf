//! Replication harness: bandwidth-recovery frequencies and operator-norm
//! estimation errors over a grid of `(p, n)` cells.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::bandwidth::{self, SelectionConfig};
use crate::error::{Error, Result};
use crate::estimation::{self, Method};
use crate::linalg::operator_norm;
use crate::model::{max_tau, BandedModel};
use crate::moments::MomentSet;
use crate::simulation::{self, Case, DEFAULT_BURN_IN, DEFAULT_ETA_RANGE};

/// Which equation counts the reduced estimator is compared at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DRule {
    /// Only the full-equation estimators in `r_list`.
    #[default]
    Full,
    /// Adds the reduced estimator with `d = min(p, floor(n^0.495))`.
    PaperRule,
}

impl std::str::FromStr for DRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(DRule::Full),
            "screened" | "paper" | "paper-rule" | "paperrule" | "rule" => Ok(DRule::PaperRule),
            other => Err(Error::domain(format!("unknown d rule {other:?} (expected full or screened)"))),
        }
    }
}

impl std::fmt::Display for DRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DRule::Full => "full",
            DRule::PaperRule => "screened",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub case: Case,
    /// `(p, n)` cells.
    pub grid: Vec<(usize, usize)>,
    pub k0: usize,
    /// Largest candidate bandwidth; `None` uses the default rule per cell.
    pub max_k: Option<usize>,
    pub c: f64,
    pub r_list: Vec<usize>,
    pub d_rule: DRule,
    pub replications: usize,
    pub base_seed: u64,
    pub burn_in: usize,
    pub eta_range: (f64, f64),
    /// Draw new coefficients for every replication instead of once per cell.
    pub redraw_coefficients: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            case: Case::Case2,
            grid: vec![(100, 2000)],
            k0: 1,
            max_k: None,
            c: 1.0,
            r_list: vec![1],
            d_rule: DRule::Full,
            replications: 100,
            base_seed: 1,
            burn_in: DEFAULT_BURN_IN,
            eta_range: DEFAULT_ETA_RANGE,
            redraw_coefficients: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::domain("replications must be at least 1"));
        }
        if self.grid.is_empty() {
            return Err(Error::domain("the grid has no cells"));
        }
        if self.r_list.is_empty() || self.r_list.contains(&0) {
            return Err(Error::domain("r_list must hold positive lag counts"));
        }
        if !(self.c > 0.0) {
            return Err(Error::domain("C must be positive"));
        }
        Ok(())
    }

    fn check_cell(&self, p: usize, n: usize) -> Result<usize> {
        if self.k0 == 0 || self.k0 >= p {
            return Err(Error::domain(format!(
                "k0 = {} must lie in [1, p) for p = {p}",
                self.k0
            )));
        }
        let max_k = match self.max_k {
            Some(k) => k,
            None => bandwidth::default_max_k(p, n)?,
        };
        if max_tau(p, max_k) > p {
            return Err(Error::domain(format!(
                "K = {max_k} needs {} parameters per row but p = {p}",
                max_tau(p, max_k)
            )));
        }
        if n < 3 {
            return Err(Error::domain("n must be at least 3"));
        }
        Ok(max_k)
    }
}

/// Mean and sample standard deviation of one error series.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantErrors {
    pub label: String,
    pub method: Method,
    pub err_a_mean: f64,
    pub err_a_sd: f64,
    pub err_b_mean: f64,
    pub err_b_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub p: usize,
    pub n: usize,
    pub snr_mean: f64,
    pub freq_eq: f64,
    pub freq_gt: f64,
    pub freq_lt: f64,
    pub variants: Vec<VariantErrors>,
    /// Replications that completed.
    pub replications: usize,
    /// Unstable coefficient draws rejected before acceptance.
    pub unstable_redraws: u64,
    /// Replications dropped because a fit failed.
    pub failed: usize,
    /// Set when the whole cell was invalid; the numbers are then empty.
    pub error: Option<String>,
}

impl CellSummary {
    fn invalid(p: usize, n: usize, err: &Error) -> Self {
        CellSummary {
            p,
            n,
            snr_mean: f64::NAN,
            freq_eq: 0.0,
            freq_gt: 0.0,
            freq_lt: 0.0,
            variants: Vec::new(),
            replications: 0,
            unstable_redraws: 0,
            failed: 0,
            error: Some(err.to_string()),
        }
    }

    pub fn variant(&self, label: &str) -> Option<&VariantErrors> {
        self.variants.iter().find(|v| v.label == label)
    }
}

/// Estimators compared in each replication, with their column labels.
pub fn variants(spec: &ExperimentSpec, p: usize, n: usize) -> Vec<(String, Method)> {
    let mut out: Vec<(String, Method)> = spec
        .r_list
        .iter()
        .map(|&r| {
            let method = if r == 1 {
                Method::FullYw
            } else {
                Method::MultiYw(r)
            };
            let label = match (spec.d_rule, r) {
                (DRule::PaperRule, 1) => "I".to_string(),
                _ => format!("r={r}"),
            };
            (label, method)
        })
        .collect();
    if spec.d_rule == DRule::PaperRule {
        let d = estimation::default_equation_count(p, n);
        out.push(("II".to_string(), Method::ReducedYw(d)));
    }
    out
}

/// SplitMix64 finalizer, used to spread cell and replication indices.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Replication {
    k_hat: usize,
    snr: f64,
    redraws: u64,
    errors: Vec<(f64, f64)>,
}

fn replicate_once(
    spec: &ExperimentSpec,
    model: &BandedModel<f64>,
    redraws: u64,
    n: usize,
    max_k: usize,
    seed: u64,
    methods: &[(String, Method)],
) -> Result<Replication> {
    let y = simulation::simulate(model, n, spec.burn_in, seed)?;
    let max_lag = methods.iter().map(|(_, m)| m.lags()).max().unwrap_or(1);
    let moments = MomentSet::from_data(y.data(), max_lag)?;
    let cfg = SelectionConfig {
        max_k: Some(max_k),
        c: spec.c,
        ..Default::default()
    };
    let k_hat = bandwidth::select_with_moments(&moments, &cfg)?.k_hat;
    let errors = methods
        .iter()
        .map(|(_, method)| {
            let fit = estimation::fit_rows(&moments, Some(y.data()), k_hat, *method)?;
            Ok((
                operator_norm(&(&fit.a_hat - model.a())),
                operator_norm(&(&fit.b_hat - model.b())),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Replication {
        k_hat,
        snr: simulation::snr(model)?,
        redraws,
        errors,
    })
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

fn run_cell(spec: &ExperimentSpec, cell: usize, p: usize, n: usize) -> Result<CellSummary> {
    let max_k = spec.check_cell(p, n)?;
    let methods = variants(spec, p, n);
    let cell_seed = mix(spec.base_seed, cell as u64, 0);
    let fixed = if spec.redraw_coefficients {
        None
    } else {
        Some(simulation::draw_stable_model::<f64>(
            spec.case,
            p,
            spec.k0,
            cell_seed,
            spec.eta_range,
        )?)
    };
    let outcomes: Vec<Result<Replication>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = mix(spec.base_seed, cell as u64, rep as u64 + 1);
            let owned;
            let (model, redraws) = match &fixed {
                Some(draw) => (&draw.model, 0),
                None => {
                    owned =
                        simulation::draw_stable_model::<f64>(spec.case, p, spec.k0, seed, spec.eta_range)?;
                    (&owned.model, owned.attempts - 1)
                }
            };
            replicate_once(spec, model, redraws, n, max_k, seed, &methods)
        })
        .collect();

    let mut done = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => done.push(r),
            Err(e) if e.is_numerical() || matches!(e, Error::Row { .. } | Error::UnderDetermined { .. }) => {
                log::warn!("cell (p={p}, n={n}) replication {rep} failed: {e}");
                failed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let count = done.len();
    let freq = |pred: &dyn Fn(usize) -> bool| {
        if count == 0 {
            0.0
        } else {
            done.iter().filter(|r| pred(r.k_hat)).count() as f64 / count as f64
        }
    };
    let k0 = spec.k0;
    let freq_eq = freq(&|k| k == k0);
    let freq_gt = freq(&|k| k > k0);
    let freq_lt = freq(&|k| k < k0);
    let variants = methods
        .iter()
        .enumerate()
        .map(|(idx, (label, method))| {
            let (err_a_mean, err_a_sd) = mean_sd(done.iter().map(|r| r.errors[idx].0));
            let (err_b_mean, err_b_sd) = mean_sd(done.iter().map(|r| r.errors[idx].1));
            VariantErrors {
                label: label.clone(),
                method: *method,
                err_a_mean,
                err_a_sd,
                err_b_mean,
                err_b_sd,
            }
        })
        .collect();
    let fixed_redraws = fixed.as_ref().map_or(0, |d| d.attempts - 1);
    Ok(CellSummary {
        p,
        n,
        snr_mean: mean_sd(done.iter().map(|r| r.snr)).0,
        freq_eq,
        freq_gt,
        freq_lt,
        variants,
        replications: count,
        unstable_redraws: fixed_redraws + done.iter().map(|r| r.redraws).sum::<u64>(),
        failed,
        error: None,
    })
}

/// Runs every cell. Invalid cells are reported in their summary and the
/// run continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<CellSummary>> {
    spec.validate()?;
    Ok(spec
        .grid
        .iter()
        .enumerate()
        .map(|(cell, &(p, n))| {
            log::info!("cell {} of {}: p = {p}, n = {n}", cell + 1, spec.grid.len());
            run_cell(spec, cell, p, n).unwrap_or_else(|e| {
                log::warn!("cell (p={p}, n={n}) skipped: {e}");
                CellSummary::invalid(p, n, &e)
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableFormat {
    #[default]
    Csv,
    Text,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "text" | "txt" => Ok(TableFormat::Text),
            other => Err(Error::domain(format!("unknown table format {other:?}"))),
        }
    }
}

/// Renders summaries as CSV or as an aligned text table with
/// `mean (sd)` cells. Variant columns follow the first summary that has any.
pub fn emit_table(summaries: &[CellSummary], format: TableFormat) -> String {
    let labels: Vec<String> = summaries
        .iter()
        .find(|s| !s.variants.is_empty())
        .map(|s| s.variants.iter().map(|v| v.label.clone()).collect())
        .unwrap_or_default();
    let mut header: Vec<String> = ["p", "n", "snr", "k_hat=k0", "k_hat>k0", "k_hat<k0"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    match format {
        TableFormat::Csv => {
            for l in &labels {
                for part in ["errA_mean", "errA_sd", "errB_mean", "errB_sd"] {
                    header.push(format!("{part}[{l}]"));
                }
            }
            header.push("error".into());
            for s in summaries {
                let mut row = base_cells(s);
                for l in &labels {
                    match s.variant(l) {
                        Some(v) => row.extend(
                            [v.err_a_mean, v.err_a_sd, v.err_b_mean, v.err_b_sd]
                                .iter()
                                .map(|x| format!("{x:.6}")),
                        ),
                        None => row.extend(std::iter::repeat_n(String::new(), 4)),
                    }
                }
                row.push(s.error.clone().unwrap_or_default().replace(',', ";"));
                rows.push(row);
            }
            let mut out = header.join(",");
            out.push('\n');
            for row in rows {
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        }
        TableFormat::Text => {
            for l in &labels {
                header.push(format!("||A-Ahat|| {l}"));
            }
            for l in &labels {
                header.push(format!("||B-Bhat|| {l}"));
            }
            for s in summaries {
                let mut row = base_cells(s);
                if let Some(e) = &s.error {
                    row.push(format!("skipped: {e}"));
                } else {
                    for l in &labels {
                        row.push(s.variant(l).map_or(String::new(), |v| {
                            format!("{:.3} ({:.3})", v.err_a_mean, v.err_a_sd)
                        }));
                    }
                    for l in &labels {
                        row.push(s.variant(l).map_or(String::new(), |v| {
                            format!("{:.3} ({:.3})", v.err_b_mean, v.err_b_sd)
                        }));
                    }
                }
                rows.push(row);
            }
            let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for row in &rows {
                for (i, cell) in row.iter().enumerate() {
                    if i < widths.len() {
                        widths[i] = widths[i].max(cell.len());
                    }
                }
            }
            let mut out = String::new();
            let line = |cells: &[String], out: &mut String| {
                let parts: Vec<String> = cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| format!("{c:>w$}", w = widths.get(i).copied().unwrap_or(0)))
                    .collect();
                let _ = writeln!(out, "{}", parts.join("  ").trim_end());
            };
            line(&header, &mut out);
            for row in &rows {
                line(row, &mut out);
            }
            out
        }
    }
}

fn base_cells(s: &CellSummary) -> Vec<String> {
    vec![
        s.p.to_string(),
        s.n.to_string(),
        format!("{:.3}", s.snr_mean),
        format!("{:.3}", s.freq_eq),
        format!("{:.3}", s.freq_gt),
        format!("{:.3}", s.freq_lt),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            case: Case::Case2,
            grid: vec![(14, 300)],
            k0: 1,
            max_k: Some(3),
            replications: 6,
            base_seed: 11,
            burn_in: 100,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = small_spec();
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].replications, 6);
        assert!(a[0].error.is_none());
    }

    #[test]
    fn invalid_cell_does_not_stop_run() {
        let mut spec = small_spec();
        spec.grid = vec![(4, 300), (14, 300)];
        let out = run_experiment(&spec).unwrap();
        assert!(out[0].error.is_some());
        assert!(out[1].error.is_none());
    }

    #[test]
    fn invalid_specs() {
        let mut spec = small_spec();
        spec.replications = 0;
        assert!(run_experiment(&spec).is_err());
        let mut spec = small_spec();
        spec.r_list = vec![];
        assert!(run_experiment(&spec).is_err());
        assert_eq!("screened".parse::<DRule>().unwrap(), DRule::PaperRule);
        assert_eq!("paper".parse::<DRule>().unwrap(), DRule::PaperRule);
        assert!("bogus".parse::<DRule>().is_err());
    }

    #[test]
    fn reduced_equals_full_when_d_is_p() {
        let mut spec = small_spec();
        spec.d_rule = DRule::PaperRule;
        // floor(300^0.495) = 16 >= p = 14
        let out = run_experiment(&spec).unwrap();
        let (one, two) = (out[0].variant("I").unwrap(), out[0].variant("II").unwrap());
        assert!((one.err_a_mean - two.err_a_mean).abs() <= 1e-12);
        assert!((one.err_b_mean - two.err_b_mean).abs() <= 1e-12);
    }

    #[test]
    fn redrawing_coefficients_counts_and_differs() {
        let mut spec = small_spec();
        spec.redraw_coefficients = true;
        let out = run_experiment(&spec).unwrap();
        assert_eq!(out[0].replications + out[0].failed, 6);
        assert_ne!(out[0], run_experiment(&small_spec()).unwrap()[0]);
    }

    #[test]
    fn table_shapes() {
        let csv = emit_table(&[], TableFormat::Csv);
        assert_eq!(csv.lines().count(), 1);
        let text = emit_table(&[], TableFormat::Text);
        assert_eq!(text.lines().count(), 1);

        let mut spec = small_spec();
        spec.d_rule = DRule::PaperRule;
        let out = run_experiment(&spec).unwrap();
        let csv = emit_table(&out, TableFormat::Csv);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().next().unwrap().contains("errA_mean[II]"));
        let text = emit_table(&out, TableFormat::Text);
        let head = text.lines().next().unwrap();
        assert!(head.contains("||A-Ahat|| I") && head.contains("||A-Ahat|| II"));
        assert_eq!(text.lines().count(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn frequencies_sum_to_one(seed in 0u64..10_000, k0 in 1usize..3) {
            let spec = ExperimentSpec {
                grid: vec![(10, 120)],
                k0,
                max_k: Some(2),
                replications: 4,
                base_seed: seed,
                burn_in: 50,
                ..Default::default()
            };
            let s = &run_experiment(&spec).unwrap()[0];
            prop_assert!((s.freq_eq + s.freq_gt + s.freq_lt - 1.0).abs() <= 1e-12);
            prop_assert!(s.freq_lt >= 0.0);
            for v in &s.variants {
                prop_assert!(v.err_a_sd >= 0.0 && v.err_b_sd >= 0.0);
            }
        }
    }
}
