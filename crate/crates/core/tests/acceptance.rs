//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bstar::bandwidth::{self, SelectionConfig};
use bstar::estimation::{self, Method};
use bstar::forecasting::{self, CvConfig};
use bstar::linalg;
use bstar::model::{BandSupport, BandedModel, PanelSeries};
use bstar::moments::{self, MomentSet};
use bstar::montecarlo::{self, DRule, ExperimentSpec};
use bstar::simulation::{self, Case, DEFAULT_BURN_IN, DEFAULT_ETA_RANGE};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_data(rng: &mut ChaCha8Rng, p: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0))
}

/// Rows whose population lag-one design at the true bandwidth has full
/// column rank.
fn identified_rows(pop: &MomentSet<f64>, k0: usize) -> Vec<usize> {
    (0..pop.p())
        .filter(|&i| {
            estimation::fit_row_full(pop, i, k0)
                .map(|f| f.rank_ok)
                .unwrap_or(false)
        })
        .collect()
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn oracle_exactness() -> Outcome {
    let start = Instant::now();
    let (mut checked, mut skipped, mut rss_checks) = (0usize, 0usize, 0usize);
    let (mut exempt, mut exempt_zero) = (0usize, 0usize);
    let mut worst_beta = 0.0f64;
    let mut worst_rss = 0.0f64;
    let mut min_under = f64::INFINITY;
    let mut failures = Vec::new();
    let mut seed = 0u64;
    for p in 5..=8 {
        for k0 in 1..=2 {
            for case in [Case::Case1, Case::Case2] {
                if case == Case::Case1 && k0 == 1 {
                    continue;
                }
                seed += 1;
                let draw =
                    simulation::draw_stable_model::<f64>(case, p, k0, seed, DEFAULT_ETA_RANGE).unwrap();
                let model = &draw.model;
                let pop = MomentSet::population(model, 3).unwrap();
                // the reduced estimator screens on data, then fits on population moments
                let y = simulation::simulate(model, 2000, DEFAULT_BURN_IN, seed).unwrap();
                let identified = identified_rows(&pop, k0);
                for i in 0..p {
                    let beta = model.pack_beta(i).unwrap();
                    let mut estimators: Vec<(String, Method)> = vec![
                        ("full".into(), Method::FullYw),
                        ("multi:2".into(), Method::MultiYw(2)),
                        ("multi:3".into(), Method::MultiYw(3)),
                    ];
                    let tau = BandSupport::new(p, k0, i).unwrap().tau();
                    if tau < p {
                        estimators.push(("reduced".into(), Method::ReducedYw(p - 1)));
                    }
                    for (name, method) in &estimators {
                        let lags = method.lags();
                        let equations = match method {
                            Method::ReducedYw(d) => *d,
                            _ => lags * p,
                        };
                        for k in 0..p {
                            if BandSupport::new(p, k, i).unwrap().tau() > equations {
                                break;
                            }
                            let fit = estimation::fit_row(&pop, Some(y.data()), i, k, *method).unwrap();
                            if k >= k0 {
                                rss_checks += 1;
                                worst_rss = worst_rss.max(fit.rss);
                                if fit.rss > 1e-16 {
                                    failures.push(format!(
                                        "{name} p={p} k0={k0} row={i} k={k}: rss {:.2e}",
                                        fit.rss
                                    ));
                                }
                            } else if identified.contains(&i) {
                                // zero means <= 1e-16 on both sides of k0
                                rss_checks += 1;
                                min_under = min_under.min(fit.rss);
                                if fit.rss.partial_cmp(&1e-16) != Some(std::cmp::Ordering::Greater) {
                                    failures.push(format!(
                                        "{name} p={p} k0={k0} row={i} k={k}: rss {:.2e} below k0",
                                        fit.rss
                                    ));
                                }
                            } else {
                                // a smaller band is observationally equivalent on unidentified rows
                                exempt += 1;
                                exempt_zero += usize::from(fit.rss <= 1e-16);
                            }
                            if k == k0 {
                                if identified.contains(&i) && fit.rank_ok {
                                    let err = max_abs_diff(&fit.beta, &beta);
                                    worst_beta = worst_beta.max(err);
                                    checked += 1;
                                    if err > 1e-8 {
                                        failures.push(format!(
                                            "{name} p={p} k0={k0} row={i}: beta error {err:.2e}"
                                        ));
                                    }
                                } else {
                                    skipped += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty();
    let mut detail = format!(
        "beta checked on {checked} identified row fits (max err {worst_beta:.1e}), {skipped} rank-deficient skipped; \
         {rss_checks} RSS checks (max RSS at k>=k0 {worst_rss:.1e}, min below k0 on identified rows {min_under:.1e}); \
         below-k0 fits on unidentified rows not checked: {exempt} ({exempt_zero} fit exactly); {secs:.2}s"
    );
    if let Some(f) = failures.first() {
        detail.push_str(&format!("; first failure: {f} ({} total)", failures.len()));
    }
    // the runtime bound is reported but timing a debug build is not a correctness check
    if secs >= 1.0 {
        detail.push_str(" [runtime above 1 s]");
    }
    outcome(pass, detail)
}

fn one_lag_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut rows = 0;
    for _ in 0..100 {
        let p = rng.random_range(4..=12);
        let n = rng.random_range(30..=200);
        let y = random_data(&mut rng, p, n);
        let m = MomentSet::from_data(&y, 1).unwrap();
        for i in 0..p {
            for k in 0..p {
                if BandSupport::new(p, k, i).unwrap().tau() > p {
                    break;
                }
                let a = estimation::fit_row_full(&m, i, k).unwrap();
                let b = estimation::fit_row_multi(&m, i, k, 1).unwrap();
                worst = worst
                    .max(max_abs_diff(&a.beta, &b.beta))
                    .max((a.rss - b.rss).abs());
                rows += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-14 && secs < 10.0,
        format!("100 datasets, {rows} row fits, max diff {worst:.1e}, {secs:.2}s"),
    )
}

fn table2_spec() -> ExperimentSpec {
    ExperimentSpec {
        case: Case::Case2,
        grid: vec![(100, 2000)],
        k0: 3,
        max_k: Some(10),
        replications: 100,
        base_seed: 2024,
        ..Default::default()
    }
}

fn bandwidth_and_errors() -> (Outcome, Outcome) {
    let start = Instant::now();
    let cell = montecarlo::run_experiment(&table2_spec()).unwrap().remove(0);
    let secs = start.elapsed().as_secs_f64();
    let freq = outcome(
        cell.freq_eq >= 0.90 && cell.freq_lt <= 0.01,
        format!(
            "freq(k=k0) {:.3}, freq(k<k0) {:.3}, freq(k>k0) {:.3} over {} reps ({} failed), {secs:.1}s",
            cell.freq_eq, cell.freq_lt, cell.freq_gt, cell.replications, cell.failed
        ),
    );
    let v = cell.variant("r=1").unwrap();
    let errs = outcome(
        (0.45..=0.85).contains(&v.err_a_mean) && (0.12..=0.26).contains(&v.err_b_mean),
        format!(
            "mean ||A-Ahat|| {:.3} ({:.3}), mean ||B-Bhat|| {:.3} ({:.3}), SNR {:.3}",
            v.err_a_mean, v.err_a_sd, v.err_b_mean, v.err_b_sd, cell.snr_mean
        ),
    );
    (freq, errs)
}

fn r_monotonicity() -> Outcome {
    let spec = ExperimentSpec {
        case: Case::Case1,
        grid: vec![(100, 2000)],
        k0: 3,
        r_list: vec![1, 2, 3],
        replications: 100,
        base_seed: 7,
        ..Default::default()
    };
    let cell = montecarlo::run_experiment(&spec).unwrap().remove(0);
    let b: Vec<f64> = ["r=1", "r=2", "r=3"]
        .iter()
        .map(|l| cell.variant(l).unwrap().err_b_mean)
        .collect();
    outcome(
        b[0] < b[1] && b[1] < b[2],
        format!(
            "mean ||B-Bhat||: r=1 {:.3}, r=2 {:.3}, r=3 {:.3} over {} reps",
            b[0], b[1], b[2], cell.replications
        ),
    )
}

fn reduced_vs_full() -> Outcome {
    let spec = ExperimentSpec {
        case: Case::Case2,
        grid: vec![(100, 2500)],
        k0: 1,
        d_rule: DRule::PaperRule,
        replications: 100,
        base_seed: 11,
        ..Default::default()
    };
    let cell = montecarlo::run_experiment(&spec).unwrap().remove(0);
    let (one, two) = (cell.variant("I").unwrap(), cell.variant("II").unwrap());
    let ordered = two.err_a_mean >= one.err_a_mean && two.err_b_mean >= one.err_b_mean;

    // d = p: the screened system keeps every equation
    let equal_spec = ExperimentSpec {
        grid: vec![(50, 10000)],
        replications: 5,
        ..spec
    };
    let eq = montecarlo::run_experiment(&equal_spec).unwrap().remove(0);
    let (e1, e2) = (eq.variant("I").unwrap(), eq.variant("II").unwrap());
    let gap = (e1.err_a_mean - e2.err_a_mean)
        .abs()
        .max((e1.err_b_mean - e2.err_b_mean).abs());
    outcome(
        ordered && gap <= 1e-12,
        format!(
            "p=100 n=2500 d={}: A I {:.3} / II {:.3}, B I {:.3} / II {:.3}; p=50 n=10000 d=p gap {gap:.1e}",
            estimation::default_equation_count(100, 2500),
            one.err_a_mean,
            two.err_a_mean,
            one.err_b_mean,
            two.err_b_mean
        ),
    )
}

/// A `p = 4`, `k0 = 1` model with `||A||_2 = 0.5`.
fn small_design() -> BandedModel<f64> {
    let p = 4;
    let a = DMatrix::from_fn(p, p, |i, j| match j as i64 - i as i64 {
        1 => 0.4,
        -1 => 0.3,
        _ => 0.0,
    });
    let a = &a * (0.5 / linalg::operator_norm(&a));
    let b = DMatrix::from_fn(p, p, |i, j| match j as i64 - i as i64 {
        0 => 0.25,
        1 | -1 => 0.1,
        _ => 0.0,
    });
    let model = BandedModel::with_unit_noise(1, a, b).unwrap();
    assert!(model.check_stability().unwrap().stable);
    model
}

fn sqrt_n_rate() -> Outcome {
    let model = small_design();
    let pop = MomentSet::population(&model, 1).unwrap();
    let rows = identified_rows(&pop, 1);
    let sizes = [500usize, 2000, 8000];
    let reps = 200u64;
    let rmse: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let mut ss = 0.0;
            for rep in 0..reps {
                let y = simulation::simulate(&model, n, DEFAULT_BURN_IN, 1000 * n as u64 + rep).unwrap();
                let m = MomentSet::from_data(y.data(), 1).unwrap();
                for &i in &rows {
                    let fit = estimation::fit_row_full(&m, i, 1).unwrap();
                    ss += (&fit.beta - model.pack_beta(i).unwrap()).norm_squared();
                }
            }
            (ss / reps as f64).sqrt()
        })
        .collect();
    let ratios = [rmse[0] / rmse[1], rmse[1] / rmse[2]];
    let pass = ratios.iter().all(|r| (2.0 / 1.5..=2.0 * 1.5).contains(r));
    outcome(
        pass,
        format!(
            "rows {:?}: RMSE {:.4} / {:.4} / {:.4}, ratios {:.2}, {:.2}",
            rows.iter().map(|i| i + 1).collect::<Vec<_>>(),
            rmse[0],
            rmse[1],
            rmse[2],
            ratios[0],
            ratios[1]
        ),
    )
}

/// Ordinary least squares of `y_{i,t}` on `y_{S,t}` and `y_{S+,t-1}`.
fn naive_ls(y: &PanelSeries<f64>, support: &BandSupport) -> DVector<f64> {
    let data = y.data();
    let n = data.ncols();
    let s = support.spatial.len();
    let x = DMatrix::from_fn(n - 1, support.tau(), |t, c| {
        if c < s {
            data[(support.spatial[c], t + 1)]
        } else {
            data[(support.dynamic[c - s], t)]
        }
    });
    let z = DVector::from_fn(n - 1, |t, _| data[(support.row, t + 1)]);
    linalg::least_squares(&x, &z).unwrap().coef
}

fn endogeneity() -> Outcome {
    let model = small_design();
    let pop = MomentSet::population(&model, 1).unwrap();
    let rows = identified_rows(&pop, 1);
    let (n, reps) = (8000usize, 200u64);
    let mut naive_sum: Vec<DVector<f64>> = rows
        .iter()
        .map(|&i| DVector::zeros(model.support(i).unwrap().tau()))
        .collect();
    let mut yw_sum = naive_sum.clone();
    for rep in 0..reps {
        let y = simulation::simulate(&model, n, DEFAULT_BURN_IN, 77 + rep).unwrap();
        let m = MomentSet::from_data(y.data(), 1).unwrap();
        for (slot, &i) in rows.iter().enumerate() {
            naive_sum[slot] += naive_ls(&y, &model.support(i).unwrap());
            yw_sum[slot] += estimation::fit_row_full(&m, i, 1).unwrap().beta;
        }
    }
    let bias = |sums: &[DVector<f64>]| -> f64 {
        rows.iter()
            .zip(sums)
            .map(|(&i, s)| (s / reps as f64 - model.pack_beta(i).unwrap()).norm_squared())
            .sum::<f64>()
            .sqrt()
    };
    let (naive, yw) = (bias(&naive_sum), bias(&yw_sum));
    outcome(
        naive > 5.0 * yw,
        format!(
            "||A||_2 = {:.2}, n = {n}, {reps} reps: naive bias {naive:.4}, Yule-Walker bias {yw:.4}, ratio {:.1}",
            linalg::operator_norm(model.a()),
            naive / yw
        ),
    )
}

fn invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut notes = Vec::new();

    // RSS is non-increasing along nested supports
    let mut nest_ok = true;
    for _ in 0..100 {
        let p = rng.random_range(5..=12);
        let n = rng.random_range(20..120);
        let y = random_data(&mut rng, p, n);
        let m = MomentSet::from_data(&y, 1).unwrap();
        let i = rng.random_range(0..p);
        let mut k_max = 0;
        while k_max + 1 < p && BandSupport::new(p, k_max + 1, i).unwrap().tau() <= p {
            k_max += 1;
        }
        let rss = bandwidth::rss_profile(&m, i, k_max, 1).unwrap();
        nest_ok &= rss.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
    }
    notes.push(format!("nesting {}", if nest_ok { "ok" } else { "violated" }));

    // frequencies sum to one
    let mut freq_ok = true;
    for seed in 0..10 {
        let spec = ExperimentSpec {
            grid: vec![(14, 200)],
            k0: rng.random_range(1..=2),
            max_k: Some(3),
            replications: 5,
            base_seed: seed,
            ..Default::default()
        };
        for cell in montecarlo::run_experiment(&spec).unwrap() {
            freq_ok &= (cell.freq_eq + cell.freq_gt + cell.freq_lt - 1.0).abs() < 1e-12;
        }
    }
    notes.push(format!("frequencies {}", if freq_ok { "ok" } else { "violated" }));

    // h1 + h2 step forecast equals h2 steps from the h1 step forecast
    let mut semi = 0.0f64;
    for _ in 0..100 {
        let p = rng.random_range(2..=8);
        let d = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.4..0.4));
        let y0 = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
        let (h1, h2) = (rng.random_range(1..6), rng.random_range(1..6));
        let direct = forecasting::iterate_forecast(&d, &y0, h1 + h2);
        let split = forecasting::iterate_forecast(&d, &forecasting::iterate_forecast(&d, &y0, h1), h2);
        semi = semi.max((direct - split).amax());
    }
    notes.push(format!("semigroup max diff {semi:.1e}"));

    // stacked regressor matrix: moment blocks vs explicit sum of outer products
    let mut g_gap = 0.0f64;
    for _ in 0..50 {
        let p = rng.random_range(2..=7);
        let n = rng.random_range(10..60);
        let r = rng.random_range(1..=3);
        let y = random_data(&mut rng, p, n);
        let g = moments::build_g_hat(&y, r).unwrap();
        let mut explicit = DMatrix::zeros(r * p, 2 * p);
        for j in 1..=r {
            for t in j..n {
                let past = y.column(t - j);
                let mut pair = DVector::zeros(2 * p);
                pair.rows_mut(0, p).copy_from(&y.column(t));
                pair.rows_mut(p, p).copy_from(&y.column(t - 1));
                explicit
                    .view_mut(((j - 1) * p, 0), (p, 2 * p))
                    .ger(1.0 / n as f64, &past, &pair, 1.0);
            }
        }
        g_gap = g_gap.max((g - explicit).amax());
    }
    notes.push(format!("G dual construction max diff {g_gap:.1e}"));

    outcome(
        nest_ok && freq_ok && semi <= 1e-12 && g_gap <= 1e-12,
        notes.join(", "),
    )
}

fn ordering_beats_shuffle() -> Outcome {
    let reps = 100u64;
    let (p, n, window) = (20usize, 400usize, 300usize);
    let mut cfg = CvConfig::new(window, vec![1]);
    cfg.selection = SelectionConfig::with_max_k(3);
    let mut wins = 0;
    for rep in 0..reps {
        let draw =
            simulation::draw_stable_model::<f64>(Case::Case2, p, 1, 500 + rep, DEFAULT_ETA_RANGE).unwrap();
        let y = simulation::simulate(&draw.model, n, DEFAULT_BURN_IN, 900 + rep).unwrap();
        let mut perm: Vec<usize> = (0..p).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(rep));
        let shuffled = y.permuted(&perm).unwrap();
        let keep = forecasting::moving_window_cv(&y, &cfg, "identity").unwrap();
        let mix = forecasting::moving_window_cv(&shuffled, &cfg, "shuffle").unwrap();
        if keep.horizon(1).unwrap().mspe < mix.horizon(1).unwrap().mspe {
            wins += 1;
        }
    }
    outcome(
        wins * 100 >= 90 * reps,
        format!("identity ordering has lower 1-step MSPE in {wins}/{reps} replications"),
    )
}

type Criterion = (&'static str, fn() -> Vec<Outcome>);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("1 oracle exactness", || vec![oracle_exactness()]),
        ("2 r=1 equivalence", || vec![one_lag_equivalence()]),
        ("3-4 bandwidth recovery, error magnitudes", || {
            let (freq, errs) = bandwidth_and_errors();
            vec![freq, errs]
        }),
        ("5 r-monotonicity of B error", || vec![r_monotonicity()]),
        ("6 estimator I vs II", || vec![reduced_vs_full()]),
        ("7 root-n rate", || vec![sqrt_n_rate()]),
        ("8 endogeneity", || vec![endogeneity()]),
        ("9 invariant suites", || vec![invariants()]),
        ("10 ordering vs shuffle", || vec![ordering_beats_shuffle()]),
    ];
    // ACCEPTANCE_ONLY=1,7 runs a subset, matched on the leading number
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let (mut passed, mut total) = (0, 0);
    for (name, run) in criteria {
        let number = name.split([' ', '-']).next().unwrap_or_default();
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == number)) {
            continue;
        }
        let start = Instant::now();
        let outcomes = run();
        let secs = start.elapsed().as_secs_f64();
        let names: Vec<String> = if outcomes.len() == 2 {
            vec!["3 bandwidth recovery".into(), "4 error magnitudes".into()]
        } else {
            vec![name.to_string()]
        };
        for (label, o) in names.iter().zip(&outcomes) {
            let tag = if o.pass { "PASS" } else { "FAIL" };
            println!("{tag} criterion {label}: {} [{secs:.1}s]", o.detail);
            total += 1;
            passed += usize::from(o.pass);
        }
    }
    println!("{passed} of {total} criteria passed");
    if passed == total {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
