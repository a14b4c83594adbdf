//! `bstar` command-line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bstar::bandwidth::{self, Aggregation, SelectionConfig};
use bstar::estimation::{self, Method};
use bstar::forecasting::{self, CvConfig, Ordering, WindowMode};
use bstar::io::{self, FitFile, IngestOptions, OrderingRule, OrderingSource, PanelCsv, Transform};
use bstar::montecarlo::{self, DRule, ExperimentSpec, TableFormat};
use bstar::simulation::{self, Case, SimConfig};
use bstar::{Error, MomentSet};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

#[derive(Parser, Debug)]
#[command(name = "bstar", version, about = "Banded spatio-temporal autoregressions")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a panel from one of the two coefficient designs.
    Simulate(SimulateArgs),
    /// Select the bandwidth of a panel.
    Bandwidth(BandwidthArgs),
    /// Fit banded coefficient matrices.
    Fit(FitArgs),
    /// Forecast from a fitted model and the end of a panel.
    Forecast(ForecastArgs),
    /// Rank row orderings by moving-window cross-validation.
    Cv(CvArgs),
    /// Run a Monte Carlo experiment.
    Replicate(ReplicateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// key=value file with p, k0, n, case, burn_in, seed, eta_range.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// 1 or 2.
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV (default: stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write the true coefficients as a fit file.
    #[arg(long)]
    coef_out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TransformArg {
    None,
    Log,
}

impl From<TransformArg> for Transform {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::None => Transform::None,
            TransformArg::Log => Transform::Log,
        }
    }
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Panel CSV: a header of location labels, one row per time point.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    transform: TransformArg,
    /// Do not subtract row means.
    #[arg(long)]
    no_center: bool,
    /// 1-based permutation of the columns.
    #[arg(long, conflicts_with = "coords_file")]
    ordering_file: Option<PathBuf>,
    /// Location coordinates used with --ordering-rule.
    #[arg(long, requires = "ordering_rule")]
    coords_file: Option<PathBuf>,
    /// ns, we, nw-se, ne-sw or anchor:X:Y.
    #[arg(long)]
    ordering_rule: Option<String>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Largest candidate bandwidth.
    #[arg(long = "K")]
    max_k: Option<usize>,
    /// Constant in w_n = C/n.
    #[arg(long = "C", default_value_t = 1.0)]
    c: f64,
    #[arg(long, value_enum, default_value = "max")]
    aggregation: AggregationArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AggregationArg {
    Max,
    Median,
}

impl SelectArgs {
    fn config(&self, lags: usize) -> SelectionConfig {
        SelectionConfig {
            max_k: self.max_k,
            c: self.c,
            w_n: None,
            aggregation: match self.aggregation {
                AggregationArg::Max => Aggregation::Max,
                AggregationArg::Median => Aggregation::Median,
            },
            lags,
        }
    }
}

#[derive(Args, Debug)]
struct BandwidthArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    select: SelectArgs,
    /// Yule-Walker lags used for the RSS profile.
    #[arg(long, default_value_t = 1)]
    r: usize,
    /// Write the per-row profile (i,k,rss,ratio) here.
    #[arg(long)]
    profile_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MethodArgs {
    /// Stacked Yule-Walker lags.
    #[arg(long, default_value_t = 1)]
    r: usize,
    /// Equation rule: `full` uses every equation, `screened` keeps
    /// min(p, floor(n^0.495)) screened equations.
    #[arg(long, value_parser = parse_d_rule, conflicts_with = "d")]
    d_rule: Option<DRule>,
    /// Explicit number of screened equations.
    #[arg(long)]
    d: Option<usize>,
}

impl MethodArgs {
    fn method(&self, p: usize, n: usize) -> Result<Method, Error> {
        let reduced = match (self.d, self.d_rule) {
            (Some(d), _) => Some(d),
            (None, Some(DRule::PaperRule)) => Some(estimation::default_equation_count(p, n)),
            _ => None,
        };
        match (reduced, self.r) {
            (_, 0) => Err(Error::Domain("--r must be at least 1".into())),
            (Some(_), r) if r > 1 => Err(Error::Domain("screened equations combine only with r = 1".into())),
            (Some(d), _) => Ok(Method::ReducedYw(d)),
            (None, 1) => Ok(Method::FullYw),
            (None, r) => Ok(Method::MultiYw(r)),
        }
    }
}

fn parse_d_rule(s: &str) -> Result<DRule, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Bandwidth; selected from the data when omitted.
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    select: SelectArgs,
    /// Output fit file (default: stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    /// Fit file written by `bstar fit`.
    #[arg(long)]
    fit: PathBuf,
    /// Panel CSV whose last row is the forecast origin.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    horizons: Vec<usize>,
    /// Report on the centered, transformed scale instead of the input scale.
    #[arg(long)]
    model_scale: bool,
    /// Ascending level breaks; adds a level column per forecast.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    thresholds: Vec<f64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    transform: TransformArg,
    /// Training window length.
    #[arg(long)]
    window: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    horizons: Vec<usize>,
    /// Grow the window from the start instead of sliding it.
    #[arg(long)]
    expanding: bool,
    /// Permutation files, each a candidate ordering.
    #[arg(long)]
    ordering_file: Vec<PathBuf>,
    /// Coordinates for rule-based orderings.
    #[arg(long, requires = "rules")]
    coords_file: Option<PathBuf>,
    /// Comma-separated rules: ns, we, nw-se, ne-sw, anchor:X:Y.
    #[arg(long, value_delimiter = ',')]
    rules: Vec<String>,
    /// Leave out the input column order.
    #[arg(long)]
    no_identity: bool,
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    select: SelectArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Level breaks on the input scale; writes a hit-rate table.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    thresholds: Vec<f64>,
    /// Where the level table goes (default: after the report).
    #[arg(long)]
    levels_out: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Csv,
    Text,
}

#[derive(Args, Debug)]
struct ReplicateArgs {
    /// key=value experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<String>,
    /// Cells as PxN, comma-separated.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long = "K")]
    max_k: Option<usize>,
    #[arg(long = "C")]
    c: Option<f64>,
    /// Lag counts to compare, comma-separated.
    #[arg(long, value_delimiter = ',')]
    r: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_d_rule)]
    d_rule: Option<DRule>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    redraw_coefficients: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Means of the rows of `data` listed in `perm`.
fn row_means(data: &DMatrix<f64>, perm: &[usize]) -> Vec<f64> {
    let n = data.ncols() as f64;
    perm.iter().map(|&r| data.row(r).sum() / n).collect()
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn ingest_options(input: &InputArgs, labels_hint: Option<&[String]>) -> Result<IngestOptions, Error> {
    let ordering = match (&input.ordering_file, &input.coords_file) {
        (Some(path), _) => {
            let p = labels_hint.map_or(0, <[String]>::len);
            OrderingSource::Permutation(io::parse_permutation(&io::read_text(path)?, p)?)
        }
        (None, Some(path)) => {
            let rule: OrderingRule = input
                .ordering_rule
                .as_deref()
                .ok_or_else(|| Error::Domain("--coords-file needs --ordering-rule".into()))?
                .parse()?;
            OrderingSource::Coordinates(io::parse_coordinates(&io::read_text(path)?)?, rule)
        }
        (None, None) => OrderingSource::Identity,
    };
    Ok(IngestOptions {
        transform: input.transform.into(),
        center: !input.no_center,
        ordering,
    })
}

fn load(input: &InputArgs) -> Result<io::Ingested, Error> {
    let panel = io::read_panel_csv(&input.data)?;
    let opts = ingest_options(input, Some(&panel.labels))?;
    io::prepare(panel, &opts)
}

fn run_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let mut cfg = SimConfig::new(50, 2, 2000, Case::Case2, 1);
    if let Some(path) = &args.config {
        cfg = io::sim_config_from_kv(&io::parse_key_values(&io::read_text(path)?)?, cfg)?;
    }
    if let Some(v) = args.p {
        cfg.p = v;
    }
    if let Some(v) = args.k0 {
        cfg.k0 = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = &args.case {
        cfg.case = v.parse()?;
    }
    if let Some(v) = args.burn_in {
        cfg.burn_in = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let draw = simulation::draw_stable_model::<f64>(cfg.case, cfg.p, cfg.k0, cfg.seed, cfg.eta_range)?;
    log::info!(
        "stable draw after {} attempt(s), eta = ({:.3}, {:.3})",
        draw.attempts,
        draw.eta.0,
        draw.eta.1
    );
    let y = simulation::simulate(&draw.model, cfg.n, cfg.burn_in, cfg.seed)?;
    let panel = PanelCsv {
        labels: io::default_labels(cfg.p),
        timestamps: None,
        data: y.into_data(),
    };
    if let Some(path) = &args.coef_out {
        let truth = estimation::FitResult {
            a_hat: draw.model.a().clone(),
            b_hat: draw.model.b().clone(),
            k: cfg.k0,
            method: Method::FullYw,
            rows: Vec::new(),
            n: None,
        };
        let file = FitFile {
            fit: truth,
            n: None,
            transform: Transform::None,
            row_means: vec![0.0; cfg.p],
            ordering: (0..cfg.p).collect(),
            labels: io::default_labels(cfg.p),
        };
        fs::write(path, io::format_fit_file(&file))?;
    }
    write_output(args.out.as_deref(), &io::format_panel_csv(&panel))
}

fn run_bandwidth(args: &BandwidthArgs) -> Result<(), Error> {
    let ing = load(&args.input)?;
    let sel = bandwidth::select_bandwidth(&ing.series, &args.select.config(args.r))?;
    if let Some(path) = &args.profile_out {
        fs::write(path, io::format_profiles(&sel))?;
    }
    println!("k_hat={}", sel.k_hat);
    println!("K={}", sel.max_k);
    println!("w_n={}", sel.w_n);
    Ok(())
}

fn run_fit(args: &FitArgs) -> Result<(), Error> {
    let ing = load(&args.input)?;
    let (p, n) = (ing.series.p(), ing.series.n());
    let method = args.method.method(p, n)?;
    let moments = MomentSet::from_data(ing.series.data(), method.lags())?;
    let k = match args.k {
        Some(k) => k,
        None => {
            // the ratio criterion always runs on the lag-one equations
            let sel = bandwidth::select_with_moments(&moments, &args.select.config(1))?;
            log::info!("selected k = {} (K = {})", sel.k_hat, sel.max_k);
            sel.k_hat
        }
    };
    let fit = estimation::fit_rows(&moments, Some(ing.series.data()), k, method)?;
    if !fit.rank_ok() {
        let rows: Vec<String> = fit
            .rows
            .iter()
            .filter(|r| !r.rank_ok)
            .map(|r| (r.row + 1).to_string())
            .collect();
        log::warn!(
            "rank-deficient design in rows {}; minimum-norm solutions used",
            rows.join(" ")
        );
    }
    let file = FitFile {
        fit,
        n: Some(n),
        transform: ing.transform,
        row_means: ing.series.row_means().to_vec(),
        ordering: ing.series.ordering().to_vec(),
        labels: ing.labels.clone(),
    };
    write_output(args.out.as_deref(), &io::format_fit_file(&file))
}

fn run_forecast(args: &ForecastArgs) -> Result<(), Error> {
    let file = io::parse_fit_file(&io::read_text(&args.fit)?)?;
    let panel = io::read_panel_csv(&args.data)?;
    let p = file.fit.p();
    if panel.labels.len() != p {
        return Err(Error::Domain(format!(
            "data has {} columns but the model has p = {p}",
            panel.labels.len()
        )));
    }
    if args.horizons.is_empty() || args.horizons.contains(&0) {
        return Err(Error::Domain("horizons must be positive".into()));
    }
    if args
        .thresholds
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::Domain("thresholds must be strictly ascending".into()));
    }
    let last = panel.data.ncols() - 1;
    let y_last = (0..p)
        .map(|r| {
            file.transform
                .apply(panel.data[(file.ordering[r], last)])
                .map(|v| v - file.row_means[r])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let y_last = DVector::from_vec(y_last);
    let d = file.fit.reduced_form()?;

    let mut header = vec!["h".to_string()];
    header.extend(panel.labels.iter().cloned());
    let mut out = header.join(",") + "\n";
    let mut level_rows = Vec::new();
    for &h in &args.horizons {
        let pred = forecasting::iterate_forecast(&d, &y_last, h);
        let mut values = vec![0.0; p];
        for r in 0..p {
            let v = if args.model_scale {
                pred[r]
            } else {
                file.transform.invert(pred[r] + file.row_means[r])
            };
            values[file.ordering[r]] = v;
        }
        let cells: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{h},{}\n", cells.join(",")));
        if !args.thresholds.is_empty() {
            let levels: Vec<String> = values
                .iter()
                .map(|v| (forecasting::level_of(*v, &args.thresholds) + 1).to_string())
                .collect();
            level_rows.push(format!("level_h{h},{}\n", levels.join(",")));
        }
    }
    for row in level_rows {
        out.push_str(&row);
    }
    write_output(args.out.as_deref(), &out)
}

fn run_cv(args: &CvArgs) -> Result<(), Error> {
    let panel = io::read_panel_csv(&args.data)?;
    let transform: Transform = args.transform.into();
    let mut raw = panel.data.clone();
    for v in raw.iter_mut() {
        *v = transform.apply(*v)?;
    }
    let p = raw.nrows();
    let mut orderings = Vec::new();
    if !args.no_identity {
        orderings.push(Ordering {
            label: "input".into(),
            perm: (0..p).collect(),
        });
    }
    for path in &args.ordering_file {
        let label = path.file_stem().map_or_else(
            || path.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        orderings.push(Ordering {
            label,
            perm: io::parse_permutation(&io::read_text(path)?, p)?,
        });
    }
    if let Some(path) = &args.coords_file {
        let coords = io::parse_coordinates(&io::read_text(path)?)?;
        for rule in &args.rules {
            let rule: OrderingRule = rule.parse()?;
            orderings.push(Ordering {
                label: rule.to_string(),
                perm: io::ordering_from_coordinates(&coords, &panel.labels, rule)?,
            });
        }
    }
    if orderings.is_empty() {
        return Err(Error::Domain("no orderings to compare".into()));
    }
    let method = args.method.method(p, args.window)?;
    let cfg = CvConfig {
        window: args.window,
        horizons: args.horizons.clone(),
        method,
        k: args.k,
        selection: args.select.config(1),
        mode: if args.expanding {
            WindowMode::Expanding
        } else {
            WindowMode::Sliding
        },
    };
    let reports = forecasting::select_ordering(&raw, &orderings, &cfg)?;
    let mut text = io::format_cv_reports(&reports);
    if !args.thresholds.is_empty() {
        let mut levels = String::new();
        for report in &reports {
            let ord = orderings
                .iter()
                .find(|o| o.label == report.label)
                .expect("report labels come from the orderings");
            let means = row_means(&raw, &ord.perm);
            let per_h = io::cv_level_accuracy(report, &means, transform, &args.thresholds)?;
            levels.push_str(&format!("# {}\n", report.label));
            levels.push_str(&io::format_level_table(&args.thresholds, &per_h));
        }
        match &args.levels_out {
            Some(path) => fs::write(path, levels)?,
            None => {
                text.push('\n');
                text.push_str(&levels);
            }
        }
    }
    write_output(args.out.as_deref(), &text)
}

fn run_replicate(args: &ReplicateArgs) -> Result<(), Error> {
    let mut spec = ExperimentSpec::default();
    if let Some(path) = &args.config {
        spec = io::experiment_spec_from_kv(&io::parse_key_values(&io::read_text(path)?)?, spec)?;
    }
    let mut overrides = std::collections::BTreeMap::new();
    if let Some(v) = &args.case {
        overrides.insert("case".to_string(), v.clone());
    }
    if let Some(v) = &args.grid {
        overrides.insert("grid".to_string(), v.clone());
    }
    spec = io::experiment_spec_from_kv(&overrides, spec)?;
    if let Some(v) = args.k0 {
        spec.k0 = v;
    }
    if let Some(v) = args.max_k {
        spec.max_k = Some(v);
    }
    if let Some(v) = args.c {
        spec.c = v;
    }
    if let Some(v) = &args.r {
        spec.r_list = v.clone();
    }
    if let Some(v) = args.d_rule {
        spec.d_rule = v;
    }
    if let Some(v) = args.replications {
        spec.replications = v;
    }
    if let Some(v) = args.seed {
        spec.base_seed = v;
    }
    if args.redraw_coefficients {
        spec.redraw_coefficients = true;
    }
    let summaries = montecarlo::run_experiment(&spec)?;
    for s in &summaries {
        if s.unstable_redraws > 0 {
            log::info!(
                "cell p={} n={}: {} unstable draws rejected",
                s.p,
                s.n,
                s.unstable_redraws
            );
        }
    }
    let format = match args.format {
        FormatArg::Csv => TableFormat::Csv,
        FormatArg::Text => TableFormat::Text,
    };
    write_output(args.out.as_deref(), &montecarlo::emit_table(&summaries, format))
}

fn error_class(e: &Error) -> &'static str {
    match e {
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
        e if e.is_numerical() => "numerical",
        _ => "domain",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            eprint!("error[usage]: {}", msg.strip_prefix("error: ").unwrap_or(&msg));
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error[usage]: cannot configure {threads} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Bandwidth(a) => run_bandwidth(a),
        Command::Fit(a) => run_fit(a),
        Command::Forecast(a) => run_forecast(a),
        Command::Cv(a) => run_cv(a),
        Command::Replicate(a) => run_replicate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = error_class(&e);
            eprintln!("error[{class}]: {e}");
            ExitCode::from(if class == "numerical" { 2 } else { 1 })
        }
    }
}
