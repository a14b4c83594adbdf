//! Text formats: panel CSV, fitted-model files, diagnostic dumps, orderings
//! and `key=value` configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::bandwidth::BandwidthSelection;
use crate::error::{Error, Result};
use crate::estimation::{FitResult, Method};
use crate::forecasting::{level_accuracy, CvReport, LevelHit};
use crate::model::{validate_permutation, PanelSeries};
use crate::montecarlo::{DRule, ExperimentSpec};
use crate::simulation::{Case, SimConfig};

/// Pointwise transform applied before centering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transform {
    #[default]
    None,
    Log,
}

impl Transform {
    pub fn apply(self, v: f64) -> Result<f64> {
        match self {
            Transform::None => Ok(v),
            Transform::Log if v > 0.0 => Ok(v.ln()),
            Transform::Log => Err(Error::domain(format!(
                "log transform needs positive values, found {v}"
            ))),
        }
    }

    pub fn invert(self, v: f64) -> f64 {
        match self {
            Transform::None => v,
            Transform::Log => v.exp(),
        }
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "" => Ok(Transform::None),
            "log" | "ln" => Ok(Transform::Log),
            other => Err(Error::domain(format!("unknown transform {other:?}"))),
        }
    }
}

impl std::fmt::Display for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Transform::None => "none",
            Transform::Log => "log",
        })
    }
}

/// A panel as stored on disk: one column per location, one row per time point.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelCsv {
    pub labels: Vec<String>,
    /// First-column time stamps, when the file has them.
    pub timestamps: Option<Vec<String>>,
    /// `p x n`, locations along the rows.
    pub data: DMatrix<f64>,
}

const TIME_HEADERS: [&str; 5] = ["timestamp", "time", "date", "datetime", "t"];

fn split_line(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(line, 1, e.to_string())
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Parses a panel CSV. A first column headed `timestamp`, `time`, `date`,
/// `datetime` or `t` is kept as labels and not parsed as data.
pub fn parse_panel_csv(text: &str) -> Result<PanelCsv> {
    let mut rdr = csv_reader(text);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let mut labels: Vec<String> = header.iter().map(String::from).collect();
    if labels.is_empty() || labels.iter().all(|l| l.is_empty()) {
        return Err(parse_err(1, 1, "empty file"));
    }
    let has_time = TIME_HEADERS.contains(&labels[0].to_ascii_lowercase().as_str());
    if has_time {
        labels.remove(0);
    }
    let p = labels.len();
    if p == 0 {
        return Err(parse_err(1, 1, "no data columns"));
    }
    let offset = usize::from(has_time);
    let mut stamps = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line_no = record_line(&rec);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != p + offset {
            return Err(parse_err(
                line_no,
                rec.len().min(p + offset) + 1,
                format!("expected {} fields, found {}", p + offset, rec.len()),
            ));
        }
        if has_time {
            stamps.push(rec[0].to_string());
        }
        let mut row = Vec::with_capacity(p);
        for (j, cell) in rec.iter().skip(offset).enumerate() {
            let col = j + offset + 1;
            if cell.is_empty() {
                return Err(parse_err(line_no, col, "missing value"));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line_no, col, format!("non-numeric value {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, col, format!("non-finite value {cell:?}")));
            }
            row.push(v);
        }
        columns.push(row);
    }
    if columns.is_empty() {
        return Err(parse_err(2, 1, "no observations"));
    }
    let data = DMatrix::from_fn(p, columns.len(), |i, t| columns[t][i]);
    Ok(PanelCsv {
        labels,
        timestamps: has_time.then_some(stamps),
        data,
    })
}

/// Reads a whole file, naming it in the error.
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn read_panel_csv(path: &Path) -> Result<PanelCsv> {
    parse_panel_csv(&read_text(path)?)
}

/// Writes a panel with shortest round-trip float formatting.
pub fn format_panel_csv(panel: &PanelCsv) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = Vec::with_capacity(panel.labels.len() + 1);
    if panel.timestamps.is_some() {
        header.push("timestamp");
    }
    header.extend(panel.labels.iter().map(String::as_str));
    // writing to a Vec cannot fail
    w.write_record(&header).expect("in-memory write");
    for t in 0..panel.data.ncols() {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        if let Some(ts) = &panel.timestamps {
            row.push(ts[t].clone());
        }
        row.extend(panel.data.column(t).iter().map(|v| v.to_string()));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Default labels `y1, y2, ...`.
pub fn default_labels(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("y{i}")).collect()
}

/// Rule for turning location coordinates into a row ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderingRule {
    NorthToSouth,
    WestToEast,
    NorthwestToSoutheast,
    NortheastToSouthwest,
    /// Increasing distance to the point `(x, y)`.
    DistanceTo(f64, f64),
}

impl FromStr for OrderingRule {
    type Err = Error;

    /// Accepts `ns`, `we`, `nw-se`, `ne-sw` or `anchor:x:y`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(rest) = s.strip_prefix("anchor:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let coord = |i: usize| -> Result<f64> {
                parts
                    .get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::domain(format!("bad anchor {s:?}; expected anchor:x:y")))
            };
            if parts.len() != 2 {
                return Err(Error::domain(format!("bad anchor {s:?}; expected anchor:x:y")));
            }
            return Ok(OrderingRule::DistanceTo(coord(0)?, coord(1)?));
        }
        match s.as_str() {
            "ns" | "north-south" | "north-to-south" => Ok(OrderingRule::NorthToSouth),
            "we" | "west-east" | "west-to-east" => Ok(OrderingRule::WestToEast),
            "nw-se" | "northwest-southeast" => Ok(OrderingRule::NorthwestToSoutheast),
            "ne-sw" | "northeast-southwest" => Ok(OrderingRule::NortheastToSouthwest),
            other => Err(Error::domain(format!("unknown ordering rule {other:?}"))),
        }
    }
}

impl std::fmt::Display for OrderingRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OrderingRule::NorthToSouth => f.write_str("north-to-south"),
            OrderingRule::WestToEast => f.write_str("west-to-east"),
            OrderingRule::NorthwestToSoutheast => f.write_str("northwest-to-southeast"),
            OrderingRule::NortheastToSouthwest => f.write_str("northeast-to-southwest"),
            OrderingRule::DistanceTo(x, y) => write!(f, "distance-to({x}, {y})"),
        }
    }
}

/// Orders locations by the rule's projection; ties keep input order.
/// `x` grows eastwards and `y` northwards.
pub fn order_by_coordinates(coords: &[(f64, f64)], rule: OrderingRule) -> Vec<usize> {
    let key = |&(x, y): &(f64, f64)| match rule {
        OrderingRule::NorthToSouth => -y,
        OrderingRule::WestToEast => x,
        OrderingRule::NorthwestToSoutheast => x - y,
        OrderingRule::NortheastToSouthwest => -x - y,
        OrderingRule::DistanceTo(ax, ay) => ((x - ax).powi(2) + (y - ay).powi(2)).sqrt(),
    };
    let keys: Vec<f64> = coords.iter().map(key).collect();
    let mut idx: Vec<usize> = (0..coords.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    idx
}

/// Location coordinates, optionally labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates {
    pub labels: Option<Vec<String>>,
    pub points: Vec<(f64, f64)>,
}

/// Parses a CSV with `x`/`lon`/`longitude` and `y`/`lat`/`latitude` columns
/// and an optional `label`/`name`/`station` column.
pub fn parse_coordinates(text: &str) -> Result<Coordinates> {
    let mut rdr = csv_reader(text);
    let head: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let find = |names: &[&str]| head.iter().position(|h| names.contains(&h.as_str()));
    let xi = find(&["x", "lon", "longitude"]).ok_or_else(|| parse_err(1, 1, "no x/lon column"))?;
    let yi = find(&["y", "lat", "latitude"]).ok_or_else(|| parse_err(1, 1, "no y/lat column"))?;
    let li = find(&["label", "name", "station", "id"]);
    let mut labels = Vec::new();
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line_no = record_line(&rec);
        if rec.len() != head.len() {
            return Err(parse_err(line_no, 1, format!("expected {} fields", head.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| parse_err(line_no, i + 1, format!("non-numeric coordinate {:?}", &rec[i])))
        };
        points.push((num(xi)?, num(yi)?));
        if let Some(li) = li {
            labels.push(rec[li].to_string());
        }
    }
    Ok(Coordinates {
        labels: li.map(|_| labels),
        points,
    })
}

/// Ordering of the panel's locations. Labelled coordinates are matched to
/// panel labels; unlabelled ones are taken in column order.
pub fn ordering_from_coordinates(
    coords: &Coordinates,
    panel_labels: &[String],
    rule: OrderingRule,
) -> Result<Vec<usize>> {
    let p = panel_labels.len();
    let points: Vec<(f64, f64)> = match &coords.labels {
        Some(labels) => panel_labels
            .iter()
            .map(|l| {
                labels
                    .iter()
                    .position(|c| c == l)
                    .map(|i| coords.points[i])
                    .ok_or_else(|| Error::domain(format!("no coordinates for location {l:?}")))
            })
            .collect::<Result<_>>()?,
        None if coords.points.len() == p => coords.points.clone(),
        None => {
            return Err(Error::domain(format!(
                "{} coordinates for {p} locations",
                coords.points.len()
            )))
        }
    };
    Ok(order_by_coordinates(&points, rule))
}

/// Parses a 1-based permutation separated by commas or whitespace.
pub fn parse_permutation(text: &str, p: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        for tok in line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
        {
            let v: usize = tok
                .parse()
                .map_err(|_| parse_err(line_no + 1, 1, format!("bad index {tok:?}")))?;
            if v == 0 {
                return Err(parse_err(line_no + 1, 1, "indices are 1-based"));
            }
            out.push(v - 1);
        }
    }
    validate_permutation(&out, p)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum OrderingSource {
    #[default]
    Identity,
    Permutation(Vec<usize>),
    Coordinates(Coordinates, OrderingRule),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestOptions {
    pub transform: Transform,
    pub center: bool,
    pub ordering: OrderingSource,
}

/// A panel ready for estimation with what is needed to map back.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub series: PanelSeries<f64>,
    /// Labels in the series' row order.
    pub labels: Vec<String>,
    pub timestamps: Option<Vec<String>>,
    pub transform: Transform,
}

impl Ingested {
    /// Maps a value of row `row` back to the scale of the input file.
    pub fn to_original(&self, row: usize, v: f64) -> f64 {
        self.transform.invert(v + self.series.row_means()[row])
    }
}

/// Transforms, reorders and optionally centers a parsed panel.
pub fn prepare(panel: PanelCsv, opts: &IngestOptions) -> Result<Ingested> {
    let mut data = panel.data;
    for (idx, v) in data.iter_mut().enumerate() {
        *v = opts.transform.apply(*v).map_err(|e| {
            let (i, t) = (idx % panel.labels.len(), idx / panel.labels.len());
            Error::domain(format!("{e} (location {}, time {})", i + 1, t + 1))
        })?;
    }
    let p = data.nrows();
    let perm = match &opts.ordering {
        OrderingSource::Identity => (0..p).collect(),
        OrderingSource::Permutation(perm) => perm.clone(),
        OrderingSource::Coordinates(coords, rule) => ordering_from_coordinates(coords, &panel.labels, *rule)?,
    };
    let mut series = PanelSeries::new(data)?.permuted(&perm)?;
    if opts.center {
        series = series.centered();
    }
    Ok(Ingested {
        labels: perm.iter().map(|&i| panel.labels[i].clone()).collect(),
        series,
        timestamps: panel.timestamps,
        transform: opts.transform,
    })
}

pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    prepare(read_panel_csv(path)?, opts)
}

/// A fitted model with the preprocessing needed to reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct FitFile {
    pub fit: FitResult<f64>,
    pub n: Option<usize>,
    pub transform: Transform,
    /// Means removed before fitting, in model row order.
    pub row_means: Vec<f64>,
    /// `ordering[r]` is the input column modelled in row `r`.
    pub ordering: Vec<usize>,
    pub labels: Vec<String>,
}

/// Header lines `# key=value`, then `i,j,a_ij,b_ij` for every banded entry
/// (1-based indices).
pub fn format_fit_file(file: &FitFile) -> String {
    let fit = &file.fit;
    let p = fit.p();
    let mut out = String::new();
    let join = |v: Vec<String>| v.join(";");
    let _ = writeln!(out, "# p={p}");
    if let Some(n) = file.n {
        let _ = writeln!(out, "# n={n}");
    }
    let _ = writeln!(out, "# k_used={}", fit.k);
    let _ = writeln!(out, "# method={}", fit.method);
    let _ = writeln!(out, "# transform={}", file.transform);
    let _ = writeln!(
        out,
        "# row_means={}",
        join(file.row_means.iter().map(|v| v.to_string()).collect())
    );
    let _ = writeln!(
        out,
        "# ordering={}",
        join(file.ordering.iter().map(|v| (v + 1).to_string()).collect())
    );
    let _ = writeln!(out, "# labels={}", join(file.labels.clone()));
    out.push_str("i,j,a_ij,b_ij\n");
    for i in 0..p {
        let lo = i.saturating_sub(fit.k);
        let hi = (i + fit.k).min(p - 1);
        for j in lo..=hi {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                i + 1,
                j + 1,
                fit.a_hat[(i, j)],
                fit.b_hat[(i, j)]
            );
        }
    }
    out
}

pub fn parse_fit_file(text: &str) -> Result<FitFile> {
    let mut meta = BTreeMap::new();
    let mut triples = Vec::new();
    let mut seen_header = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if !seen_header {
            seen_header = true;
            if line.starts_with('i') {
                continue;
            }
        }
        let cells = split_line(line);
        if cells.len() != 4 {
            return Err(parse_err(line_no, 1, "expected i,j,a_ij,b_ij"));
        }
        let idx_at = |c: usize| -> Result<usize> {
            cells[c]
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| parse_err(line_no, c + 1, format!("bad index {:?}", cells[c])))
        };
        let val_at = |c: usize| -> Result<f64> {
            cells[c]
                .parse::<f64>()
                .map_err(|_| parse_err(line_no, c + 1, format!("non-numeric value {:?}", cells[c])))
        };
        triples.push((line_no, idx_at(0)? - 1, idx_at(1)? - 1, val_at(2)?, val_at(3)?));
    }
    let get = |key: &str| {
        meta.get(key)
            .ok_or_else(|| Error::domain(format!("fit file lacks {key}")))
    };
    let num = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::domain(format!("fit file has a bad {key}")))
    };
    let p = num("p")?;
    let k = num("k_used")?;
    let n = meta.get("n").map(|_| num("n")).transpose()?;
    let method: Method = get("method")?.parse()?;
    let transform: Transform = meta.get("transform").map_or(Ok(Transform::None), |s| s.parse())?;
    let list = |key: &str| -> Vec<&str> {
        meta.get(key)
            .map(|s| s.split(';').filter(|t| !t.is_empty()).collect())
            .unwrap_or_default()
    };
    let row_means = list("row_means")
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::domain("fit file has a bad row mean"))
        })
        .collect::<Result<Vec<_>>>()?;
    let row_means = if row_means.is_empty() {
        vec![0.0; p]
    } else {
        row_means
    };
    let ordering = list("ordering")
        .iter()
        .map(|s| match s.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v - 1),
            _ => Err(Error::domain("fit file has a bad ordering")),
        })
        .collect::<Result<Vec<_>>>()?;
    let ordering = if ordering.is_empty() {
        (0..p).collect()
    } else {
        ordering
    };
    validate_permutation(&ordering, p)?;
    let labels: Vec<String> = list("labels").iter().map(|s| s.to_string()).collect();
    let labels = if labels.len() == p {
        labels
    } else {
        default_labels(p)
    };
    if row_means.len() != p {
        return Err(Error::domain("fit file row_means length differs from p"));
    }
    let mut a = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(p, p);
    for (line_no, i, j, aij, bij) in triples {
        if i >= p || j >= p || i.abs_diff(j) > k {
            return Err(parse_err(
                line_no,
                1,
                format!("entry ({}, {}) outside the band", i + 1, j + 1),
            ));
        }
        a[(i, j)] = aij;
        b[(i, j)] = bij;
    }
    Ok(FitFile {
        fit: FitResult {
            a_hat: a,
            b_hat: b,
            k,
            method,
            rows: Vec::new(),
            n,
        },
        n,
        transform,
        row_means,
        ordering,
        labels,
    })
}

/// `i,k,rss,ratio` rows; the ratio is blank at `k = 0`.
pub fn format_profiles(sel: &BandwidthSelection<f64>) -> String {
    let mut out = String::from("i,k,rss,ratio\n");
    for pr in &sel.profiles {
        for (k, rss) in pr.rss.iter().enumerate() {
            let ratio = if k == 0 {
                String::new()
            } else {
                pr.ratios[k - 1].to_string()
            };
            let _ = writeln!(out, "{},{k},{rss},{ratio}", pr.row + 1);
        }
    }
    out
}

/// `label,k_hat,h,mspe,sd` rows.
pub fn format_cv_reports(reports: &[CvReport<f64>]) -> String {
    let mut out = String::from("label,k_hat,h,mspe,sd\n");
    for r in reports {
        for s in &r.horizons {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.label.replace(',', ";"),
                r.k_hat,
                s.h,
                s.mspe,
                s.sd
            );
        }
    }
    out
}

/// Level hit rates of one CV report on the original scale, per horizon.
pub fn cv_level_accuracy(
    report: &CvReport<f64>,
    row_means: &[f64],
    transform: Transform,
    thresholds: &[f64],
) -> Result<Vec<(usize, Vec<LevelHit>)>> {
    report
        .horizons
        .iter()
        .map(|s| {
            let back = |m: &DMatrix<f64>| -> Vec<f64> {
                let mut v = Vec::with_capacity(m.len());
                for o in 0..m.ncols() {
                    for i in 0..m.nrows() {
                        v.push(transform.invert(m[(i, o)] + row_means[i]));
                    }
                }
                v
            };
            Ok((
                s.h,
                level_accuracy(&back(&s.predicted), &back(&s.actual), thresholds)?,
            ))
        })
        .collect()
}

/// One row per level (`[lo, hi)` ranges) with a hit-rate column per horizon.
pub fn format_level_table(thresholds: &[f64], per_h: &[(usize, Vec<LevelHit>)]) -> String {
    let mut out = String::from("level,range");
    for (h, _) in per_h {
        let _ = write!(out, ",rate_h{h},count_h{h}");
    }
    out.push('\n');
    for level in 0..=thresholds.len() {
        let range = match level {
            0 => format!("< {}", thresholds.first().map_or("inf".into(), |t| t.to_string())),
            l if l == thresholds.len() => format!(">= {}", thresholds[l - 1]),
            l => format!("[{}; {})", thresholds[l - 1], thresholds[l]),
        };
        let _ = write!(out, "{},{range}", level + 1);
        for (_, hits) in per_h {
            let hit = &hits[level];
            let rate = hit.rate().map_or(String::from("NA"), |r| format!("{r:.4}"));
            let _ = write!(out, ",{rate},{}", hit.total);
        }
        out.push('\n');
    }
    out
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(idx + 1, 1, format!("expected key=value, found {line:?}")))?;
        let key = k.trim().to_ascii_lowercase();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(parse_err(idx + 1, 1, format!("duplicate key {key:?}")));
        }
    }
    Ok(out)
}

fn parse_value<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::domain(format!("bad value {v:?} for {key}")))
}

fn parse_list<V: FromStr>(key: &str, v: &str) -> Result<Vec<V>> {
    v.split([',', ';', ' '])
        .filter(|t| !t.is_empty())
        .map(|t| parse_value(key, t))
        .collect()
}

fn parse_range(key: &str, v: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(key, v)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(Error::domain(format!("{key} needs two numbers"))),
    }
}

fn unknown_key(key: &str) -> Error {
    Error::domain(format!("unknown configuration key {key:?}"))
}

/// Applies recognised keys on top of `base`.
pub fn sim_config_from_kv(map: &BTreeMap<String, String>, mut base: SimConfig) -> Result<SimConfig> {
    for (k, v) in map {
        match k.as_str() {
            "p" => base.p = parse_value(k, v)?,
            "k0" => base.k0 = parse_value(k, v)?,
            "n" => base.n = parse_value(k, v)?,
            "case" => base.case = v.parse()?,
            "burn_in" => base.burn_in = parse_value(k, v)?,
            "seed" => base.seed = parse_value(k, v)?,
            "eta_range" => base.eta_range = parse_range(k, v)?,
            _ => return Err(unknown_key(k)),
        }
    }
    Ok(base)
}

pub fn format_sim_config(cfg: &SimConfig) -> String {
    format!(
        "p = {}\nk0 = {}\nn = {}\ncase = {}\nburn_in = {}\nseed = {}\neta_range = {},{}\n",
        cfg.p, cfg.k0, cfg.n, cfg.case, cfg.burn_in, cfg.seed, cfg.eta_range.0, cfg.eta_range.1
    )
}

/// `grid` is a list of `PxN` cells, e.g. `100x500, 100x2000`.
pub fn experiment_spec_from_kv(
    map: &BTreeMap<String, String>,
    mut base: ExperimentSpec,
) -> Result<ExperimentSpec> {
    for (k, v) in map {
        match k.as_str() {
            "case" => base.case = v.parse::<Case>()?,
            "grid" => {
                base.grid = v
                    .split([',', ';'])
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(|cell| {
                        let (p, n) = cell
                            .split_once(['x', 'X'])
                            .ok_or_else(|| Error::domain(format!("grid cell {cell:?} is not PxN")))?;
                        Ok((parse_value(k, p.trim())?, parse_value(k, n.trim())?))
                    })
                    .collect::<Result<_>>()?
            }
            "k0" => base.k0 = parse_value(k, v)?,
            "k" | "max_k" => base.max_k = Some(parse_value(k, v)?),
            "c" => base.c = parse_value(k, v)?,
            "r_list" | "r" => base.r_list = parse_list(k, v)?,
            "d_rule" => base.d_rule = v.parse::<DRule>()?,
            "replications" => base.replications = parse_value(k, v)?,
            "seed" | "base_seed" => base.base_seed = parse_value(k, v)?,
            "burn_in" => base.burn_in = parse_value(k, v)?,
            "eta_range" => base.eta_range = parse_range(k, v)?,
            "redraw_coefficients" => base.redraw_coefficients = parse_value(k, v)?,
            _ => return Err(unknown_key(k)),
        }
    }
    Ok(base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation;
    use crate::simulation;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn ones_center_to_zero() {
        let panel = parse_panel_csv("a,b,c\n1,1,1\n1,1,1\n1,1,1\n").unwrap();
        let ing = prepare(
            panel,
            &IngestOptions {
                center: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(ing.series.data().iter().all(|v| *v == 0.0));
        assert_eq!(ing.series.row_means(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn log_then_center() {
        let e = std::f64::consts::E;
        let text = format!("t,a\n1,1\n2,{}\n3,{}\n", e, e * e);
        let panel = parse_panel_csv(&text).unwrap();
        assert_eq!(
            panel.timestamps.as_deref(),
            Some(&["1".to_string(), "2".into(), "3".into()][..])
        );
        let ing = prepare(
            panel,
            &IngestOptions {
                transform: Transform::Log,
                center: true,
                ..Default::default()
            },
        )
        .unwrap();
        let row: Vec<f64> = ing.series.data().row(0).iter().copied().collect();
        for (v, want) in row.iter().zip([-1.0, 0.0, 1.0]) {
            assert_relative_eq!(*v, want, epsilon = 1e-12);
        }
        assert_relative_eq!(ing.to_original(0, 1.0), e * e, epsilon = 1e-12);
    }

    #[test]
    fn parse_errors_locate_cell() {
        match parse_panel_csv("a,b\n1,2\n3,x\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
        match parse_panel_csv("a,b\n1,\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_panel_csv("a,b\n1,2,3\n").is_err());
        assert!(parse_panel_csv("a,b\n1,NaN\n").is_err());
        let panel = parse_panel_csv("a\n-1\n").unwrap();
        let err = prepare(
            panel,
            &IngestOptions {
                transform: Transform::Log,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn distance_ordering() {
        // distances 5, 1, 3 from the origin
        let coords = [(5.0, 0.0), (0.0, 1.0), (3.0, 0.0)];
        let perm = order_by_coordinates(&coords, OrderingRule::DistanceTo(0.0, 0.0));
        let one_based: Vec<usize> = perm.iter().map(|i| i + 1).collect();
        assert_eq!(one_based, vec![2, 3, 1]);
    }

    #[test]
    fn axis_orderings() {
        let coords = [(0.0, 0.0), (1.0, 2.0), (2.0, 1.0)];
        assert_eq!(
            order_by_coordinates(&coords, OrderingRule::NorthToSouth),
            vec![1, 2, 0]
        );
        assert_eq!(
            order_by_coordinates(&coords, OrderingRule::WestToEast),
            vec![0, 1, 2]
        );
        assert_eq!(
            order_by_coordinates(&coords, OrderingRule::NortheastToSouthwest),
            vec![1, 2, 0]
        );
        assert_eq!(
            order_by_coordinates(&coords, OrderingRule::NorthwestToSoutheast)[0],
            1
        );
        assert_eq!(
            "anchor:1:2".parse::<OrderingRule>().unwrap(),
            OrderingRule::DistanceTo(1.0, 2.0)
        );
        assert!("diagonal".parse::<OrderingRule>().is_err());
    }

    #[test]
    fn labelled_coordinates_follow_panel_labels() {
        let coords = parse_coordinates("station,lat,lon\nb,1,0\na,2,0\n").unwrap();
        let perm = ordering_from_coordinates(&coords, &["a".into(), "b".into()], OrderingRule::NorthToSouth)
            .unwrap();
        assert_eq!(perm, vec![0, 1]);
        assert!(
            ordering_from_coordinates(&coords, &["a".into(), "z".into()], OrderingRule::NorthToSouth)
                .is_err()
        );
    }

    #[test]
    fn permutation_file() {
        assert_eq!(parse_permutation("3 1\n2\n", 3).unwrap(), vec![2, 0, 1]);
        assert!(parse_permutation("0 1 2", 3).is_err());
        assert!(parse_permutation("1 1 2", 3).is_err());
    }

    #[test]
    fn fit_file_round_trip() {
        let draw = simulation::draw_stable_model::<f64>(Case::Case1, 7, 1, 3, simulation::DEFAULT_ETA_RANGE)
            .unwrap();
        let y = simulation::simulate(&draw.model, 300, 50, 1).unwrap();
        let fit = estimation::fit_full(&y, 1).unwrap();
        let file = FitFile {
            fit,
            n: Some(300),
            transform: Transform::Log,
            row_means: (0..7).map(|i| i as f64 / 3.0).collect(),
            ordering: vec![6, 5, 4, 3, 2, 1, 0],
            labels: default_labels(7),
        };
        let text = format_fit_file(&file);
        assert!(text.contains("# k_used=1") && text.contains("# method=full"));
        let back = parse_fit_file(&text).unwrap();
        assert_eq!(back.fit.a_hat, file.fit.a_hat);
        assert_eq!(back.fit.b_hat, file.fit.b_hat);
        assert_eq!(back.row_means, file.row_means);
        assert_eq!(back.ordering, file.ordering);
        assert_eq!(back.transform, Transform::Log);
        assert_eq!(back.n, Some(300));
        assert!(parse_fit_file("# p=2\n# k_used=0\n# method=full\n1,2,0.1,0.1\n").is_err());
    }

    #[test]
    fn configs() {
        let map = parse_key_values("p = 50\nk0=2 # band\n\nn=2000\ncase=2\nseed=9\n").unwrap();
        let cfg = sim_config_from_kv(&map, SimConfig::new(10, 1, 100, Case::Case1, 0)).unwrap();
        assert_eq!(
            (cfg.p, cfg.k0, cfg.n, cfg.case, cfg.seed),
            (50, 2, 2000, Case::Case2, 9)
        );
        let again = sim_config_from_kv(
            &parse_key_values(&format_sim_config(&cfg)).unwrap(),
            SimConfig::new(1, 1, 1, Case::Case1, 0),
        )
        .unwrap();
        assert_eq!(again, cfg);
        assert!(parse_key_values("p 5").is_err());
        assert!(parse_key_values("p=1\np=2").is_err());
        assert!(sim_config_from_kv(&parse_key_values("colour=red").unwrap(), cfg.clone()).is_err());

        let map = parse_key_values(
            "grid = 100x500, 100x2000\nr_list = 1,2,3\nd_rule = screened\nreplications = 7\nk = 10",
        )
        .unwrap();
        let spec = experiment_spec_from_kv(&map, ExperimentSpec::default()).unwrap();
        assert_eq!(spec.grid, vec![(100, 500), (100, 2000)]);
        assert_eq!(spec.r_list, vec![1, 2, 3]);
        assert_eq!(spec.d_rule, DRule::PaperRule);
        assert_eq!((spec.replications, spec.max_k), (7, Some(10)));
    }

    #[test]
    fn level_table_layout() {
        let hits = level_accuracy(&[1.0, 50.0], &[2.0, 80.0], &[35.0, 75.0]).unwrap();
        let table = format_level_table(&[35.0, 75.0], &[(1, hits)]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "1,< 35,1.0000,1");
        assert_eq!(lines[2], "2,[35; 75),NA,0");
        assert_eq!(lines[3], "3,>= 75,0.0000,1");
    }

    proptest! {
        #[test]
        fn panel_round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 12)) {
            let panel = PanelCsv { labels: default_labels(3), timestamps: None, data: DMatrix::from_vec(3, 4, vals) };
            let back = parse_panel_csv(&format_panel_csv(&panel)).unwrap();
            for (a, b) in back.data.iter().zip(panel.data.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
            }
            prop_assert_eq!(back.labels, panel.labels);
        }
    }
}
