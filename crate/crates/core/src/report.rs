//! Output files: metric / matrix / series CSVs, run metadata sidecars and
//! minimal SVG plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{CorrelationResult, TimeSeries};
use crate::assess::{ErrorMatrix, MetricSet};
use crate::consensus::{AgreementMatrix, AgreementSummary};
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "country,map,metric,value,stderr,n,excluded";
pub const ERROR_MATRIX_HEADER: &str = "country,map,tp,fp,fn,tn";
pub const CORRELATION_HEADER: &str = "metric,r,n,excluded";
pub const TIMESERIES_HEADER: &str = "timestamp,mask,region,mean,count";
pub const FAILURES_HEADER: &str = "country,map,stage,error";

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub country: String,
    pub map: String,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub excluded: u64,
}

impl MetricRecord {
    pub fn from_set(country: &str, map: &str, m: &MetricSet, n: u64, excluded: u64) -> Vec<Self> {
        m.rows()
            .into_iter()
            .map(|(metric, value, stderr)| MetricRecord {
                country: country.to_string(),
                map: map.to_string(),
                metric: metric.to_string(),
                value,
                stderr,
                n,
                excluded,
            })
            .collect()
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != METRICS_HEADER {
        return Err(Error::schema(format!(
            "metrics header {header:?}, expected {METRICS_HEADER:?}"
        )));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::schema(format!("metrics row {}: {e}", i + 1))))
        .collect()
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

pub fn write_metrics_csv(records: &[MetricRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(METRICS_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.country.clone(),
            r.map.clone(),
            r.metric.clone(),
            r.value.to_string(),
            r.stderr.to_string(),
            r.n.to_string(),
            r.excluded.to_string(),
        ])?;
    }
    finish(w, path)
}

/// `0.96±0.01` style cell.
pub fn display_value(value: f64, stderr: f64) -> String {
    format!("{value:.2}±{stderr:.2}")
}

/// Metrics with an extra `display` column rounded to two decimals.
pub fn write_metrics_table_csv(records: &[MetricRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["country", "map", "metric", "value", "stderr", "display"])?;
    for r in records {
        w.write_record([
            r.country.clone(),
            r.map.clone(),
            r.metric.clone(),
            r.value.to_string(),
            r.stderr.to_string(),
            display_value(r.value, r.stderr),
        ])?;
    }
    finish(w, path)
}

pub fn write_error_matrix_csv(rows: &[(String, String, ErrorMatrix)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(ERROR_MATRIX_HEADER.split(','))?;
    for (country, map, m) in rows {
        w.write_record([
            country.clone(),
            map.clone(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.fn_.to_string(),
            m.tn.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn write_correlation_csv(results: &[CorrelationResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(CORRELATION_HEADER.split(','))?;
    for c in results {
        w.write_record([
            c.metric.clone(),
            c.r.to_string(),
            c.n_points.to_string(),
            c.excluded.join("|"),
        ])?;
    }
    finish(w, path)
}

pub fn write_timeseries_csv(series: &[TimeSeries], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(TIMESERIES_HEADER.split(','))?;
    for s in series {
        for e in &s.entries {
            w.write_record([
                e.date.to_string(),
                s.mask_name.clone(),
                s.region_name.clone(),
                e.mean.map(|m| m.to_string()).unwrap_or_default(),
                e.count.to_string(),
            ])?;
        }
    }
    finish(w, path)
}

/// Square matrix with the names as header row and first column.
pub fn write_matrix_csv<T: ToString>(
    names: &[String],
    cell: impl Fn(usize, usize) -> T,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(std::iter::once("map").chain(names.iter().map(String::as_str)))?;
    for (i, name) in names.iter().enumerate() {
        let row = (0..names.len()).map(|j| cell(i, j).to_string());
        w.write_record(std::iter::once(name.clone()).chain(row))?;
    }
    finish(w, path)
}

pub fn write_agreement_csv(m: &AgreementMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_matrix_csv(m.names(), |i, j| m.get(i, j), path)
}

pub fn write_rank_csv(names: &[String], ranks: &[Vec<u32>], path: impl AsRef<Path>) -> Result<()> {
    write_matrix_csv(names, |i, j| ranks[i][j], path)
}

pub fn write_summary_csv(rows: &[(String, AgreementSummary)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record([
        "country",
        "pct_all_same",
        "pct_all_crop",
        "pct_split",
        "pct_none_crop",
        "valid_pixels",
    ])?;
    for (country, s) in rows {
        w.write_record([
            country.clone(),
            s.pct_all_same.to_string(),
            s.pct_all_crop.to_string(),
            s.pct_split.to_string(),
            s.pct_none_crop.to_string(),
            s.valid_pixel_count.to_string(),
        ])?;
    }
    finish(w, path)
}

/// A (country, map) work item that could not be completed.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Failure {
    pub country: String,
    pub map: String,
    pub stage: String,
    pub error: String,
}

pub fn write_failures_csv(failures: &[Failure], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(FAILURES_HEADER.split(','))?;
    for f in failures {
        w.write_record([&f.country, &f.map, &f.stage, &f.error])?;
    }
    finish(w, path)
}

/// Provenance written next to every output as `<file>.meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMeta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Hex SHA-256 of the configuration bytes (or of the input table for
    /// table-driven commands).
    pub config_sha256: String,
    pub seed: u64,
    pub rng: &'static str,
    pub estimators: Vec<String>,
    pub excluded: Vec<String>,
}

pub fn meta_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    output.with_file_name(name)
}

pub fn write_meta(output: &Path, meta: &RunMeta) -> Result<()> {
    let path = meta_path(output);
    let text = serde_json::to_string_pretty(meta)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_x: bool,
}

impl Axes {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone, log_x: bool) -> Self {
        let tx = |x: f64| if log_x { x.max(1e-12).log10() } else { x };
        let (mut x0, mut x1) = bounds(xs.map(tx));
        let (mut y0, mut y1) = bounds(ys);
        if x0 == x1 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y0 == y1 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Axes { x0, x1, y0, y1, log_x }
    }

    fn px(&self, x: f64) -> f64 {
        let x = if self.log_x { x.max(1e-12).log10() } else { x };
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn frame(&self, svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = write!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
            W / 2.0,
            escape(title),
            H - PAD,
            W - PAD,
            H - PAD,
            H - PAD,
            W / 2.0,
            H - 16.0,
            escape(xlabel),
            H / 2.0,
            H / 2.0,
            escape(ylabel),
        );
        let xfmt = |v: f64| if self.log_x { format!("{:.0}", 10f64.powf(v)) } else { format!("{v:.3}") };
        let _ = writeln!(svg, r#"<text x="{PAD}" y="{}" text-anchor="middle">{}</text>"#, H - PAD + 16.0, xfmt(self.x0));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W - PAD, H - PAD + 16.0, xfmt(self.x1));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, PAD - 4.0, H - PAD, self.y0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, PAD - 4.0, PAD + 4.0, self.y1);
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// Labeled scatter plot; `log_x` spaces the x axis logarithmically.
pub fn scatter_svg(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64, String)], log_x: bool) -> String {
    let axes = Axes::fit(points.iter().map(|p| p.0), points.iter().map(|p| p.1), log_x);
    let mut svg = String::new();
    axes.frame(&mut svg, title, xlabel, ylabel);
    for (x, y, label) in points {
        let (cx, cy) = (axes.px(*x), axes.py(*y));
        let _ = writeln!(svg, r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="4" fill="#2c7bb6"><title>{}</title></circle>"##, escape(label));
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="9">{}</text>"#, cx + 5.0, cy - 5.0, escape(label));
    }
    svg.push_str("</svg>\n");
    svg
}

/// One polyline per series; missing values break the line.
pub fn line_svg(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, Option<f64>)>)]) -> String {
    let xs = series.iter().flat_map(|s| s.1.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.1.iter().filter_map(|p| p.1));
    let axes = Axes::fit(xs, ys, false);
    let mut svg = String::new();
    axes.frame(&mut svg, title, xlabel, ylabel);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for run in pts.split(|p| p.1.is_none()).filter(|r| !r.is_empty()) {
            let coords: Vec<String> = run
                .iter()
                .map(|(x, y)| format!("{:.2},{:.2}", axes.px(*x), axes.py(y.unwrap_or_default())))
                .collect();
            let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        }
        let ly = PAD + 14.0 * k as f64;
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{ly:.2}" fill="{color}">{}</text>"#, W - PAD - 120.0, escape(name));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
