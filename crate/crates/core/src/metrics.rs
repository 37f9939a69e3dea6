//! Positioning-error statistics, the held-out grid evaluator, and CSV/SVG
//! figure data.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::RoomEnvironment;
use crate::error::{Error, Result};
use crate::nn::{ModelWeights, Network};
use crate::optics::Vec3;
use crate::sensing::{grid_positions, FeatureScaling, GainTable, Sample};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDim {
    #[default]
    #[serde(rename = "3d")]
    ThreeD,
    #[serde(rename = "2d")]
    TwoD,
}

/// Euclidean distance per pair, ignoring z in 2-D mode.
pub fn positioning_errors_dim(
    predictions: &[Vec3],
    truths: &[Vec3],
    dim: ErrorDim,
) -> Result<Vec<f64>> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    Ok(predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            let mut d = *p - *t;
            if dim == ErrorDim::TwoD {
                d.z = 0.0;
            }
            d.norm()
        })
        .collect())
}

pub fn positioning_errors(predictions: &[Vec3], truths: &[Vec3]) -> Result<Vec<f64>> {
    positioning_errors_dim(predictions, truths, ErrorDim::ThreeD)
}

/// Fraction of errors `<=` each threshold.
pub fn empirical_cdf(errors: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::Empty("error list"));
    }
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidArgument(
            "CDF thresholds must be sorted ascending".into(),
        ));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| (t, sorted.partition_point(|&e| e <= t) as f64 / n))
        .collect())
}

/// 0 to 0.5 m in 5 mm steps.
pub fn default_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 200.0).collect()
}

/// Linear-interpolation quantile of sorted data, `q` in [0, 1].
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub round: u32,
    pub per_point_errors_m: Vec<f64>,
    pub mean_m: f64,
    pub median_m: f64,
    pub p95_m: f64,
    pub cdf: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn from_errors(round: u32, errors: Vec<f64>, thresholds: &[f64]) -> Result<Self> {
        let cdf = empirical_cdf(&errors, thresholds)?;
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(EvalReport {
            round,
            mean_m: errors.iter().sum::<f64>() / errors.len() as f64,
            median_m: quantile_sorted(&sorted, 0.5),
            p95_m: quantile_sorted(&sorted, 0.95),
            per_point_errors_m: errors,
            cdf,
        })
    }

    /// CDF fraction at an arbitrary threshold, computed from the raw errors.
    pub fn fraction_within(&self, threshold: f64) -> f64 {
        let n = self
            .per_point_errors_m
            .iter()
            .filter(|&&e| e <= threshold)
            .count();
        n as f64 / self.per_point_errors_m.len() as f64
    }
}

/// Anything that maps a power vector to a coordinate estimate.
pub trait Locator: Sync {
    fn locate_batch(&self, samples: &[Sample]) -> Result<Vec<Vec3>>;
}

/// A network with its weights and feature scaling.
pub struct NetworkLocator<'a> {
    pub network: &'a Network,
    pub weights: &'a ModelWeights,
    pub scaling: &'a FeatureScaling,
}

impl Locator for NetworkLocator<'_> {
    fn locate_batch(&self, samples: &[Sample]) -> Result<Vec<Vec3>> {
        let set = self.scaling.scale_samples(samples)?;
        let out = self.network.predict(self.weights, &set.inputs, set.len())?;
        let d = self.network.output_dim();
        Ok(out
            .chunks_exact(d)
            .map(|y| self.scaling.unscale_label(y))
            .collect())
    }
}

/// Held-out test grid over the sampling plane with cached channel gains;
/// powers are regenerated under whichever environment is evaluated.
#[derive(Clone, Debug)]
pub struct GridEvaluator {
    table: GainTable,
    pub dim: ErrorDim,
    pub thresholds: Vec<f64>,
    pub seed: u64,
}

impl GridEvaluator {
    pub fn new(
        env: &RoomEnvironment,
        points_per_side: usize,
        z: f64,
        dim: ErrorDim,
        seed: u64,
    ) -> Result<Self> {
        if points_per_side == 0 {
            return Err(Error::InvalidArgument(
                "evaluation grid needs at least one point".into(),
            ));
        }
        Ok(GridEvaluator {
            table: GainTable::new(env, grid_positions(env.dims, points_per_side, z))?,
            dim,
            thresholds: default_thresholds(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Test fingerprints under `env`.
    pub fn samples(&self, env: &RoomEnvironment) -> Vec<Sample> {
        self.table.samples(env, self.seed, 0)
    }

    pub fn evaluate(
        &self,
        locator: &dyn Locator,
        env: &RoomEnvironment,
        round: u32,
    ) -> Result<EvalReport> {
        let samples = self.samples(env);
        let predicted = locator.locate_batch(&samples)?;
        let truths: Vec<Vec3> = samples.iter().map(|s| s.coordinate).collect();
        let errors = positioning_errors_dim(&predicted, &truths, self.dim)?;
        EvalReport::from_errors(round, errors, &self.thresholds)
    }
}

/// One line of `rounds.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: u32,
    pub mean_err_m: f64,
    pub median_err_m: f64,
    pub p95_err_m: f64,
    pub loss: f64,
    pub method: String,
}

impl RoundRow {
    pub fn new(report: &EvalReport, loss: f64, method: &str) -> Self {
        RoundRow {
            round: report.round,
            mean_err_m: report.mean_m,
            median_err_m: report.median_m,
            p95_err_m: report.p95_m,
            loss,
            method: method.to_string(),
        }
    }
}

pub fn write_rounds_csv(path: &Path, rows: &[RoundRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Csv(e)
    }
}

/// `threshold_m,fraction,method` for each labeled report.
pub fn write_cdf_csv(path: &Path, reports: &[(&str, &EvalReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["threshold_m", "fraction", "method"])?;
    for (method, rep) in reports {
        for (t, f) in &rep.cdf {
            w.write_record([format!("{t:?}"), format!("{f:?}"), method.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One point of a plot series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub figure: String,
    pub method: String,
    pub x: f64,
    pub y: f64,
}

/// Long-format rows: error-vs-round curves per method plus CDF curves.
pub fn long_format(
    rounds: &[RoundRow],
    cdfs: &[(&str, &EvalReport)],
    round_figure: &str,
) -> Vec<SeriesPoint> {
    let mut out: Vec<SeriesPoint> = rounds
        .iter()
        .map(|r| SeriesPoint {
            figure: round_figure.to_string(),
            method: r.method.clone(),
            x: r.round as f64,
            y: r.mean_err_m,
        })
        .collect();
    for (method, rep) in cdfs {
        out.extend(rep.cdf.iter().map(|&(t, f)| SeriesPoint {
            figure: "cdf".into(),
            method: method.to_string(),
            x: t,
            y: f,
        }));
    }
    out
}

pub fn write_long_csv(path: &Path, points: &[SeriesPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_long_csv(path: &Path) -> Result<Vec<SeriesPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Line chart of every method in one figure of a long-format table.
pub fn render_svg(
    points: &[SeriesPoint],
    figure: &str,
    x_label: &str,
    y_label: &str,
) -> Result<String> {
    let pts: Vec<&SeriesPoint> = points
        .iter()
        .filter(|p| p.figure == figure && p.x.is_finite() && p.y.is_finite())
        .collect();
    if pts.is_empty() {
        return Err(Error::Empty("plot series"));
    }
    let mut methods: Vec<&str> = Vec::new();
    for p in &pts {
        if !methods.contains(&p.method.as_str()) {
            methods.push(&p.method);
        }
    }
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 70.0, 150.0, 20.0, 50.0);
    let fold = |f: fn(f64, f64) -> f64, init: f64, g: fn(&SeriesPoint) -> f64| {
        pts.iter().map(|p| g(p)).fold(init, f)
    };
    let (x0, x1) = (
        fold(f64::min, f64::INFINITY, |p| p.x),
        fold(f64::max, f64::NEG_INFINITY, |p| p.x),
    );
    let (y0, y1) = (
        fold(f64::min, f64::INFINITY, |p| p.y).min(0.0),
        fold(f64::max, f64::NEG_INFINITY, |p| p.y),
    );
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let sx = |x: f64| ml + (x - x0) / span(x0, x1) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / span(y0, y1) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{ml},{mt} L{ml},{} L{},{}" stroke="black" fill="none"/>"#,
        h - mb,
        w - mr,
        h - mb
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * span(x0, x1), y0 + f * span(y0, y1));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            sx(xv),
            h - mb + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            ml - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (ml + w - mr) / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        escape(y_label)
    );
    for (i, m) in methods.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut line: Vec<&&SeriesPoint> = pts.iter().filter(|p| p.method == *m).collect();
        line.sort_by(|a, b| a.x.total_cmp(&b.x));
        let d: Vec<String> = line
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#,
            d.join(" ")
        );
        let ly = mt + 16.0 * (i as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            w - mr + 10.0,
            w - mr + 30.0,
            w - mr + 36.0,
            ly + 4.0,
            escape(m)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
