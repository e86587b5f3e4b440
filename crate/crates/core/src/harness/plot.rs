//! SVG training curves: one line per method, shaded ± std across seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::{read_metrics_file, MetricsRow, Phase, NUMERIC_COLUMNS};
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
const BINS: usize = 40;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Binned curve of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub method: String,
    /// `(x, mean, std)` per non-empty bin.
    pub points: Vec<(f64, f64, f64)>,
    pub seeds: usize,
}

/// Averages `column` per seed inside equal-width env-step bins, then across seeds.
pub fn curves(rows: &[MetricsRow], column: &str) -> Result<Vec<Curve>> {
    if !NUMERIC_COLUMNS.contains(&column) {
        return Err(Error::Usage(format!(
            "unknown metric '{column}' (available: {})",
            NUMERIC_COLUMNS.join(", ")
        )));
    }
    let max_step = rows.iter().map(|r| r.env_step).max().unwrap_or(0).max(1) as f64;
    let bin_of = |step: u64| (((step as f64 / max_step) * BINS as f64).ceil() as usize).clamp(1, BINS) - 1;
    // method -> seed -> bin -> (sum, count)
    type Bins = BTreeMap<usize, (f64, usize)>;
    let mut acc: BTreeMap<&str, BTreeMap<u64, Bins>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.phase == Phase::Train) {
        if let Some(v) = r.numeric(column) {
            let e = acc
                .entry(&r.method)
                .or_default()
                .entry(r.seed)
                .or_default()
                .entry(bin_of(r.env_step))
                .or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let mut out = Vec::new();
    for (method, seeds) in acc {
        let mut per_bin: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for bins in seeds.values() {
            for (&b, &(sum, n)) in bins {
                per_bin.entry(b).or_default().push(sum / n as f64);
            }
        }
        let points = per_bin
            .into_iter()
            .map(|(b, vals)| {
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                ((b as f64 + 0.5) / BINS as f64 * max_step, mean, std)
            })
            .collect();
        out.push(Curve {
            method: method.to_string(),
            points,
            seeds: seeds.len(),
        });
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders one metric. Output bytes depend only on the inputs.
pub fn render_svg(curves: &[Curve], column: &str) -> String {
    let xmax = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .fold(1.0_f64, f64::max);
    let shaded = |c: &Curve| c.seeds > 1;
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in curves {
        for &(_, m, s) in &c.points {
            let s = if shaded(c) { s } else { 0.0 };
            ymin = ymin.min(m - s);
            ymax = ymax.max(m + s);
        }
    }
    if !ymin.is_finite() {
        (ymin, ymax) = (0.0, 1.0);
    }
    if ymax - ymin < 1e-9 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let pad = 0.05 * (ymax - ymin);
    let (ymin, ymax) = (ymin - pad, ymax + pad);
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + x / xmax * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - ymin) / (ymax - ymin)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (x, y) = (xmax * f, ymin + (ymax - ymin) * f);
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="#444">{}</text>"##,
            sx(x),
            HEIGHT - MARGIN_B + 18.0,
            x.round()
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="#444">{:.3}</text>"##,
            MARGIN_L - 6.0,
            sy(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">env steps</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(column)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if shaded(c) && c.points.len() > 1 {
            let upper = c
                .points
                .iter()
                .map(|&(x, m, sd)| format!("{:.2},{:.2}", sx(x), sy(m + sd)));
            let lower = c
                .points
                .iter()
                .rev()
                .map(|&(x, m, sd)| format!("{:.2},{:.2}", sx(x), sy(m - sd)));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(
                s,
                r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|&(x, m, _)| format!("{:.2},{:.2}", sx(x), sy(m)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN_T + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&c.method)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads schema-valid CSVs and writes one SVG per metric. With several
/// metrics the metric name is appended to the output file stem.
pub fn emit_plots(csvs: &[PathBuf], output: &Path, metrics: &[String]) -> Result<Vec<PathBuf>> {
    if metrics.is_empty() {
        return Err(Error::Usage(format!(
            "no metric selected (available: {})",
            NUMERIC_COLUMNS.join(", ")
        )));
    }
    if csvs.is_empty() {
        return Err(Error::Usage("no metrics CSV given".into()));
    }
    let mut rows = Vec::new();
    for p in csvs {
        rows.extend(read_metrics_file(p)?);
    }
    let mut written = Vec::new();
    for m in metrics {
        let svg = render_svg(&curves(&rows, m)?, m);
        let path = if metrics.len() == 1 {
            output.to_path_buf()
        } else {
            let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
            output.with_file_name(format!("{stem}_{m}.svg"))
        };
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
