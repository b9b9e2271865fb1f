//! Standalone SVG line charts of the sweep metrics, one file per metric.
//! Output is byte-stable: fixed float formatting, scheme order as given.

use std::path::Path;

use super::MetricsRow;
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Series {
    name: &'static str,
    points: Vec<(f64, f64)>,
}

fn collect_series(rows: &[MetricsRow], metric: impl Fn(&MetricsRow) -> Option<f64>) -> Vec<Series> {
    let mut series: Vec<Series> = Vec::new();
    for row in rows {
        let Some(v) = metric(row) else { continue };
        match series.iter_mut().find(|s| s.name == row.scheme) {
            Some(s) => s.points.push((row.p_t_dbm, v)),
            None => series.push(Series { name: row.scheme, points: vec![(row.p_t_dbm, v)] }),
        }
    }
    for s in series.iter_mut() {
        s.points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }
    series
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn svg_chart(title: &str, y_label: &str, log_y: bool, series: &[Series]) -> String {
    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            let yv = if log_y { y.max(1e-12).log10() } else { y };
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(yv);
            y_hi = y_hi.max(yv);
        }
    }
    if !x_lo.is_finite() {
        x_lo = 0.0;
        x_hi = 1.0;
        y_lo = 0.0;
        y_hi = 1.0;
    }
    if y_hi - y_lo < 1e-12 {
        y_hi = y_lo + 1.0;
    }
    if x_hi - x_lo < 1e-12 {
        x_hi = x_lo + 1.0;
    }
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| {
        let yv = if log_y { y.max(1e-12).log10() } else { y };
        HEIGHT - MARGIN_B - (yv - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B)
    };

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{title}</text>\n",
        WIDTH / 2.0
    ));

    // Axes and grid.
    for ty in nice_ticks(y_lo, y_hi, 5) {
        let y = HEIGHT - MARGIN_B - (ty - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B);
        out.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.2}\" x2=\"{:.1}\" y2=\"{y:.2}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            WIDTH - MARGIN_R
        ));
        let label = if log_y { format!("1e{ty:.1}") } else { format!("{ty:.3}") };
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{label}</text>\n",
            MARGIN_L - 6.0,
            y + 4.0
        ));
    }
    for tx in nice_ticks(x_lo, x_hi, 6) {
        let x = px(tx);
        out.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{MARGIN_T}\" x2=\"{x:.2}\" y2=\"{:.1}\" stroke=\"#eeeeee\" stroke-width=\"1\"/>\n",
            HEIGHT - MARGIN_B
        ));
        out.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{tx:.0}</text>\n",
            HEIGHT - MARGIN_B + 16.0
        ));
    }
    out.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    out.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">transmit power (dBm)</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 10.0
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{y_label}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));

    // Lines, markers, legend.
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in &s.points {
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.4\" fill=\"{color}\"/>\n",
                px(x),
                py(y)
            ));
        }
        let ly = MARGIN_T + 14.0 * i as f64 + 4.0;
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            WIDTH - 150.0,
            WIDTH - 126.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            WIDTH - 120.0,
            ly + 4.0,
            s.name
        ));
    }
    out.push_str("</svg>\n");
    out
}

type MetricFn = fn(&MetricsRow) -> Option<f64>;

/// Write one chart per metric into `out_dir`.
pub fn emit_plot(rows: &[MetricsRow], out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Io(format!("creating {}: {e}", out_dir.display())))?;
    let charts: [(&str, &str, bool, MetricFn); 5] = [
        ("nmse_range.svg", "range NMSE", true, |r| r.nmse_range),
        ("nmse_angle.svg", "angle NMSE", true, |r| r.nmse_angle),
        ("mean_gain.svg", "normalized beam gain", false, |r| Some(r.mean_gain)),
        ("success_rate.svg", "success rate", false, |r| Some(r.success_rate)),
        ("rate_bps_hz.svg", "normalized rate (bit/s/Hz)", false, |r| Some(r.rate_bps_hz)),
    ];
    let mut written = Vec::new();
    for (file, label, log_y, metric) in charts {
        let series = collect_series(rows, metric);
        let svg = svg_chart(label, label, log_y, &series);
        let path = out_dir.join(file);
        std::fs::write(&path, svg)
            .map_err(|e| Error::Io(format!("writing {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}
