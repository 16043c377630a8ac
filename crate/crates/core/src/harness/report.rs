//! Result persistence: CSV (RFC 4180 via the csv crate), a JSON-lines
//! mirror, and static SVG line charts (metric vs. N, one polyline per
//! sequence length) with the config hash embedded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::sweep::ResultRow;

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    for row in rows {
        writer.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Io(e.to_string())))
        .collect()
}

pub fn write_jsonl(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Write CSV + JSONL + one SVG chart per metric into `out_dir`; returns the
/// created paths.
pub fn emit_report(rows: &[ResultRow], config_hash: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("emit_report"));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("results.csv");
    write_csv(rows, &csv_path)?;
    written.push(csv_path);

    let jsonl_path = out_dir.join("results.jsonl");
    write_jsonl(rows, &jsonl_path)?;
    written.push(jsonl_path);

    let metrics: Vec<String> = {
        let mut m: Vec<String> = rows.iter().map(|r| r.metric.clone()).collect();
        m.sort();
        m.dedup();
        m
    };
    for metric in metrics {
        let subset: Vec<&ResultRow> = rows.iter().filter(|r| r.metric == metric).collect();
        let svg = render_chart(&metric, &subset, config_hash);
        let path = out_dir.join(format!("{metric}.svg"));
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
];

/// Metric vs. N on a log2 x-axis, one polyline per sequence length.
pub fn render_chart(metric: &str, rows: &[&ResultRow], config_hash: &str) -> String {
    let mut series: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for row in rows {
        series
            .entry(row.seq_len)
            .or_default()
            .push((row.num_steps, row.value));
    }
    for points in series.values_mut() {
        points.sort_unstable_by_key(|&(n, _)| n);
    }

    let xs: Vec<f64> = rows.iter().map(|r| (r.num_steps as f64).log2()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let (x_min, x_max) = bounds(&xs);
    let (mut y_min, mut y_max) = bounds(&ys);
    if (y_max - y_min).abs() < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = 0.06 * (y_max - y_min);
    let (y_min, y_max) = (y_min - pad, y_max + pad);

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| {
        if (x_max - x_min).abs() < 1e-12 {
            MARGIN_L + plot_w / 2.0
        } else {
            MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w
        }
    };
    let sy = |y: f64| MARGIN_T + (y_max - y) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!("<metadata>config-hash:{config_hash}</metadata>\n"));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    // X ticks at the distinct N values.
    let mut ns: Vec<usize> = rows.iter().map(|r| r.num_steps).collect();
    ns.sort_unstable();
    ns.dedup();
    for &n in &ns {
        let x = sx((n as f64).log2());
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{0}\" x2=\"{x:.1}\" y2=\"{1}\" stroke=\"black\"/>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{n}</text>\n",
            HEIGHT - MARGIN_B + 20.0
        ));
    }
    // Y ticks.
    for i in 0..=4 {
        let y = y_min + (y_max - y_min) * i as f64 / 4.0;
        let py = sy(y);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py:.1}\" x2=\"{MARGIN_L}\" y2=\"{py:.1}\" stroke=\"black\"/>\n",
            MARGIN_L - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"end\">{y:.3}</text>\n",
            MARGIN_L - 9.0,
            py + 4.0
        ));
    }
    // Axis labels and title.
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">sampling steps N (log scale)</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{metric}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" font-size=\"14\" text-anchor=\"middle\">{metric} vs. sampling steps</text>\n",
        WIDTH / 2.0
    ));
    // One polyline per L series.
    for (idx, (len, points)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .map(|&(n, v)| format!("{:.1},{:.1}", sx((n as f64).log2()), sy(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        for &(n, v) in points {
            svg.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.6\" fill=\"{color}\"/>\n",
                sx((n as f64).log2()),
                sy(v)
            ));
        }
        let ly = MARGIN_T + 16.0 * idx as f64;
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{ly:.1}\" x2=\"{1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            WIDTH - MARGIN_R + 10.0,
            WIDTH - MARGIN_R + 30.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"12\">L={len}</text>\n",
            WIDTH - MARGIN_R + 36.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}
