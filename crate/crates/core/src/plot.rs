//! Minimal SVG plotting: per-household metric bar charts and the lambda-
//! sensitivity curve. Every figure gets a CSV twin carrying exactly the
//! plotted data, so figures can be regenerated or re-plotted elsewhere.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::train::SweepRow;

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn svg_head(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{title}</text>\n",
        W / 2.0
    )
}

/// Vertical bar chart; one bar per (label, value).
pub fn bar_chart_svg(title: &str, pairs: &[(String, f64)]) -> String {
    let mut s = svg_head(title);
    let max = pairs.iter().map(|(_, v)| *v).fold(0.0_f64, f64::max).max(1e-12);
    let plot_w = W - 2.0 * MARGIN;
    let plot_h = H - 2.0 * MARGIN;
    let slot = plot_w / pairs.len() as f64;
    let bar_w = slot * 0.7;
    for (i, (label, v)) in pairs.iter().enumerate() {
        let h = v / max * plot_h;
        let x = MARGIN + i as f64 * slot + (slot - bar_w) / 2.0;
        let y = H - MARGIN - h;
        let _ = write!(
            s,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" fill=\"#4878a8\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\">{label}</text>\n",
            x + bar_w / 2.0,
            H - MARGIN + 14.0
        );
    }
    let _ = write!(
        s,
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{MARGIN}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">max {max:.4}</text>\n</svg>\n",
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        MARGIN - 8.0
    );
    s
}

/// Polyline chart of one or more named series over a shared x grid.
pub fn line_chart_svg(title: &str, xs: &[f64], series: &[(&str, Vec<f64>, &str)]) -> String {
    let mut s = svg_head(title);
    let xmin = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let xmax = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ymax = series
        .iter()
        .flat_map(|(_, ys, _)| ys.iter().copied())
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    let xspan = (xmax - xmin).max(1e-12);
    let plot_w = W - 2.0 * MARGIN;
    let plot_h = H - 2.0 * MARGIN;
    for (i, (name, ys, color)) in series.iter().enumerate() {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let px = MARGIN + (x - xmin) / xspan * plot_w;
                let py = H - MARGIN - y / ymax * plot_h;
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = write!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{name}</text>\n",
            pts.join(" "),
            W - MARGIN - 120.0,
            MARGIN + 16.0 * (i + 1) as f64
        );
    }
    let _ = write!(
        s,
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{MARGIN}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">x: {xmin:.3}..{xmax:.3}, ymax {ymax:.4}</text>\n</svg>\n",
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        MARGIN - 8.0
    );
    s
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)?;
    Ok(())
}

/// Per-household MSE and MAE bar charts with CSV twins. Returns the four
/// files written.
pub fn write_household_charts(dir: &Path, report: &EvalReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (metric, pick) in [
        ("mse", Box::new(|m: &crate::eval::HouseholdMetrics| m.mse) as Box<dyn Fn(_) -> f64>),
        ("mae", Box::new(|m: &crate::eval::HouseholdMetrics| m.mae)),
    ] {
        let pairs: Vec<(String, f64)> = report
            .per_household
            .iter()
            .map(|(hid, m)| (hid.to_string(), pick(m)))
            .collect();
        let svg_path = dir.join(format!("{metric}_by_household.svg"));
        write_file(&svg_path, &bar_chart_svg(&format!("{} by household", metric.to_uppercase()), &pairs))?;
        let csv_path = dir.join(format!("{metric}_by_household.csv"));
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["household", metric])?;
        for (label, v) in &pairs {
            w.write_record([label.clone(), v.to_string()])?;
        }
        w.flush().map_err(Error::Io)?;
        out.push(svg_path);
        out.push(csv_path);
    }
    Ok(out)
}

/// Sensitivity curve: 1/Sum_MSE and 1/Sum_MAE against lambda, plus its CSV
/// twin (lambda, inv_sum_mse, inv_sum_mae).
pub fn write_sensitivity_chart(dir: &Path, rows: &[SweepRow]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let inv_mse: Vec<f64> = rows.iter().map(|r| 1.0 / r.sum_mse).collect();
    let inv_mae: Vec<f64> = rows.iter().map(|r| 1.0 / r.sum_mae).collect();
    let svg = line_chart_svg(
        "Sensitivity to lambda",
        &xs,
        &[
            ("1/Sum_MSE", inv_mse.clone(), "#4878a8"),
            ("1/Sum_MAE", inv_mae.clone(), "#a85048"),
        ],
    );
    let svg_path = dir.join("sensitivity.svg");
    write_file(&svg_path, &svg)?;
    let csv_path = dir.join("sensitivity.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["lambda", "inv_sum_mse", "inv_sum_mae"])?;
    for i in 0..rows.len() {
        w.write_record([xs[i].to_string(), inv_mse[i].to_string(), inv_mae[i].to_string()])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(vec![svg_path, csv_path])
}
