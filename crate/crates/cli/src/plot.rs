//! Static SVG line charts for the CSV tables this tool produces. Output is
//! deterministic: fixed canvas, fixed palette, fixed number formatting.

use std::path::{Path, PathBuf};

use crate::csvfmt::Table;
use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Log-log strong error against the step, one polyline per scheme.
    Convergence,
    /// Mean-square gap and its envelope over time.
    Stability,
    /// Coordinate means and the largest state magnitude over time.
    Run,
}

impl std::str::FromStr for PlotKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convergence" => Ok(PlotKind::Convergence),
            "stability" => Ok(PlotKind::Stability),
            "run" => Ok(PlotKind::Run),
            other => Err(CliError::Config(format!(
                "unknown plot kind \"{other}\" (known: convergence, stability, run)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

/// Render a chart for `csv_path` and write it to `out`.
pub fn cmd_plot(csv_path: &Path, kind: PlotKind, out: &Path) -> Result<PathBuf> {
    let text = std::fs::read_to_string(csv_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", csv_path.display())))?;
    let table = Table::parse(&text)?;
    let (series, axes) = match kind {
        PlotKind::Convergence => convergence_series(&table)?,
        PlotKind::Stability => stability_series(&table)?,
        PlotKind::Run => run_series(&table)?,
    };
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(CliError::Config("no plottable data rows".into()));
    }
    let svg = render(&series, &axes);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, svg)?;
    Ok(out.to_path_buf())
}

struct Axes {
    x_label: String,
    y_label: String,
    log_x: bool,
    log_y: bool,
}

fn convergence_series(table: &Table) -> Result<(Vec<Series>, Axes)> {
    let scheme = table.column("scheme")?;
    let h = table.column("h")?;
    let eps2 = table.column("eps2")?;
    let mut series: Vec<Series> = Vec::new();
    for row in 0..table.rows.len() {
        if table.rows[row][h].is_empty() {
            continue; // slope summary row
        }
        let label = table.rows[row][scheme].clone();
        let x = table.float(row, h)?;
        let y = table.float(row, eps2)?;
        if !(x > 0.0) || !(y > 0.0) || !y.is_finite() {
            continue;
        }
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((x, y)),
            None => series.push(Series { label, points: vec![(x, y)] }),
        }
    }
    if series.is_empty() {
        return Err(CliError::Config("no plottable data rows".into()));
    }
    Ok((
        series,
        Axes { x_label: "h".into(), y_label: "eps2".into(), log_x: true, log_y: true },
    ))
}

fn stability_series(table: &Table) -> Result<(Vec<Series>, Axes)> {
    let t = table.column("t")?;
    let d_n = table.column("d_n")?;
    let envelope = table.column("envelope")?;
    let mut gap = Series { label: "d_n".into(), points: Vec::new() };
    let mut env = Series { label: "envelope".into(), points: Vec::new() };
    for row in 0..table.rows.len() {
        let time = table.float(row, t)?;
        gap.points.push((time, table.float(row, d_n)?));
        env.points.push((time, table.float(row, envelope)?));
    }
    // Gap series decay exponentially; use a log axis unless zeros force a
    // linear one.
    let log_y = gap.points.iter().chain(env.points.iter()).all(|(_, y)| *y > 0.0);
    if !log_y {
        // keep only finite points for the linear axis
        gap.points.retain(|(_, y)| y.is_finite());
        env.points.retain(|(_, y)| y.is_finite());
    }
    Ok((
        vec![gap, env],
        Axes { x_label: "t".into(), y_label: "mean-square gap".into(), log_x: false, log_y },
    ))
}

fn run_series(table: &Table) -> Result<(Vec<Series>, Axes)> {
    let t = table.column("t")?;
    let mut series = Vec::new();
    for (col, name) in table.header.iter().enumerate() {
        if !(name.starts_with("mean_") || name == "max_abs") {
            continue;
        }
        let mut s = Series { label: name.clone(), points: Vec::new() };
        for row in 0..table.rows.len() {
            let x = table.float(row, t)?;
            let y = table.float(row, col)?;
            if y.is_finite() {
                s.points.push((x, y));
            }
        }
        series.push(s);
    }
    if series.is_empty() {
        return Err(CliError::Config("no plottable data rows".into()));
    }
    Ok((
        series,
        Axes { x_label: "t".into(), y_label: "value".into(), log_x: false, log_y: false },
    ))
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 540.0;
const MARGIN_LEFT: f64 = 86.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 58.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn render(series: &[Series], axes: &Axes) -> String {
    let to_axis = |v: f64, log: bool| if log { v.log10() } else { v };
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            let (ax, ay) = (to_axis(x, axes.log_x), to_axis(y, axes.log_y));
            x_min = x_min.min(ax);
            x_max = x_max.max(ax);
            y_min = y_min.min(ay);
            y_max = y_max.max(ay);
        }
    }
    if !(x_min < x_max) {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if !(y_min < y_max) {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |ax: f64| MARGIN_LEFT + (ax - x_min) / (x_max - x_min) * plot_w;
    let py = |ay: f64| MARGIN_TOP + (y_max - ay) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));

    // Axis ticks: decades on log axes, five even ticks otherwise.
    let ticks = |min: f64, max: f64, log: bool| -> Vec<f64> {
        if log {
            let lo = min.floor() as i64;
            let hi = max.ceil() as i64;
            (lo..=hi).map(|d| d as f64).collect()
        } else {
            (0..=5).map(|i| min + (max - min) * i as f64 / 5.0).collect()
        }
    };
    let tick_label = |axis_value: f64, log: bool| -> String {
        if log {
            format!("1e{}", axis_value as i64)
        } else {
            format!("{axis_value:.3}")
        }
    };
    for tx in ticks(x_min, x_max, axes.log_x) {
        if tx < x_min - 1e-9 || tx > x_max + 1e-9 {
            continue;
        }
        let x = px(tx);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_TOP + plot_h + 18.0,
            tick_label(tx, axes.log_x)
        ));
    }
    for ty in ticks(y_min, y_max, axes.log_y) {
        if ty < y_min - 1e-9 || ty > y_max + 1e-9 {
            continue;
        }
        let y = py(ty);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_LEFT - 8.0,
            y + 4.0,
            tick_label(ty, axes.log_y)
        ));
    }
    // Frame and axis labels.
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"#333333\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 16.0,
        axes.x_label
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        axes.y_label
    ));

    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| {
                format!("{:.2},{:.2}", px(to_axis(x, axes.log_x)), py(to_axis(y, axes.log_y)))
            })
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        for p in &points {
            let (x, y) = p.split_once(',').unwrap();
            svg.push_str(&format!("<circle cx=\"{x}\" cy=\"{y}\" r=\"2.5\" fill=\"{color}\"/>\n"));
        }
        // Legend entry.
        let ly = MARGIN_TOP + 16.0 + idx as f64 * 16.0;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            MARGIN_LEFT + plot_w - 150.0,
            MARGIN_LEFT + plot_w - 126.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            MARGIN_LEFT + plot_w - 120.0,
            ly + 4.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic_and_structural() {
        let series = vec![
            Series { label: "a".into(), points: vec![(1e-3, 1e-2), (1e-2, 3e-2), (1e-1, 1e-1)] },
            Series { label: "b".into(), points: vec![(1e-3, 2e-2), (1e-2, 6e-2), (1e-1, 2e-1)] },
        ];
        let axes = Axes {
            x_label: "h".into(),
            y_label: "eps2".into(),
            log_x: true,
            log_y: true,
        };
        let one = render(&series, &axes);
        let two = render(&series, &axes);
        assert_eq!(one, two);
        assert_eq!(one.matches("<polyline").count(), 2);
        assert!(one.contains("1e-3"));
    }
}
