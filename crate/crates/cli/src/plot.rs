//! Static SVG charts for `report`.

use std::path::Path;

use plotters::prelude::*;

use crate::error::CliError;

const SIZE: (u32, u32) = (900, 520);
const TIER_COLORS: [RGBColor; 3] = [RGBColor(76, 114, 176), RGBColor(85, 168, 104), RGBColor(196, 78, 82)];

fn draw_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn palette(i: usize) -> RGBColor {
    let c = Palette99::pick(i).to_rgba();
    RGBColor(c.0, c.1, c.2)
}

/// Label for bar slot centers (x = i + 0.5); blank elsewhere.
fn slot_label(labels: &[String], x: f64) -> String {
    let i = (x - 0.5).round();
    if i >= 0.0 && (x - 0.5 - i).abs() < 1e-6 {
        labels.get(i as usize).cloned().unwrap_or_default()
    } else {
        String::new()
    }
}

/// One bar per label.
pub fn bars(path: &Path, title: &str, y_desc: &str, labels: &[String], values: &[f64]) -> Result<(), CliError> {
    let err = draw_err(path);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let top = values.iter().cloned().fold(0.0, f64::max).max(1e-9) * 1.15;
    let n = labels.len().max(1);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(60)
        .y_label_area_size(70)
        .build_cartesian_2d(0f64..n as f64, 0f64..top)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc(y_desc)
        .x_labels(n)
        .x_label_formatter(&|x| slot_label(labels, *x))
        .draw()
        .map_err(&err)?;
    chart
        .draw_series(values.iter().enumerate().map(|(i, &v)| {
            let x = i as f64;
            Rectangle::new([(x + 0.15, 0.0), (x + 0.85, v)], palette(i).filled())
        }))
        .map_err(&err)?;
    chart
        .draw_series(values.iter().enumerate().map(|(i, &v)| {
            Text::new(format!("{v:.3}"), (i as f64 + 0.35, v + top * 0.02), ("sans-serif", 14))
        }))
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Stacked Tier-1/2/3 shares per label (each row sums to 1).
pub fn tier_stack(path: &Path, labels: &[String], shares: &[[f64; 3]]) -> Result<(), CliError> {
    let err = draw_err(path);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let n = labels.len().max(1);
    let mut chart = ChartBuilder::on(&root)
        .caption("Blocks resolved per detection tier", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(60)
        .y_label_area_size(70)
        .build_cartesian_2d(0f64..n as f64, 0f64..1.0)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc("share of classified blocks")
        .x_labels(n)
        .x_label_formatter(&|x| slot_label(labels, *x))
        .draw()
        .map_err(&err)?;
    for tier in 0..3 {
        let color = TIER_COLORS[tier];
        chart
            .draw_series(shares.iter().enumerate().map(|(i, s)| {
                let lo: f64 = s[..tier].iter().sum();
                let x = i as f64;
                Rectangle::new([(x + 0.2, lo), (x + 0.8, lo + s[tier])], color.filled())
            }))
            .map_err(&err)?
            .label(format!("Tier-{}", tier + 1))
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Empirical CDF of each series.
pub fn cdf(path: &Path, title: &str, x_desc: &str, series: &[(String, Vec<f64>)]) -> Result<(), CliError> {
    let err = draw_err(path);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let x_max = series
        .iter()
        .flat_map(|(_, v)| v.iter().cloned())
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.05;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(50)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..x_max, 0f64..1.0)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc("fraction of requests")
        .draw()
        .map_err(&err)?;
    for (i, (name, values)) in series.iter().enumerate() {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len().max(1) as f64;
        let color = palette(i);
        chart
            .draw_series(LineSeries::new(
                sorted.iter().enumerate().map(|(k, &x)| (x, (k + 1) as f64 / n)),
                color.stroke_width(2),
            ))
            .map_err(&err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}
