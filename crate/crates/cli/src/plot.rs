use std::path::Path;

use plotters::prelude::*;

use crate::error::{CliError, CliResult};

/// One named line of `(x, mean, std)` points.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64, f64)>,
}

const COLORS: [RGBColor; 6] = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Plot(e.to_string())
}

/// Accuracy lines with a one-standard-deviation whisker at every point.
pub fn accuracy_chart(path: &Path, title: &str, x_label: &str, series: &[Series]) -> CliResult<()> {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (mut lo, mut hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return Err(CliError::Plot("nothing to plot".into()));
    }
    if hi - lo < 1e-12 {
        lo -= 0.05;
        hi += 0.05;
    }
    let pad = 0.05 * (hi - lo);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d((lo - pad)..(hi + pad), 0.0..100.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc("test accuracy (%)")
        .draw()
        .map_err(plot_err)?;
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().map(|&(x, m, _)| (x, 100.0 * m)).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
        chart
            .draw_series(s.points.iter().map(|&(x, m, sd)| {
                PathElement::new(
                    vec![(x, 100.0 * (m - sd)), (x, 100.0 * (m + sd))],
                    color.stroke_width(1),
                )
            }))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
