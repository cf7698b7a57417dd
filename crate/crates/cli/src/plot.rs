//! Static PNG line plots, one panel per series.

use std::path::Path;
use std::sync::OnceLock;

use plotters::prelude::*;
use plotters::style::register_font;

use crate::error::{CliError, CliResult};

const FONT_CANDIDATES: [&str; 5] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/System/Library/Fonts/Supplemental/Arial.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

/// Registers a sans-serif font for labels. `ICAFUSION_FONT` takes priority
/// over the usual system locations; without any font the plots are drawn
/// without text.
fn font_ready() -> bool {
    static READY: OnceLock<bool> = OnceLock::new();
    *READY.get_or_init(|| {
        let env = std::env::var("ICAFUSION_FONT").ok();
        for path in env.iter().map(String::as_str).chain(FONT_CANDIDATES) {
            if let Ok(bytes) = std::fs::read(path) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        log::debug!("no font found; plots will have no labels");
        false
    })
}

#[derive(Clone, Debug)]
pub struct Panel {
    pub title: String,
    pub points: Vec<(f64, f64)>,
}

impl Panel {
    pub fn new(title: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            title: title.into(),
            points,
        }
    }
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5f64.max(0.05 * lo.abs()) };
    (lo - pad, hi + pad)
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::data(format!("cannot draw {}: {e}", path.display()))
}

/// Draws `panels` on a grid in one PNG at `path`.
pub fn save_panels(path: &Path, x_label: &str, panels: &[Panel]) -> CliResult {
    if panels.is_empty() {
        return Ok(());
    }
    let cols = panels.len().min(4);
    let rows = panels.len().div_ceil(cols);
    let text = font_ready();
    let root = BitMapBackend::new(path, (320 * cols as u32, 260 * rows as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    for (area, panel) in root.split_evenly((rows, cols)).iter().zip(panels) {
        let xs = span(panel.points.iter().map(|p| p.0));
        let ys = span(panel.points.iter().map(|p| p.1));
        let mut builder = ChartBuilder::on(area);
        builder.margin(12);
        if text {
            builder
                .caption(&panel.title, ("sans-serif", 16))
                .x_label_area_size(28)
                .y_label_area_size(56);
        }
        let mut chart = builder
            .build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)
            .map_err(|e| plot_err(path, e))?;
        if text {
            chart
                .configure_mesh()
                .x_desc(x_label)
                .x_labels(5)
                .y_labels(5)
                .label_style(("sans-serif", 11))
                .draw()
                .map_err(|e| plot_err(path, e))?;
        }
        let finite: Vec<(f64, f64)> = panel
            .points
            .iter()
            .copied()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        chart
            .draw_series(LineSeries::new(finite.iter().copied(), &BLUE))
            .map_err(|e| plot_err(path, e))?;
        if finite.len() <= 32 {
            chart
                .draw_series(finite.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))
                .map_err(|e| plot_err(path, e))?;
        }
    }
    root.present().map_err(|e| plot_err(path, e))?;
    Ok(())
}
