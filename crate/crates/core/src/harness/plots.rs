//! SVG plots of a metrics log.

use super::metrics::{parse_log, MetricsRecord};
use crate::error::{Error, Result};
use plotters::prelude::*;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotFile {
    pub path: PathBuf,
    pub series: Vec<String>,
}

type Series = (String, Vec<(f64, f64)>);

fn series(records: &[MetricsRecord], name: &str, f: impl Fn(&MetricsRecord) -> Option<f64>) -> Option<Series> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| f(r).filter(|v| v.is_finite()).map(|v| (r.step as f64, v)))
        .collect();
    (!pts.is_empty()).then(|| (name.to_string(), pts))
}

fn draw(path: &Path, title: &str, lines: &[Series]) -> Result<()> {
    let err = |e: &dyn std::fmt::Display| Error::Plot(e.to_string());
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let pts = lines.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(|e| err(&e))?;
    chart.configure_mesh().x_desc("step").draw().map_err(|e| err(&e))?;
    for (i, (name, p)) in lines.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(p.iter().copied(), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Writes loss, weight and collapse plots for the log at `log` into
/// `out_dir`. A log without records produces no files.
pub fn emit_plots(log: &Path, out_dir: &Path) -> Result<Vec<PlotFile>> {
    let records = parse_log(&std::fs::read_to_string(log)?)?;
    emit_plots_for(&records, out_dir)
}

pub fn emit_plots_for(records: &[MetricsRecord], out_dir: &Path) -> Result<Vec<PlotFile>> {
    if records.is_empty() {
        return Ok(vec![]);
    }
    std::fs::create_dir_all(out_dir)?;
    let combined = records.iter().any(|r| r.is_combined());
    let losses: Vec<Series> = if combined {
        [
            series(records, "ssp_i", |r| r.ssp_i),
            series(records, "ssp_j", |r| r.ssp_j),
            series(records, "sp_i", |r| r.sp_i),
            series(records, "sp_j", |r| r.sp_j),
        ]
        .into_iter()
        .flatten()
        .collect()
    } else {
        series(records, "total", |r| Some(r.total)).into_iter().collect()
    };
    let mut plots = vec![("losses.svg", "loss terms", losses)];
    if combined {
        plots.push(("lambda.svg", "SP weight", series(records, "lambda", |r| r.lambda).into_iter().collect()));
    }
    let collapse: Vec<Series> = [
        series(records, "feature_std", |r| Some(r.feature_std)),
        series(records, "effective_rank", |r| Some(r.effective_rank)),
    ]
    .into_iter()
    .flatten()
    .collect();
    plots.push(("collapse.svg", "feature statistics", collapse));
    let mut out = Vec::new();
    for (file, title, lines) in plots {
        if lines.is_empty() {
            continue;
        }
        let path = out_dir.join(file);
        draw(&path, title, &lines)?;
        out.push(PlotFile {
            path,
            series: lines.into_iter().map(|(n, _)| n).collect(),
        });
    }
    Ok(out)
}
