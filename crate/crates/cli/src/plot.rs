//! Static SVG figures: mean W2 ± se against training size per family, and
//! the log-log remainder scaling plot.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};
use cdpo_core::eval::{aggregate_runs, Convention, Metric};
use cdpo_core::genmodels::Family;
use cdpo_core::losses::LossKind;
use cdpo_core::orthocheck::ScalingReport;
use plotters::prelude::*;

use crate::record::{list_records, RecordKind};

/// `(n_train, mean, se)` points per learner.
pub type Series = BTreeMap<LossKind, Vec<(usize, f64, f64)>>;

#[derive(Clone, Debug, Default)]
pub struct Collected {
    pub by_family: BTreeMap<Family, Series>,
    /// Per-record problems that excluded the record.
    pub problems: Vec<String>,
}

/// Groups successful benchmark records by family, learner and training
/// size. Each record contributes its arm-averaged mean W2.
pub fn collect_w2(dir: &Path) -> Result<Collected> {
    let mut raw: BTreeMap<Family, BTreeMap<LossKind, BTreeMap<usize, Vec<f64>>>> = BTreeMap::new();
    let mut problems = Vec::new();
    for (path, rec) in list_records(dir)? {
        if rec.kind != RecordKind::BenchmarkCell {
            continue;
        }
        let name = path.display();
        if !rec.is_ok() {
            problems.push(format!("{name}: failed run ({})", rec.error.as_deref().unwrap_or("unknown error")));
            continue;
        }
        let Some(n) = rec.n_train else {
            problems.push(format!("{name}: missing n_train"));
            continue;
        };
        let Some(v) = rec.arm_mean(Metric::W2) else {
            problems.push(format!("{name}: missing w2 evaluations"));
            continue;
        };
        raw.entry(rec.config.family)
            .or_default()
            .entry(rec.config.learner)
            .or_default()
            .entry(n)
            .or_default()
            .push(v);
    }
    let mut by_family = BTreeMap::new();
    for (family, learners) in raw {
        let mut series = Series::new();
        for (learner, by_n) in learners {
            let mut pts = Vec::new();
            for (n, vals) in by_n {
                let agg = aggregate_runs(&vals, Convention::MeanSe)?;
                pts.push((n, agg.center, agg.spread));
            }
            series.insert(learner, pts);
        }
        by_family.insert(family, series);
    }
    Ok(Collected { by_family, problems })
}

const COLORS: [RGBColor; 6] = [RED, BLUE, GREEN, MAGENTA, CYAN, BLACK];

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    let pad = if span > 0.0 { 0.08 * span } else { 0.05 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

fn draw_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plotting failed: {e:?}")
}

pub fn plot_family(path: &Path, family: Family, series: &Series) -> Result<()> {
    let pts: Vec<&(usize, f64, f64)> = series.values().flatten().collect();
    if pts.is_empty() {
        bail!("no points for {family}");
    }
    let (x0, x1) = padded(
        pts.iter().map(|p| p.0 as f64).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.0 as f64).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = padded(
        pts.iter().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max),
    );
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{family}: out-sample W2 (mean ± se)"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("n_train")
        .y_desc("W2")
        .draw()
        .map_err(draw_err)?;
    for (i, (learner, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().map(|p| (p.0 as f64, p.1)), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(learner.name())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(
                pts.iter()
                    .map(|p| ErrorBar::new_vertical(p.0 as f64, p.1 - p.2, p.1, p.1 + p.2, color.filled(), 8)),
            )
            .map_err(draw_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// `log10 ‖ĝ - g*‖²` against `log10 ε`; zero distances are skipped.
pub fn plot_scaling(path: &Path, reports: &[ScalingReport]) -> Result<()> {
    let lines: Vec<(String, Vec<(f64, f64)>)> = reports
        .iter()
        .map(|r| {
            let pts = r
                .epsilons
                .iter()
                .zip(&r.sq_distances)
                .filter(|(_, d)| **d > 0.0)
                .map(|(e, d)| (e.log10(), d.log10()))
                .collect();
            let label = match r.slope {
                Some(s) => format!("{} (slope {s:.2})", r.loss),
                None => r.loss.to_string(),
            };
            (label, pts)
        })
        .collect();
    let all: Vec<&(f64, f64)> = lines.iter().flat_map(|l| &l.1).collect();
    if all.is_empty() {
        bail!("no positive distances to plot");
    }
    let (x0, x1) = padded(
        all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = padded(
        all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Remainder scaling", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("log10 eps")
        .y_desc("log10 squared distance")
        .draw()
        .map_err(draw_err)?;
    for (i, (label, pts)) in lines.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|p| Circle::new(*p, 3, color.filled())))
            .map_err(draw_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Writes one W2 figure per family found in `results` and, when
/// `scaling` exists, the scaling figure. Returns the files written.
pub fn cmd_plot(results: &Path, scaling: Option<&Path>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let collected = collect_w2(results)?;
    for p in &collected.problems {
        eprintln!("skipped {p}");
    }
    let scaling_reports: Option<Vec<ScalingReport>> = match scaling {
        Some(p) if p.exists() => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        _ => None,
    };
    if collected.by_family.is_empty() && scaling_reports.is_none() {
        bail!("no results found in {}", results.display());
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (family, series) in &collected.by_family {
        let path = out_dir.join(format!("w2_{family}.svg"));
        plot_family(&path, *family, series)?;
        written.push(path);
    }
    if let Some(reports) = scaling_reports {
        let path = out_dir.join("scaling.svg");
        plot_scaling(&path, &reports)?;
        written.push(path);
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(written)
}
