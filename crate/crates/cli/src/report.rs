//! Collects sweep CSVs from run directories into per-protocol tables and
//! line plots of metric against tabular availability.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use plotters::prelude::*;
use rovtl_core::evaluation::MetricKind;
use rovtl_core::tabular::ProtocolKind;

use crate::pipeline::read_sweeps;

/// Mean curve of one run for one protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub run: String,
    pub metric: MetricKind,
    pub fractions: Vec<f64>,
    pub values: Vec<f64>,
}

fn run_metric(dir: &Path) -> anyhow::Result<MetricKind> {
    let mut r = csv::Reader::from_path(dir.join("summary.csv"))?;
    let rec = r.records().next().context("empty summary.csv")??;
    Ok(MetricKind::parse(&rec[2])?)
}

/// Directories below `root` (itself included) holding a `summary.csv`.
fn run_dirs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        if d.join("summary.csv").is_file() {
            out.push(d.clone());
        }
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Seed-averaged curves per protocol, runs in path order.
pub fn collect(root: &Path) -> anyhow::Result<BTreeMap<&'static str, Vec<Curve>>> {
    let mut out: BTreeMap<&'static str, Vec<Curve>> = BTreeMap::new();
    for dir in run_dirs(root)? {
        let metric = run_metric(&dir)?;
        let run = dir
            .strip_prefix(root)
            .ok()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(&dir)
            .display()
            .to_string();
        for kind in ProtocolKind::ALL {
            let path = dir.join(format!("sweep_{}.csv", kind.short_name()));
            if !path.is_file() {
                continue;
            }
            let sweeps = read_sweeps(&path, kind, metric)?;
            let Some((_, first)) = sweeps.first() else { continue };
            let n = sweeps.len() as f64;
            let values = (0..first.values.len())
                .map(|i| sweeps.iter().map(|(_, s)| s.values[i]).sum::<f64>() / n)
                .collect();
            out.entry(kind.short_name()).or_default().push(Curve {
                run: run.clone(),
                metric,
                fractions: first.fractions.clone(),
                values,
            });
        }
    }
    Ok(out)
}

/// Writes `report_<protocol>.csv` (and `.svg` with `plots`) into `root`.
/// Returns the files written.
pub fn write(root: &Path, plots: bool) -> anyhow::Result<Vec<PathBuf>> {
    let curves = collect(root)?;
    if curves.is_empty() {
        anyhow::bail!("no sweep results under {}", root.display());
    }
    let mut written = Vec::new();
    for (protocol, runs) in &curves {
        let path = root.join(format!("report_{protocol}.csv"));
        let mut f = File::create(&path)?;
        writeln!(f, "run,metric,fraction,value")?;
        for c in runs {
            for (fr, v) in c.fractions.iter().zip(&c.values) {
                writeln!(f, "{},{},{fr},{v}", c.run, c.metric.as_str())?;
            }
        }
        written.push(path);
        if plots {
            let svg = root.join(format!("report_{protocol}.svg"));
            plot(&svg, protocol, runs)?;
            written.push(svg);
        }
    }
    Ok(written)
}

fn plot(path: &Path, protocol: &str, runs: &[Curve]) -> anyhow::Result<()> {
    let (lo, hi) = runs
        .iter()
        .flat_map(|c| c.values.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.1).max(1e-3);
    let metric = runs.first().map_or("metric", |c| c.metric.as_str());
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{protocol} missingness"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0f64..1.0f64, (lo - pad)..(hi + pad))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("fraction of attributes available")
        .y_desc(metric)
        .draw()
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    for (i, c) in runs.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                c.fractions.iter().copied().zip(c.values.iter().copied()),
                color.stroke_width(2),
            ))
            .map_err(|e| anyhow::anyhow!("{e}"))?
            .label(c.run.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(())
}
