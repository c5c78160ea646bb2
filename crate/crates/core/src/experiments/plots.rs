//! CSV tables and SVG figures from experiment reports.
//!
//! CSVs are written first and carry every plotted number; the SVGs are a view of them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::{ExperimentReport, FrontendSummary, RemovalReport};
use crate::error::{Error, Result};

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn range_of<'a>(vals: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

fn write_filterbank(dir: &Path, sfx: &str, bin_hz: &[f64], w: &[Vec<f64>], out: &mut Vec<PathBuf>) -> Result<()> {
    let k = w.first().map_or(0, Vec::len);
    let csv = dir.join(format!("filterbank{sfx}.csv"));
    let mut f = create(&csv)?;
    write!(f, "bin_hz")?;
    for c in 1..=k {
        write!(f, ",ch{c}")?;
    }
    writeln!(f)?;
    for (hz, row) in bin_hz.iter().zip(w) {
        write!(f, "{hz}")?;
        for v in row {
            write!(f, ",{v}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    out.push(csv);

    let svg = dir.join(format!("filterbank{sfx}.svg"));
    {
        let root = SVGBackend::new(&svg, (900, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let ymax = w.iter().flatten().fold(0.0f64, |m, &v| m.max(v)).max(1e-9) * 1.05;
        let xmax = bin_hz.last().copied().unwrap_or(1.0);
        let mut chart = ChartBuilder::on(&root)
            .caption("Filterbank (mean over repetitions)", ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(0.0..xmax, 0.0..ymax)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("Frequency (Hz)")
            .y_desc("Weight")
            .draw()
            .map_err(plot_err)?;
        for c in 0..k {
            let color = Palette99::pick(c).to_rgba();
            chart
                .draw_series(LineSeries::new(bin_hz.iter().zip(w).map(|(&x, r)| (x, r[c])), color))
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    out.push(svg);
    Ok(())
}

fn write_gammachirp(dir: &Path, sfx: &str, s: &FrontendSummary, out: &mut Vec<PathBuf>) -> Result<()> {
    let FrontendSummary::Gammachirp {
        n,
        b,
        c,
        gain_mean,
        center_hz_mean,
        erb_hz_mean,
        per_trial,
    } = s
    else {
        return Ok(());
    };
    let csv = dir.join(format!("gc_params{sfx}.csv"));
    let mut f = create(&csv)?;
    writeln!(f, "channel,gain_mean,center_hz_mean,erb_hz_mean")?;
    for k in 0..gain_mean.len() {
        writeln!(f, "{},{},{},{}", k + 1, gain_mean[k], center_hz_mean[k], erb_hz_mean[k])?;
    }
    f.flush()?;
    out.push(csv);

    let csv = dir.join(format!("gc_shape{sfx}.csv"));
    let mut f = create(&csv)?;
    writeln!(f, "parameter,mean,ci95,count")?;
    for (name, sm) in [("n", n), ("b", b), ("c", c)] {
        let ci = sm.ci95.map(|v| v.to_string()).unwrap_or_default();
        writeln!(f, "{name},{},{ci},{}", sm.mean, sm.count)?;
    }
    f.flush()?;
    out.push(csv);

    let svg = dir.join(format!("gc_params{sfx}.svg"));
    {
        let root = SVGBackend::new(&svg, (900, 900)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let panels = root.split_evenly((3, 1));
        let k = gain_mean.len();
        type Get = fn(&crate::frontends::EffectiveGammachirp) -> &Vec<f64>;
        let series: [(&str, Get, &Vec<f64>); 3] = [
            ("Gain", |g| &g.a, gain_mean),
            ("Center frequency (Hz)", |g| &g.f_hz, center_hz_mean),
            ("ERB (Hz)", |g| &g.erb_hz, erb_hz_mean),
        ];
        for (area, (label, get, mean)) in panels.iter().zip(series) {
            let (lo, hi) = range_of(per_trial.iter().flat_map(|g| get(g).iter()).chain(mean.iter()));
            let mut chart = ChartBuilder::on(area)
                .margin(10)
                .x_label_area_size(35)
                .y_label_area_size(60)
                .build_cartesian_2d(0.5..k as f64 + 0.5, lo..hi)
                .map_err(plot_err)?;
            chart
                .configure_mesh()
                .x_desc("Channel")
                .y_desc(label)
                .draw()
                .map_err(plot_err)?;
            for g in per_trial {
                chart
                    .draw_series(
                        get(g)
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| Circle::new(((i + 1) as f64, v), 2, BLUE.mix(0.4).filled())),
                    )
                    .map_err(plot_err)?;
            }
            chart
                .draw_series(LineSeries::new(
                    mean.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)),
                    &RED,
                ))
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    out.push(svg);
    Ok(())
}

/// Writes per-trial accuracies and learned front-end tables and figures into `dir`.
///
/// Returns the written paths in a fixed order.
pub fn emit_plots(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    let csv = dir.join("accuracies.csv");
    let mut f = create(&csv)?;
    writeln!(f, "seed,test_accuracy")?;
    for (s, a) in report.seeds.iter().zip(&report.accuracies) {
        writeln!(f, "{s},{a}")?;
    }
    f.flush()?;
    out.push(csv);
    let many = report.frontends.len() > 1;
    for (i, fe) in report.frontends.iter().enumerate() {
        let sfx = if many { format!("_{}", i + 1) } else { String::new() };
        match fe {
            FrontendSummary::Matrix { bin_hz, mean_weights, .. } => {
                write_filterbank(dir, &sfx, bin_hz, mean_weights, &mut out)?
            }
            FrontendSummary::Gammachirp { .. } => write_gammachirp(dir, &sfx, fe, &mut out)?,
        }
    }
    Ok(out)
}

/// `removal.csv` (one row per range) and an accuracy-vs-range figure with CI bars.
pub fn emit_removal_plots(report: &RemovalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join("removal.csv");
    let mut f = create(&csv)?;
    writeln!(f, "first,last,center_lo_hz,center_hi_hz,mean_accuracy,ci95,count")?;
    for p in &report.points {
        let (a, b) = p.range.map(|(a, b)| (a.to_string(), b.to_string())).unwrap_or_default();
        let (lo, hi) = p
            .center_hz
            .map(|(lo, hi)| (lo.to_string(), hi.to_string()))
            .unwrap_or_default();
        let ci = p.summary.ci95.map(|v| v.to_string()).unwrap_or_default();
        writeln!(f, "{a},{b},{lo},{hi},{},{ci},{}", p.summary.mean, p.summary.count)?;
    }
    f.flush()?;

    let svg = dir.join("removal.svg");
    {
        let root = SVGBackend::new(&svg, (900, 450)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let n = report.points.len();
        let bounds: Vec<f64> = report
            .points
            .iter()
            .flat_map(|p| {
                let h = p.summary.ci95.unwrap_or(0.0);
                [p.summary.mean - h, p.summary.mean + h]
            })
            .collect();
        let (lo, hi) = range_of(bounds.iter());
        let labels: Vec<String> = report
            .points
            .iter()
            .map(|p| p.range.map_or("none".to_string(), |(a, b)| format!("{a}-{b}")))
            .collect();
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{}: accuracy vs removed channels", report.name), ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(-0.5..n as f64 - 0.5, lo..hi)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_labels(n.max(1))
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < labels.len() {
                    labels[i as usize].clone()
                } else {
                    String::new()
                }
            })
            .x_desc("Removed channels")
            .y_desc("Test accuracy")
            .draw()
            .map_err(plot_err)?;
        let pts: Vec<(f64, f64)> = report
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (i as f64, p.summary.mean))
            .collect();
        chart.draw_series(LineSeries::new(pts.clone(), &BLUE)).map_err(plot_err)?;
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))
            .map_err(plot_err)?;
        chart
            .draw_series(report.points.iter().enumerate().filter_map(|(i, p)| {
                p.summary.ci95.map(|h| {
                    let x = i as f64;
                    PathElement::new(vec![(x, p.summary.mean - h), (x, p.summary.mean + h)], BLACK)
                })
            }))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(vec![csv, svg])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{summarize, RemovalPoint};

    fn removal() -> RemovalReport {
        RemovalReport {
            name: "FfBt_26".into(),
            num_channels: 40,
            ci_method: String::new(),
            points: vec![
                RemovalPoint {
                    range: None,
                    center_hz: None,
                    accuracies: vec![0.9, 0.92],
                    summary: summarize(&[0.9, 0.92]),
                },
                RemovalPoint {
                    range: Some((20, 26)),
                    center_hz: Some((1626.04, 2563.5)),
                    accuracies: vec![0.8, 0.84],
                    summary: summarize(&[0.8, 0.84]),
                },
            ],
        }
    }

    #[test]
    fn removal_outputs_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let pa = emit_removal_plots(&removal(), &a).unwrap();
        let pb = emit_removal_plots(&removal(), &b).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let csv = std::fs::read_to_string(&pa[0]).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().starts_with("20,26,1626.04,2563.5,"));
    }
}
