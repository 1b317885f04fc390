use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{cells_dir, read_cell, RunResult};
use crate::error::{Error, Result};
use crate::strategies::StrategyKind;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub strategy: StrategyKind,
    pub ratio: f64,
    pub runs: usize,
    pub mean: f64,
    /// Population standard deviation (divides by the run count).
    pub std: f64,
}

impl AggregateRow {
    pub fn formatted(&self) -> String {
        format_mean_std(self.mean, self.std)
    }
}

/// `mean±std`, both to two decimals.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:.2}")
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and spread of the final accuracy per (strategy, ratio), in table order.
pub fn aggregate(results: &[RunResult]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(usize, u64), (StrategyKind, f64, Vec<f64>)> = BTreeMap::new();
    for r in results {
        let (s, ratio_bits, _) = r.key.order();
        groups
            .entry((s, ratio_bits))
            .or_insert_with(|| (r.key.strategy, r.key.ratio, Vec::new()))
            .2
            .push(r.final_accuracy);
    }
    groups
        .into_values()
        .map(|(strategy, ratio, accs)| {
            let (mean, std) = mean_std(&accs);
            AggregateRow {
                strategy,
                ratio,
                runs: accs.len(),
                mean,
                std,
            }
        })
        .collect()
}

/// One row per cell: `strategy,ratio,seed,final_accuracy,cost_epochs`.
pub fn results_csv(results: &[RunResult]) -> String {
    let mut s = String::from("strategy,ratio,seed,final_accuracy,cost_epochs\n");
    for r in sorted(results) {
        let _ = writeln!(
            s,
            "{},{},{},{:.2},{}",
            r.key.strategy.key(),
            r.key.ratio,
            r.key.seed,
            r.final_accuracy,
            r.cost_epochs
        );
    }
    s
}

fn sorted(results: &[RunResult]) -> Vec<&RunResult> {
    let mut v: Vec<&RunResult> = results.iter().collect();
    v.sort_by_key(|r| r.key.order());
    v
}

fn summary_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("strategy,ratio,runs,mean,std,mean_std\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.2},{:.2},{}",
            r.strategy.key(),
            r.ratio,
            r.runs,
            r.mean,
            r.std,
            r.formatted()
        );
    }
    s
}

fn timing_csv(results: &[RunResult]) -> String {
    let mut s = String::from("strategy,ratio,seed,wall_time\n");
    for r in sorted(results) {
        let _ = writeln!(
            s,
            "{},{},{},{:.3}",
            r.key.strategy.key(),
            r.key.ratio,
            r.key.seed,
            r.wall_time
        );
    }
    s
}

#[derive(Serialize)]
struct CurveLine<'a> {
    strategy: &'a str,
    ratio: f64,
    seed: u64,
    epoch: usize,
    lr: Option<f64>,
    train_loss: Option<f64>,
    test_loss: f64,
    test_accuracy: f64,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    strategy: &'a str,
    ratio: f64,
    seed: u64,
    iteration: u64,
    lambda: f64,
    penalized_norm: f64,
}

fn jsonl<T: Serialize>(lines: impl Iterator<Item = T>) -> Result<String> {
    let mut s = String::new();
    for l in lines {
        s.push_str(&serde_json::to_string(&l).map_err(|e| Error::Format(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

fn curves_jsonl(results: &[RunResult]) -> Result<String> {
    jsonl(sorted(results).into_iter().flat_map(|r| {
        r.history.iter().map(move |h| CurveLine {
            strategy: r.key.strategy.key(),
            ratio: r.key.ratio,
            seed: r.key.seed,
            epoch: h.epoch,
            lr: h.lr,
            train_loss: h.train_loss,
            test_loss: h.test_loss,
            test_accuracy: h.test_accuracy,
        })
    }))
}

fn traces_jsonl(results: &[RunResult]) -> Result<String> {
    jsonl(sorted(results).into_iter().flat_map(|r| {
        r.trace.iter().map(move |t| TraceLine {
            strategy: r.key.strategy.key(),
            ratio: r.key.ratio,
            seed: r.key.seed,
            iteration: t.iteration,
            lambda: t.lambda,
            penalized_norm: t.penalized_norm,
        })
    }))
}

const PALETTE: [&str; 7] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
];

/// Mean test-accuracy curve with a ±std band per strategy, for one ratio.
pub fn render_svg(results: &[RunResult], ratio: f64) -> String {
    let mut curves: Vec<(StrategyKind, Vec<(f64, f64)>)> = Vec::new();
    for kind in StrategyKind::ALL {
        let runs: Vec<&RunResult> = results
            .iter()
            .filter(|r| r.key.strategy == kind && r.key.ratio == ratio)
            .collect();
        let Some(len) = runs.iter().map(|r| r.history.len()).min() else {
            continue;
        };
        let pts = (0..len)
            .map(|e| {
                let accs: Vec<f64> = runs.iter().map(|r| r.history[e].test_accuracy).collect();
                mean_std(&accs)
            })
            .collect();
        curves.push((kind, pts));
    }

    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let max_epoch = curves.iter().map(|c| c.1.len()).max().unwrap_or(1).saturating_sub(1).max(1) as f64;
    let lo = curves
        .iter()
        .flat_map(|c| c.1.iter().map(|(m, s)| m - s))
        .fold(f64::INFINITY, f64::min);
    let hi = curves
        .iter()
        .flat_map(|c| c.1.iter().map(|(m, s)| m + s))
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        ((lo - 1.0).max(0.0), (hi + 1.0).min(100.0))
    } else {
        (0.0, 100.0)
    };
    let px = |e: f64| left + e / max_epoch * (w - left - right);
    let py = |a: f64| top + (hi - a) / (hi - lo) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">sparsity {:.0}%</text>"#,
        (left + w - right) / 2.0,
        ratio * 100.0
    );
    let (x0, x1, y0, y1) = (px(0.0), px(max_epoch), py(lo), py(hi));
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let a = lo + (hi - lo) * i as f64 / 4.0;
        let y = py(a);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{a:.1}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 3.0
        );
    }
    let step = (max_epoch / 10.0).ceil().max(1.0) as usize;
    for e in (0..=max_epoch as usize).step_by(step) {
        let x = px(e as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{e}</text>"#,
            y0 + 4.0,
            y0 + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">epoch</text>"#,
        (x0 + x1) / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">test accuracy (%)</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (kind, pts) in &curves {
        let color = PALETTE[StrategyKind::ALL.iter().position(|k| k == kind).unwrap_or(0)];
        let upper = pts.iter().enumerate().map(|(e, (m, sd))| (px(e as f64), py(m + sd)));
        let lower = pts.iter().enumerate().rev().map(|(e, (m, sd))| (px(e as f64), py(m - sd)));
        let band: Vec<String> = upper.chain(lower).map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(e, (m, _))| format!("{:.1},{:.1}", px(e as f64), py(*m)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"><title>{}</title></polyline>"#,
            line.join(" "),
            kind.label()
        );
    }
    for (i, (kind, _)) in curves.iter().enumerate() {
        let color = PALETTE[StrategyKind::ALL.iter().position(|k| k == kind).unwrap_or(0)];
        let y = top + 10.0 + 18.0 * i as f64;
        let x = w - right + 16.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="14" height="4" fill="{color}"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            y - 4.0,
            x + 20.0,
            y + 2.0,
            kind.label()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes results.csv, summary.csv, timing.csv, curves.jsonl, traces.jsonl
/// and one `accuracy_r<ratio>.svg` per ratio. Returns the written paths.
pub fn emit_report(results: &[RunResult], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::Input("no results to report".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = vec![
        ("results.csv".to_string(), results_csv(results)),
        ("summary.csv".to_string(), summary_csv(&aggregate(results))),
        ("timing.csv".to_string(), timing_csv(results)),
        ("curves.jsonl".to_string(), curves_jsonl(results)?),
        ("traces.jsonl".to_string(), traces_jsonl(results)?),
    ];
    let mut ratios: Vec<f64> = results.iter().map(|r| r.key.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    for r in ratios {
        files.push((format!("accuracy_r{r:.4}.svg"), render_svg(results, r)));
    }
    let mut written = Vec::new();
    for (name, body) in files {
        let p = out_dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// Every persisted cell under `dir/cells`, in report order.
pub fn load_results(dir: &Path) -> Result<Vec<RunResult>> {
    let cells = cells_dir(dir);
    let entries = fs::read_dir(&cells).map_err(|e| Error::io(&cells, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&cells, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            out.push(read_cell(&path)?);
        }
    }
    out.sort_by_key(|r| r.key.order());
    Ok(out)
}
