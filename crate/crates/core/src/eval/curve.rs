//! Degradation curves across missingness levels, summaries and plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{baseline_kalman, baseline_linear_interp, baseline_locf};
use super::metrics::masked_mae_rmse;
use crate::data::{generate_block_masks, MaskPlan, TimeSeriesTable};
use crate::error::{Error, Result};

/// Anything that can complete the state channels of a masked table.
pub trait ImputationMethod: Sync {
    fn name(&self) -> String;
    fn impute(&self, masked: &TimeSeriesTable, seed: u64) -> Result<TimeSeriesTable>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Locf,
    LinearInterp,
    Kalman,
}

impl ImputationMethod for Baseline {
    fn name(&self) -> String {
        match self {
            Baseline::Locf => "locf",
            Baseline::LinearInterp => "linear",
            Baseline::Kalman => "kalman",
        }
        .into()
    }

    fn impute(&self, masked: &TimeSeriesTable, _seed: u64) -> Result<TimeSeriesTable> {
        match self {
            Baseline::Locf => baseline_locf(masked),
            Baseline::LinearInterp => baseline_linear_interp(masked),
            Baseline::Kalman => baseline_kalman(masked),
        }
    }
}

/// One line of a curve file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: String,
    pub level: u32,
    pub seed: u64,
    pub channel: String,
    pub mae: f64,
    pub rmse: f64,
}

pub fn write_curve<W: Write>(rows: &[CurveRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve<R: Read>(reader: R) -> Result<Vec<CurveRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Runs every method on every `(level, seed)` mask of `truth(seed)`.
///
/// Rows come back ordered by level, seed, method, channel regardless of how
/// the cells were scheduled.
pub fn degradation_curve<F>(
    truth: F,
    methods: &[&dyn ImputationMethod],
    levels: &[u32],
    seeds: &[u64],
) -> Result<Vec<CurveRow>>
where
    F: Fn(u64) -> Result<TimeSeriesTable> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::Config("degradation curve needs at least one seed".into()));
    }
    if levels.is_empty() || methods.is_empty() {
        return Err(Error::Config("degradation curve needs at least one level and method".into()));
    }
    let cells: Vec<(u32, u64)> = levels.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    let per_cell: Vec<Vec<CurveRow>> = cells
        .par_iter()
        .map(|&(level, seed)| {
            let table = truth(seed)?;
            let mask = generate_block_masks(&table, &MaskPlan::for_level(level, seed)?)?;
            let mut rows = Vec::new();
            for m in methods {
                let report = masked_mae_rmse(&m.impute(&mask.masked, seed)?, &mask.ledger)?;
                rows.extend(report.channels.into_iter().map(|c| CurveRow {
                    method: m.name(),
                    level,
                    seed,
                    channel: c.channel,
                    mae: c.mae,
                    rmse: c.rmse,
                }));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// Mean over channels of each `(method, level, seed)` cell.
pub fn per_seed_mae(rows: &[CurveRow]) -> BTreeMap<(String, u32, u64), f64> {
    let mut sums: BTreeMap<(String, u32, u64), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let s = sums.entry((r.method.clone(), r.level, r.seed)).or_default();
        s.0 += r.mae;
        s.1 += 1;
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub level: u32,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub seeds: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample std over seeds of the channel-averaged MAE and RMSE.
/// Methods keep their first-appearance order.
pub fn summarize(rows: &[CurveRow]) -> Vec<SummaryRow> {
    let mut order: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, u32, u64), (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        if !order.contains(&r.method) {
            order.push(r.method.clone());
        }
        let c = cells.entry((r.method.clone(), r.level, r.seed)).or_default();
        c.0 += r.mae;
        c.1 += r.rmse;
        c.2 += 1;
    }
    let mut grouped: BTreeMap<(usize, u32), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((method, level, _), (mae, rmse, n)) in cells {
        let idx = order.iter().position(|m| *m == method).expect("seen");
        let g = grouped.entry((idx, level)).or_default();
        g.0.push(mae / n as f64);
        g.1.push(rmse / n as f64);
    }
    grouped
        .into_iter()
        .map(|((idx, level), (mae, rmse))| {
            let (mae_mean, mae_std) = mean_std(&mae);
            let (rmse_mean, rmse_std) = mean_std(&rmse);
            SummaryRow {
                method: order[idx].clone(),
                level,
                mae_mean,
                mae_std,
                rmse_mean,
                rmse_std,
                seeds: mae.len(),
            }
        })
        .collect()
}

/// Methods as rows, levels as columns, one block per metric.
pub fn summary_table(summary: &[SummaryRow]) -> String {
    let mut levels: Vec<u32> = summary.iter().map(|r| r.level).collect();
    levels.sort_unstable();
    levels.dedup();
    let mut methods: Vec<&str> = Vec::new();
    for r in summary {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    for (title, pick) in [
        ("MAE", (|r: &SummaryRow| (r.mae_mean, r.mae_std)) as fn(&SummaryRow) -> (f64, f64)),
        ("RMSE", |r: &SummaryRow| (r.rmse_mean, r.rmse_std)),
    ] {
        let _ = write!(out, "{title:<width$}");
        for l in &levels {
            let _ = write!(out, " | {:>17}", format!("{l}%"));
        }
        out.push('\n');
        out.push_str(&"-".repeat(width + levels.len() * 20));
        out.push('\n');
        for m in &methods {
            let _ = write!(out, "{m:<width$}");
            for l in &levels {
                match summary.iter().find(|r| r.method == *m && r.level == *l) {
                    Some(r) => {
                        let (mean, std) = pick(r);
                        let _ = write!(out, " | {:>17}", format!("{mean:.4} ± {std:.4}"));
                    }
                    None => {
                        let _ = write!(out, " | {:>17}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Standalone SVG line chart of mean MAE against level, with ±1 std whiskers.
pub fn curve_svg(summary: &[SummaryRow]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 30.0, 60.0);
    let mut levels: Vec<u32> = summary.iter().map(|r| r.level).collect();
    levels.sort_unstable();
    levels.dedup();
    let mut methods: Vec<&str> = Vec::new();
    for r in summary {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let ymax = summary
        .iter()
        .map(|r| r.mae_mean + r.mae_std)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.1;
    let (lmin, lmax) = (
        *levels.first().unwrap_or(&0) as f64,
        *levels.last().unwrap_or(&0) as f64,
    );
    let px = |l: f64| {
        if lmax > lmin {
            left + (l - lmin) / (lmax - lmin) * (w - left - right)
        } else {
            left + (w - left - right) / 2.0
        }
    };
    let py = |v: f64| top + (1.0 - v / ymax) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (left, w - right, top, h - bottom);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for l in &levels {
        let x = px(*l as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{l}%</text>"#,
            y1 + 18.0
        );
    }
    for i in 0..=4 {
        let v = ymax * i as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"##,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">block missingness</text>"#,
        (x0 + x1) / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">MAE</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (i, m) in methods.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<&SummaryRow> = summary.iter().filter(|r| r.method == *m).collect();
        pts.sort_by_key(|r| r.level);
        let path: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.1},{:.1}", px(r.level as f64), py(r.mae_mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for r in pts {
            let x = px(r.level as f64);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}"/><circle cx="{x:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#,
                py(r.mae_mean + r.mae_std),
                py((r.mae_mean - r.mae_std).max(0.0)),
                py(r.mae_mean)
            );
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            x1 + 15.0,
            x1 + 35.0,
            x1 + 40.0,
            ly + 4.0,
            xml_escape(m)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One-sided exact sign test: `P(X >= wins)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    if wins > n {
        return 0.0;
    }
    // log-space binomial coefficients stay exact enough for any realistic n
    let ln_choose = |k: usize| -> f64 {
        (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
    };
    (wins..=n)
        .map(|k| (ln_choose(k) - n as f64 * std::f64::consts::LN_2).exp())
        .sum::<f64>()
        .min(1.0)
}
