//! MAPE, MAE and R² over masked (flow, window, statistic) cells.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::model::TARGET_NAMES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no valid targets")]
pub struct NoValidTargets;

/// Mean of `|ŷ - y| / y` over cells with `mask` set and `y > 0`, as a fraction.
pub fn mape_loss(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64, NoValidTargets> {
    assert_eq!(pred.len(), target.len());
    assert_eq!(pred.len(), mask.len());
    let (mut sum, mut n) = (0.0, 0usize);
    for ((&p, &y), &m) in pred.iter().zip(target).zip(mask) {
        if m && y > 0.0 {
            sum += (p - y).abs() / y;
            n += 1;
        }
    }
    if n == 0 {
        return Err(NoValidTargets);
    }
    Ok(sum / n as f64)
}

/// Error metrics of one target statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// percent; cells with a positive target
    pub mape: Option<f64>,
    /// seconds
    pub mae: Option<f64>,
    /// `None` when the target is constant
    pub r2: Option<f64>,
    /// cells with ground truth
    pub count: usize,
}

/// Metrics over the cells where `mask` is set.
pub fn metrics(pred: &[f64], target: &[f64], mask: &[bool]) -> Metrics {
    let cells: Vec<(f64, f64)> = pred
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &y), _)| (p, y))
        .collect();
    let n = cells.len();
    if n == 0 {
        return Metrics {
            mape: None,
            mae: None,
            r2: None,
            count: 0,
        };
    }
    let (p, y): (Vec<f64>, Vec<f64>) = cells.into_iter().unzip();
    let mape = mape_loss(&p, &y, &vec![true; n]).ok().map(|m| m * 100.0);
    let mae = p.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
    let mean = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let ss_res: f64 = p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
    Metrics {
        mape,
        mae: Some(mae),
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        count: n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub statistic: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<StatRow>,
    /// MAPE pooled over every statistic, percent
    pub overall_mape: Option<f64>,
    pub n_scenarios: usize,
    /// total inference wall time, seconds
    pub inference_s: f64,
}

impl EvalReport {
    pub fn row(&self, statistic: &str) -> Option<&Metrics> {
        self.rows.iter().find(|r| r.statistic == statistic).map(|r| &r.metrics)
    }

    /// Columns of per-cell predictions and targets, target-major.
    pub fn from_cells(cols: &[Cells], n_scenarios: usize, inference_s: f64) -> Self {
        let rows = TARGET_NAMES
            .iter()
            .zip(cols)
            .map(|(name, c)| StatRow {
                statistic: name.to_string(),
                metrics: metrics(&c.pred, &c.target, &vec![true; c.pred.len()]),
            })
            .collect();
        let all_p: Vec<f64> = cols.iter().flat_map(|c| c.pred.iter().copied()).collect();
        let all_y: Vec<f64> = cols.iter().flat_map(|c| c.target.iter().copied()).collect();
        let overall_mape = mape_loss(&all_p, &all_y, &vec![true; all_p.len()])
            .ok()
            .map(|m| m * 100.0);
        Self {
            rows,
            overall_mape,
            n_scenarios,
            inference_s,
        }
    }

    /// Aligned text table: delay and jitter blocks, one row per statistic.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:<7} {:>10} {:>12} {:>8} {:>8}",
            "metric", "stat", "MAPE(%)", "MAE(s)", "R2", "cells"
        );
        for r in &self.rows {
            let (metric, stat) = r.statistic.split_once('_').unwrap_or((&r.statistic, ""));
            let stat = match stat {
                "avg" => "Average",
                "median" => "Median",
                other => other,
            };
            let m = &r.metrics;
            let mae = m.mae.map_or("-".to_string(), |x| format!("{x:.4e}"));
            let _ = writeln!(
                out,
                "{metric:<8} {stat:<7} {:>10} {mae:>12} {:>8} {:>8}",
                fmt(m.mape, 3),
                fmt(m.r2, 4),
                m.count
            );
        }
        let _ = writeln!(out, "overall MAPE: {}%", fmt(self.overall_mape, 3));
        out
    }
}

/// Matched predictions and targets of one statistic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cells {
    pub pred: Vec<f64>,
    pub target: Vec<f64>,
}

/// One line of a residuals CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub flow: u64,
    pub window: usize,
    pub statistic: usize,
    pub target: f64,
    pub prediction: f64,
}

pub fn write_residuals_csv(rows: &[Residual], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "flow,window,statistic,target,prediction")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.flow, r.window, TARGET_NAMES[r.statistic], r.target, r.prediction
        )?;
    }
    Ok(())
}
