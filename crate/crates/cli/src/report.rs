//! Text tables and the structured (TOML) report documents.
//!
//! Evaluation report schema, one table per mode:
//!
//! ```toml
//! [refined]
//! acc = 97.1          # percent
//! edit = 93.4         # percent
//! [refined.f1]        # segmental F1 (percent) keyed by IoU threshold
//! 10 = 95.0
//! 25 = 94.2
//! 50 = 90.3
//! [refined.boundary]  # in [0, 1]
//! precision = 0.91
//! recall = 0.88
//! f1 = 0.89
//! ```

use std::collections::BTreeMap;
use std::fmt::Write;

use anyhow::Result;
use serde::Serialize;

use asrf::metrics::{MetricsReport, F1_THRESHOLDS};
use asrf::train::{EvalMode, StageRow, ThetaRow};

const HEADER: [&str; 7] = ["acc", "edit", "f1@10", "f1@25", "f1@50", "bd_prec", "bd_f1"];

fn metric_cells(r: &MetricsReport) -> String {
    let mut s = format!("{:>8.2}{:>8.2}", r.acc, r.edit);
    for k in F1_THRESHOLDS {
        let _ = write!(s, "{:>8.2}", r.f1_at(k));
    }
    let _ = write!(s, "{:>8.4}{:>8.4}", r.boundary.precision, r.boundary.f1);
    s
}

fn header(first: &[(&str, usize)]) -> String {
    let mut s = String::new();
    for (name, width) in first {
        let _ = write!(s, "{name:<width$}");
    }
    for h in HEADER {
        let _ = write!(s, "{h:>8}");
    }
    s
}

pub fn mode_table(reports: &[(EvalMode, MetricsReport)]) -> String {
    let mut out = header(&[("mode", 20)]);
    for (mode, r) in reports {
        let _ = write!(out, "\n{:<20}{}", mode.name(), metric_cells(r));
    }
    out
}

pub fn theta_table(rows: &[ThetaRow]) -> String {
    let mut out = header(&[("theta_p", 9), ("bounds", 8)]);
    for r in rows {
        let _ = write!(
            out,
            "\n{:<9.2}{:<8}{}",
            r.theta_p,
            r.boundaries,
            metric_cells(&r.report)
        );
    }
    out
}

pub fn stage_table(rows: &[StageRow]) -> String {
    let mut out = header(&[("stages", 8), ("output", 9)]);
    for r in rows {
        for (name, rep) in [("raw", &r.raw), ("refined", &r.refined)] {
            let _ = write!(out, "\n{:<8}{:<9}{}", r.brb_stages, name, metric_cells(rep));
        }
    }
    out
}

pub fn modes_toml(reports: &[(EvalMode, MetricsReport)]) -> Result<String> {
    let doc: BTreeMap<&str, &MetricsReport> = reports.iter().map(|(m, r)| (m.name(), r)).collect();
    Ok(toml::to_string(&doc)?)
}

#[derive(Serialize)]
struct Rows<'a, T> {
    rows: &'a [T],
}

/// `[[rows]]` array of tables.
pub fn rows_toml<T: Serialize>(rows: &[T]) -> Result<String> {
    Ok(toml::to_string(&Rows { rows })?)
}
