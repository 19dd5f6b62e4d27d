//! Attack reports and plot-ready aggregation files.
//!
//! Reports serialize as JSON with a fixed field order, so identical runs
//! produce identical bytes. Wall-clock time is tracked in memory and in the
//! run manifest but deliberately left out of the JSON for that reason.
//!
//! Two CSV emitters turn a pile of reports into analysis inputs: a table
//! with one row per report plus per-configuration average rows, and a
//! flat scatter file of (texel change, accuracy drop) points.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::target::RendererKind;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed report {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewPrediction {
    pub view: u32,
    pub clean: u32,
    pub adversarial: u32,
}

/// Everything measured about one attack (or one transfer evaluation of an
/// attacked texture under another renderer).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub object: String,
    pub label: u32,
    /// Renderer the accuracies were measured on.
    pub renderer: RendererKind,
    pub classifier_id: String,
    pub epsilon: f64,
    pub alpha: f64,
    pub n_steps: usize,
    pub view_batch: Option<usize>,
    pub saliency_threshold: Option<f64>,
    pub random_start: bool,
    pub seed: u64,
    pub a_before: f64,
    pub a_after: f64,
    /// None encodes "n.a." (the clean object was never recognized).
    pub a_drop: Option<f64>,
    pub n_pct: f64,
    pub changed_texel_fraction: f64,
    pub per_view: Vec<ViewPrediction>,
    pub loss_trajectory: Vec<f64>,
    /// Not serialized: differs between otherwise identical runs.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl AttackReport {
    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| ReportError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    /// Key identifying one grid configuration; average rows aggregate
    /// reports sharing it.
    fn group_key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.classifier_id,
            fmt_f64(self.epsilon),
            fmt_tau(self.saliency_threshold),
            self.renderer
        )
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_tau(tau: Option<f64>) -> String {
    match tau {
        Some(t) => fmt_f64(t),
        None => "none".to_string(),
    }
}

fn fmt_drop(drop: Option<f64>) -> String {
    match drop {
        Some(d) => fmt_f64(d),
        None => "n.a.".to_string(),
    }
}

const TABLE_HEADER: &str =
    "object,label,renderer,classifier,epsilon,alpha,n_steps,tau,a_before,a_after,a_drop,n_pct,changed_texel_fraction";

fn table_row(out: &mut String, r: &AttackReport) {
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.object,
        r.label,
        r.renderer,
        r.classifier_id,
        fmt_f64(r.epsilon),
        fmt_f64(r.alpha),
        r.n_steps,
        fmt_tau(r.saliency_threshold),
        fmt_f64(r.a_before),
        fmt_f64(r.a_after),
        fmt_drop(r.a_drop),
        fmt_f64(r.n_pct),
        fmt_f64(r.changed_texel_fraction),
    );
}

/// One row per report (input order), then one "average" row per
/// (classifier, epsilon, tau, renderer) group in sorted key order. The
/// a_drop average skips "n.a." rows; other columns average every row.
pub fn render_table(reports: &[AttackReport]) -> String {
    let mut out = String::new();
    out.push_str(TABLE_HEADER);
    out.push('\n');
    for r in reports {
        table_row(&mut out, r);
    }

    let mut groups: std::collections::BTreeMap<String, Vec<&AttackReport>> = Default::default();
    for r in reports {
        groups.entry(r.group_key()).or_default().push(r);
    }
    for (_, members) in groups {
        let n = members.len() as f64;
        let mean = |f: &dyn Fn(&AttackReport) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / n;
        let drops: Vec<f64> = members.iter().filter_map(|r| r.a_drop).collect();
        let drop_avg = if drops.is_empty() {
            None
        } else {
            Some(drops.iter().sum::<f64>() / drops.len() as f64)
        };
        let first = members[0];
        let _ = writeln!(
            out,
            "average,,{},{},{},{},{},{},{},{},{},{},{}",
            first.renderer,
            first.classifier_id,
            fmt_f64(first.epsilon),
            fmt_f64(first.alpha),
            first.n_steps,
            fmt_tau(first.saliency_threshold),
            fmt_f64(mean(&|r| r.a_before)),
            fmt_f64(mean(&|r| r.a_after)),
            fmt_drop(drop_avg),
            fmt_f64(mean(&|r| r.n_pct)),
            fmt_f64(mean(&|r| r.changed_texel_fraction)),
        );
    }
    out
}

const SCATTER_HEADER: &str = "n_pct,a_drop,epsilon,tau,renderer,classifier";

/// Flat (N%, A_drop) points, one per report, input order.
pub fn render_scatter(reports: &[AttackReport]) -> String {
    let mut out = String::new();
    out.push_str(SCATTER_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(r.n_pct),
            fmt_drop(r.a_drop),
            fmt_f64(r.epsilon),
            fmt_tau(r.saliency_threshold),
            r.renderer,
            r.classifier_id,
        );
    }
    out
}

/// Accuracy of one texture on one renderer; what `evaluate` writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub object: String,
    pub label: u32,
    pub renderer: RendererKind,
    pub classifier_id: String,
    /// Hex SHA-256 of the evaluated texture file.
    pub texture_digest: String,
    pub accuracy: f64,
    pub per_view: Vec<u32>,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| ReportError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}
