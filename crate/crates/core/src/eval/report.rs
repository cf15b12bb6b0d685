use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::mean_std;
use super::{EvalError, Scenario};
use crate::tensorgrad::checkpoint::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub f1: f64,
    pub auroc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub f1: f64,
    pub auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub folds: Vec<FoldMetrics>,
    pub mean: MetricSummary,
    /// Sample standard deviation over the folds.
    pub std: MetricSummary,
    pub seed: u64,
    pub runtime_s: f64,
}

impl MetricsReport {
    pub fn from_folds(scenario: &Scenario, folds: Vec<FoldMetrics>, seed: u64, runtime_s: f64) -> Self {
        let f1: Vec<f64> = folds.iter().map(|f| f.f1).collect();
        let au: Vec<f64> = folds.iter().map(|f| f.auroc).collect();
        let ((mf, sf), (ma, sa)) = (mean_std(&f1), mean_std(&au));
        Self {
            scenario: scenario.to_string(),
            folds,
            mean: MetricSummary { f1: mf, auroc: ma },
            std: MetricSummary { f1: sf, auroc: sa },
            seed,
            runtime_s,
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>, EvalError> {
        let mut b = serde_json::to_vec_pretty(self)?;
        b.push(b'\n');
        Ok(b)
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(d)?;
        }
        write_atomic(path, &self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// The report with wall-clock time removed, for replay comparisons.
    pub fn timeless(&self) -> Self {
        Self { runtime_s: 0.0, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub missing_ratio: f64,
    pub snr_db: Option<f64>,
    pub auroc_mean: f64,
    pub auroc_std: f64,
}

/// Ratio × SNR rows from clean, missing, noisy and combined reports, sorted by
/// ratio and then from clean to noisiest. Ablation reports are skipped.
pub fn grid_rows(reports: &[MetricsReport]) -> Result<Vec<GridRow>, EvalError> {
    let mut rows = Vec::new();
    for r in reports {
        let sc: Scenario = r.scenario.parse()?;
        if matches!(sc, Scenario::Ablate(_)) {
            continue;
        }
        rows.push(GridRow { missing_ratio: sc.missing_ratio(), snr_db: sc.snr_db(), auroc_mean: r.mean.auroc, auroc_std: r.std.auroc });
    }
    let key = |r: &GridRow| r.snr_db.map_or(f64::INFINITY, |s| s);
    rows.sort_by(|a, b| a.missing_ratio.total_cmp(&b.missing_ratio).then(key(b).total_cmp(&key(a))));
    Ok(rows)
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("missing_ratio,snr_db,auroc_mean,auroc_std,auroc_mean_x100,auroc_std_x100\n");
    for r in rows {
        let snr = r.snr_db.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{snr},{:.6},{:.6},{:.1},{:.1}",
            r.missing_ratio,
            r.auroc_mean,
            r.auroc_std,
            100.0 * r.auroc_mean,
            100.0 * r.auroc_std
        );
    }
    out
}
