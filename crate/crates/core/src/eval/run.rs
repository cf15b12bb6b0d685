use std::time::Instant;

use rayon::prelude::*;

use super::metrics::{auroc, f1};
use super::report::{FoldMetrics, MetricsReport};
use super::{EvalError, Scenario};
use crate::dataio::FoldPlan;
use crate::epochs::EpochStudy;
use crate::modality::NUM_MODALITIES;
use crate::scalar::Scalar;
use crate::trainer::{extract_features, load_fold, load_plan, select, Layout, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Seeds the scenario's corruption draws.
    pub seed: u64,
    pub threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { seed: 0, threshold: 0.5 }
    }
}

/// Fused scores on one corrupted test fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldEval {
    pub fold: usize,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    /// Mean pooled anomaly value per slot over epochs where the slot is present.
    pub anomaly_mean: [Option<f64>; NUM_MODALITIES],
}

pub fn evaluate_fold<S: Scalar>(
    layout: &Layout,
    cfg: &TrainConfig,
    plan: &FoldPlan,
    studies: &[EpochStudy<S>],
    fold: usize,
    scenario: &Scenario,
    seed: u64,
) -> Result<FoldEval, EvalError> {
    let mut test: Vec<EpochStudy<S>> = select(studies, &plan.test_ids(fold))?.into_iter().cloned().collect();
    for s in &mut test {
        scenario.apply(s, seed)?;
    }
    let fm = load_fold::<S>(layout, fold, cfg, true)?;
    let aaf = fm.aaf.as_ref().expect("loaded with fusion");
    let refs: Vec<&EpochStudy<S>> = test.iter().collect();
    let feats = extract_features(&fm.models, &fm.store, &refs, cfg)?;
    let scores = feats.par_iter().map(|f| aaf.predict(&fm.store, &f.block).map(|p| p.as_f64())).collect::<Result<Vec<_>, _>>()?;
    let mut anomaly_mean = [None; NUM_MODALITIES];
    for (k, slot) in anomaly_mean.iter_mut().enumerate() {
        let vals: Vec<f64> = feats
            .iter()
            .filter(|f| f.block.present[k])
            .map(|f| f.block.a_pooled[k].iter().map(|v| v.as_f64()).sum::<f64>() / f.block.a_pooled[k].len() as f64)
            .collect();
        if !vals.is_empty() {
            *slot = Some(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    Ok(FoldEval { fold, scores, labels: feats.iter().map(|f| f.label).collect(), anomaly_mean })
}

/// Corrupts each test fold per `scenario`, scores it with that fold's fused
/// model and aggregates over folds in fold order.
pub fn run_scenario<S: Scalar>(
    scenario: &Scenario,
    studies: &[EpochStudy<S>],
    layout: &Layout,
    opts: &EvalOptions,
) -> Result<(MetricsReport, Vec<FoldEval>), EvalError> {
    let start = Instant::now();
    let cfg = layout.read_config()?;
    let plan = load_plan(layout)?;
    let evals = (0..plan.k)
        .into_par_iter()
        .map(|fold| evaluate_fold(layout, &cfg, &plan, studies, fold, scenario, opts.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let folds = evals
        .iter()
        .map(|e| Ok(FoldMetrics { fold: e.fold, f1: f1(&e.scores, &e.labels, opts.threshold), auroc: auroc(&e.scores, &e.labels)? }))
        .collect::<Result<Vec<_>, EvalError>>()?;
    let report = MetricsReport::from_folds(scenario, folds, opts.seed, start.elapsed().as_secs_f64());
    Ok((report, evals))
}
