use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::log::LogRow;
use super::pretrain::{fixed_subset, SampleRef, INIT_STREAM};
use super::{TrainConfig, TrainError, BCE_EPS};
use crate::aaf::{anomaly_trace, pool_anomaly, AafModel, LatentBlock};
use crate::epochs::EpochStudy;
use crate::modality::Modality;
use crate::nnblocks::ModalityModel;
use crate::rngkey::keyed_rng;
use crate::scalar::Scalar;
use crate::tensorgrad::{adam_step, AdamState, Grads, Graph, ParamStore, Tensor, TensorError};

const SHUFFLE_STREAM: u64 = 0xF05E;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionSample<S> {
    pub block: LatentBlock<S>,
    pub label: u8,
}

/// Latents and pooled anomaly traces of one epoch from eval-mode modality
/// models. Zero channels yield zero slots.
pub fn extract_block<S: Scalar>(
    models: &[ModalityModel],
    store: &ParamStore<S>,
    study: &EpochStudy<S>,
    j: usize,
    cfg: &TrainConfig,
) -> Result<LatentBlock<S>, TensorError> {
    let mut block = LatentBlock::zeros(&cfg.aaf);
    for model in models {
        let m = model.modality;
        if !study.is_present(m, j) {
            continue;
        }
        let x = study.epoch(m, j);
        let mut g = Graph::new();
        let xv = g.constant(Tensor::vector(x.to_vec()))?;
        let z = model.encode(&mut g, store, xv)?;
        let xh = model.decode(&mut g, store, z)?;
        let trace = anomaly_trace(x, g.value(xh).data())?;
        block.set(m.index(), g.value(z).data().to_vec(), pool_anomaly(&trace, cfg.aaf.anomaly_bins)?);
    }
    Ok(block)
}

/// Fusion inputs for every epoch of `studies`, in study-then-epoch order.
pub fn extract_features<S: Scalar>(
    models: &[ModalityModel],
    store: &ParamStore<S>,
    studies: &[&EpochStudy<S>],
    cfg: &TrainConfig,
) -> Result<Vec<FusionSample<S>>, TensorError> {
    let refs: Vec<(usize, usize)> = studies.iter().enumerate().flat_map(|(s, st)| (0..st.num_epochs()).map(move |j| (s, j))).collect();
    refs.par_iter()
        .map(|&(s, j)| Ok(FusionSample { block: extract_block(models, store, studies[s], j, cfg)?, label: studies[s].labels[j] }))
        .collect()
}

pub struct FusionOutcome {
    pub aaf: AafModel,
    pub log: Vec<LogRow>,
    pub steps: u64,
}

fn fusion_bce<S: Scalar>(aaf: &AafModel, store: &ParamStore<S>, samples: &[FusionSample<S>]) -> Result<Option<f64>, TensorError> {
    if samples.is_empty() {
        return Ok(None);
    }
    let parts = samples
        .par_iter()
        .map(|s| -> Result<f64, TensorError> {
            let mut g = Graph::new();
            let p = aaf.forward(&mut g, store, &s.block)?;
            let l = g.bce(p, &[S::lit(s.label as f64)], S::lit(BCE_EPS))?;
            Ok(g.value(l).data()[0].as_f64())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(parts.iter().sum::<f64>() / parts.len() as f64))
}

/// Trains the fusion head on cached features with every `modality/` tensor
/// frozen. The head's parameters are added to `store` under `aaf/`.
pub fn train_fusion_fold<S: Scalar>(
    store: &mut ParamStore<S>,
    train: &[FusionSample<S>],
    heldout: &[FusionSample<S>],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<FusionOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Empty(format!(" for fusion in fold {fold}")));
    }
    for m in Modality::ALL {
        if store.ids_with_prefix(&format!("modality/{}/", m.tag())).next().is_none() {
            return Err(TrainError::MissingCheckpoint(format!("pretrained {m} model for fold {fold}")));
        }
    }
    store.set_frozen("modality/", true);
    let tag = format!("fold{fold}/fusion");
    let aaf = AafModel::init(&cfg.aaf, store, &mut keyed_rng(cfg.seed, INIT_STREAM, &tag, 0, 0))?;
    let all: Vec<SampleRef> = (0..train.len()).map(|i| SampleRef { study: 0, epoch: i }).collect();
    let pick = |set: &[SampleRef], src: &[FusionSample<S>]| set.iter().map(|r| src[r.epoch].clone()).collect::<Vec<_>>();
    let eval_set = pick(&fixed_subset(&all, cfg.log_subset, cfg.seed, &format!("{tag}/train")), train);
    let held_all: Vec<SampleRef> = (0..heldout.len()).map(|i| SampleRef { study: 0, epoch: i }).collect();
    let held_set = pick(&fixed_subset(&held_all, cfg.log_subset, cfg.seed, &format!("{tag}/heldout")), heldout);

    let mut log = Vec::new();
    let push_eval = |log: &mut Vec<LogRow>, epoch: usize, store: &ParamStore<S>| -> Result<(), TensorError> {
        for (split, set) in [("eval", &eval_set), ("heldout", &held_set)] {
            let mut row = LogRow::new(epoch, split);
            row.fusion = fusion_bce(&aaf, store, set)?;
            log.push(row);
        }
        Ok(())
    };
    push_eval(&mut log, 0, store)?;
    let mut adam = AdamState::new(store);
    let mut step = 0u64;
    for pass in 0..cfg.fusion_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut keyed_rng(cfg.seed, SHUFFLE_STREAM, &tag, pass, 0));
        let (mut sum, mut seen) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let shared: &ParamStore<S> = store;
            let per_sample = batch
                .par_iter()
                .map(|&i| -> Result<(Grads<S>, f64), TensorError> {
                    let s = &train[i];
                    let mut g = Graph::new();
                    let p = aaf.forward(&mut g, shared, &s.block)?;
                    let l = g.bce(p, &[S::lit(s.label as f64)], S::lit(BCE_EPS))?;
                    g.backward(l)?;
                    let mut gr = Grads::for_store(shared);
                    g.accumulate_param_grads(&mut gr);
                    Ok((gr, g.value(l).data()[0].as_f64()))
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TrainError::Diverged(format!("fusion fold {fold} step {step}: {e}")))?;
            let mut grads = Grads::for_store(store);
            for (gr, l) in &per_sample {
                grads.merge(gr);
                sum += l;
            }
            seen += per_sample.len();
            grads.scale(S::one() / S::lit(batch.len() as f64));
            if let Some(c) = cfg.clip_norm {
                grads.clip_global_norm(S::lit(c));
            }
            adam_step(store, &grads, &mut adam, &cfg.fusion_adam);
            step += 1;
        }
        let mut row = LogRow::new(pass + 1, "train");
        row.fusion = Some(sum / seen as f64);
        log.push(row);
        push_eval(&mut log, pass + 1, store)?;
    }
    Ok(FusionOutcome { aaf, log, steps: step })
}
