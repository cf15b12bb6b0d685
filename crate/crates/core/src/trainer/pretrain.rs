use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::log::LogRow;
use super::{TrainConfig, TrainError, BCE_EPS};
use crate::epochs::EpochStudy;
use crate::modality::{Modality, NUM_MODALITIES};
use crate::nnblocks::ModalityModel;
use crate::rngkey::keyed_rng;
use crate::scalar::Scalar;
use crate::tensorgrad::{adam_step, AdamState, Grads, Graph, ParamStore, Tensor, TensorError, Var};

pub(crate) const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x50FF;
const DROPOUT_STREAM: u64 = 0xD0D0;
pub(crate) const SUBSET_STREAM: u64 = 0x5B5E;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub study: usize,
    pub epoch: usize,
}

pub struct PretrainOutcome<S> {
    /// Parameters of all six modality models.
    pub store: ParamStore<S>,
    pub models: Vec<ModalityModel>,
    pub log: Vec<LogRow>,
    pub steps: u64,
}

/// Gradients of one sample with its reconstruction and classification losses.
type SampleGrads<S> = (Grads<S>, Option<f64>, Option<f64>);

pub(crate) struct Losses {
    pub total: Var,
    pub recon: Option<Var>,
    pub cls: Option<Var>,
}

/// `α·MSE(x̂, x) + β·BCE(ŷ, y)` for one epoch. A zero weight leaves its
/// branch out of the graph entirely.
pub fn sample_loss<S: Scalar>(
    g: &mut Graph<S>,
    model: &ModalityModel,
    store: &ParamStore<S>,
    x: &[S],
    y: u8,
    alpha: f64,
    beta: f64,
) -> Result<Var, TensorError> {
    Ok(losses(g, model, store, x, y, alpha, beta)?.total)
}

pub(crate) fn losses<S: Scalar>(
    g: &mut Graph<S>,
    model: &ModalityModel,
    store: &ParamStore<S>,
    x: &[S],
    y: u8,
    alpha: f64,
    beta: f64,
) -> Result<Losses, TensorError> {
    let xv = g.constant(Tensor::vector(x.to_vec()))?;
    let z = model.encode(g, store, xv)?;
    let mut terms = Vec::new();
    let recon = if alpha > 0.0 {
        let xh = model.decode(g, store, z)?;
        let l = g.mse(xh, x)?;
        terms.push(g.scale(l, S::lit(alpha))?);
        Some(l)
    } else {
        None
    };
    let cls = if beta > 0.0 {
        let p = model.classify(g, store, z)?;
        let l = g.bce(p, &[S::lit(y as f64)], S::lit(BCE_EPS))?;
        terms.push(g.scale(l, S::lit(beta))?);
        Some(l)
    } else {
        None
    };
    let total = match terms.as_slice() {
        [] => return Err(TensorError::Contract("both loss weights are zero".into())),
        [t] => *t,
        [a, b] => g.add(*a, *b)?,
        _ => unreachable!(),
    };
    Ok(Losses { total, recon, cls })
}

/// Unweighted eval-mode reconstruction and classification losses, averaged.
fn eval_components<S: Scalar>(
    model: &ModalityModel,
    store: &ParamStore<S>,
    studies: &[&EpochStudy<S>],
    subset: &[SampleRef],
) -> Result<Option<(f64, f64)>, TensorError> {
    if subset.is_empty() {
        return Ok(None);
    }
    let m = model.modality;
    let parts = subset
        .par_iter()
        .map(|s| -> Result<(f64, f64), TensorError> {
            let st = studies[s.study];
            let mut g = Graph::new();
            let l = losses(&mut g, model, store, st.epoch(m, s.epoch), st.labels[s.epoch], 1.0, 1.0)?;
            let r = g.value(l.recon.expect("alpha > 0")).data()[0].as_f64();
            let c = g.value(l.cls.expect("beta > 0")).data()[0].as_f64();
            Ok((r, c))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = parts.len() as f64;
    Ok(Some((parts.iter().map(|p| p.0).sum::<f64>() / n, parts.iter().map(|p| p.1).sum::<f64>() / n)))
}

pub(crate) fn present_samples<S: Scalar>(studies: &[&EpochStudy<S>], m: Modality) -> Vec<SampleRef> {
    let mut v = Vec::new();
    for (si, s) in studies.iter().enumerate() {
        for j in 0..s.num_epochs() {
            if s.is_present(m, j) {
                v.push(SampleRef { study: si, epoch: j });
            }
        }
    }
    v
}

pub(crate) fn fixed_subset(all: &[SampleRef], n: usize, seed: u64, tag: &str) -> Vec<SampleRef> {
    let mut v = all.to_vec();
    v.shuffle(&mut keyed_rng(seed, SUBSET_STREAM, tag, 0, 0));
    v.truncate(n);
    v
}

/// Per-pass curve of one modality: `(recon, cls)` per split.
pub(crate) struct Curve {
    pub train: Vec<(Option<f64>, Option<f64>)>,
    pub eval: Vec<Option<(f64, f64)>>,
    pub heldout: Vec<Option<(f64, f64)>>,
}

/// Trains one modality model on every epoch where that channel is present.
pub fn pretrain_modality<S: Scalar>(
    m: Modality,
    train: &[&EpochStudy<S>],
    heldout: &[&EpochStudy<S>],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<(ParamStore<S>, ModalityModel, u64), TrainError> {
    let (store, model, steps, _) = pretrain_modality_logged(m, train, heldout, cfg, fold)?;
    Ok((store, model, steps))
}

pub(crate) fn pretrain_modality_logged<S: Scalar>(
    m: Modality,
    train: &[&EpochStudy<S>],
    heldout: &[&EpochStudy<S>],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<(ParamStore<S>, ModalityModel, u64, Curve), TrainError> {
    cfg.validate()?;
    let tag = format!("fold{fold}/{}", m.tag());
    let mut store = ParamStore::new();
    let model = ModalityModel::init(&cfg.model, m, &mut store, &mut keyed_rng(cfg.seed, INIT_STREAM, &tag, 0, m.index()))?;
    let samples = present_samples(train, m);
    if samples.is_empty() {
        return Err(TrainError::Empty(format!(" for {m} in fold {fold}")));
    }
    let (alpha, beta) = (cfg.alpha_of(m), cfg.beta_of(m));
    let eval_set = fixed_subset(&samples, cfg.log_subset, cfg.seed, &format!("{tag}/train"));
    let held_set = fixed_subset(&present_samples(heldout, m), cfg.log_subset, cfg.seed, &format!("{tag}/heldout"));
    let mut curve = Curve {
        train: Vec::new(),
        eval: vec![eval_components(&model, &store, train, &eval_set)?],
        heldout: vec![eval_components(&model, &store, heldout, &held_set)?],
    };
    let mut adam = AdamState::new(&store);
    let mut step: u64 = 0;
    let trains = alpha > 0.0 || beta > 0.0;
    for pass in 0..cfg.epochs {
        let mut order = samples.clone();
        order.shuffle(&mut keyed_rng(cfg.seed, SHUFFLE_STREAM, &tag, pass, 0));
        if let Some(cap) = cfg.samples_per_epoch {
            order.truncate(cap.max(1));
        }
        let (mut sum_r, mut sum_c, mut seen) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if !trains {
                break;
            }
            let per_sample = batch
                .par_iter()
                .enumerate()
                .map(|(k, s)| -> Result<SampleGrads<S>, TensorError> {
                    let st = train[s.study];
                    let mut g = Graph::training(keyed_rng(cfg.seed, DROPOUT_STREAM, &tag, step as usize, k));
                    let l = losses(&mut g, &model, &store, st.epoch(m, s.epoch), st.labels[s.epoch], alpha, beta)?;
                    g.backward(l.total)?;
                    let mut gr = Grads::for_store(&store);
                    g.accumulate_param_grads(&mut gr);
                    let val = |v: Option<Var>| v.map(|v| g.value(v).data()[0].as_f64());
                    Ok((gr, val(l.recon), val(l.cls)))
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TrainError::Diverged(format!("{m} fold {fold} step {step}: {e}")))?;
            let mut grads = Grads::for_store(&store);
            for (gr, r, c) in &per_sample {
                grads.merge(gr);
                sum_r += r.unwrap_or(0.0);
                sum_c += c.unwrap_or(0.0);
            }
            seen += per_sample.len();
            grads.scale(S::one() / S::lit(batch.len() as f64));
            if !grads.global_norm().is_finite() {
                return Err(TrainError::Diverged(format!("{m} fold {fold} step {step}: non-finite gradient")));
            }
            if let Some(c) = cfg.clip_norm {
                grads.clip_global_norm(S::lit(c));
            }
            adam_step(&mut store, &grads, &mut adam, &cfg.adam);
            step += 1;
        }
        let avg = |s: f64, on: bool| (on && seen > 0).then(|| s / seen as f64);
        curve.train.push((avg(sum_r, alpha > 0.0), avg(sum_c, beta > 0.0)));
        curve.eval.push(eval_components(&model, &store, train, &eval_set)?);
        curve.heldout.push(eval_components(&model, &store, heldout, &held_set)?);
    }
    Ok((store, model, step, curve))
}

/// Pretrains all six modality models of one fold.
pub fn pretrain_fold<S: Scalar>(
    train: &[&EpochStudy<S>],
    heldout: &[&EpochStudy<S>],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<PretrainOutcome<S>, TrainError> {
    let mut store = ParamStore::new();
    let mut curves = Vec::new();
    let mut steps = 0;
    for m in Modality::ALL {
        let (s, _, n, curve) = pretrain_modality_logged(m, train, heldout, cfg, fold)?;
        store.merge(s)?;
        curves.push(curve);
        steps += n;
    }
    let models = Modality::ALL.iter().map(|&m| ModalityModel::bind(&cfg.model, m, &store)).collect::<Result<Vec<_>, _>>()?;
    let mut log = Vec::new();
    for epoch in 0..=cfg.epochs {
        if epoch > 0 {
            let mut row = LogRow::new(epoch, "train");
            for (k, c) in curves.iter().enumerate() {
                (row.recon[k], row.cls[k]) = c.train[epoch - 1];
            }
            log.push(row);
        }
        for (split, pick) in [("eval", 0), ("heldout", 1)] {
            let mut row = LogRow::new(epoch, split);
            for (k, c) in curves.iter().enumerate().take(NUM_MODALITIES) {
                let v = if pick == 0 { c.eval[epoch] } else { c.heldout[epoch] };
                if let Some((r, cl)) = v {
                    row.recon[k] = Some(r);
                    row.cls[k] = Some(cl);
                }
            }
            log.push(row);
        }
    }
    Ok(PretrainOutcome { store, models, log, steps })
}
