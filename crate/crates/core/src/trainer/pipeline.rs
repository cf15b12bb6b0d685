use super::layout::{load_fold, load_plan, save_fusion, save_plan, save_unimodal, Layout};
use super::log::write_log_csv;
use super::{extract_features, pretrain_fold, train_fusion_fold, TrainConfig, TrainError};
use crate::dataio::{make_folds, FoldPlan};
use crate::epochs::EpochStudy;
use crate::scalar::Scalar;

/// Studies whose ids appear in `ids`, in `ids` order.
pub fn select<'a, S>(studies: &'a [EpochStudy<S>], ids: &[String]) -> Result<Vec<&'a EpochStudy<S>>, TrainError> {
    ids.iter()
        .map(|id| {
            studies
                .iter()
                .find(|s| &s.study_id == id)
                .ok_or_else(|| TrainError::Config(format!("study {id} from the fold plan is not in the dataset")))
        })
        .collect()
}

pub fn plan_for<S>(studies: &[EpochStudy<S>], cfg: &TrainConfig) -> Result<FoldPlan, TrainError> {
    let ids: Vec<String> = studies.iter().map(|s| s.study_id.clone()).collect();
    Ok(make_folds(&ids, cfg.folds, cfg.seed)?)
}

/// Step one over every fold: writes `config.json`, `folds.json` and each
/// fold's unimodal checkpoint and log under `out`.
pub fn run_pretrain<S: Scalar>(studies: &[EpochStudy<S>], cfg: &TrainConfig, out: &Layout) -> Result<FoldPlan, TrainError> {
    cfg.validate()?;
    let plan = plan_for(studies, cfg)?;
    out.write_config(cfg)?;
    save_plan(out, &plan)?;
    for fold in 0..plan.k {
        let train = select(studies, &plan.train_ids(fold))?;
        let test = select(studies, &plan.test_ids(fold))?;
        let res = pretrain_fold(&train, &test, cfg, fold)?;
        save_unimodal(out, fold, &res.store, res.steps, cfg)?;
        write_log_csv(&out.pretrain_log(fold), &res.log)?;
    }
    Ok(plan)
}

/// Step two over every fold. `out` receives the configuration, the fold plan,
/// the unchanged unimodal checkpoints and the fusion checkpoints.
pub fn run_fusion<S: Scalar>(studies: &[EpochStudy<S>], pretrained: &Layout, out: &Layout) -> Result<(), TrainError> {
    let cfg = pretrained.read_config()?;
    let plan = load_plan(pretrained)?;
    out.write_config(&cfg)?;
    save_plan(out, &plan)?;
    for fold in 0..plan.k {
        let train = select(studies, &plan.train_ids(fold))?;
        let test = select(studies, &plan.test_ids(fold))?;
        let mut fm = load_fold::<S>(pretrained, fold, &cfg, false)?;
        let tr = extract_features(&fm.models, &fm.store, &train, &cfg)?;
        let he = extract_features(&fm.models, &fm.store, &test, &cfg)?;
        let res = train_fusion_fold(&mut fm.store, &tr, &he, &cfg, fold)?;
        save_unimodal(out, fold, &fm.store, fm.unimodal_step, &cfg)?;
        save_fusion(out, fold, &fm.store, res.steps, &cfg)?;
        write_log_csv(&out.fusion_log(fold), &res.log)?;
    }
    Ok(())
}
