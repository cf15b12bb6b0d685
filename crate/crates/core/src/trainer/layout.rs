use std::fs;
use std::path::{Path, PathBuf};

use super::{TrainConfig, TrainError};
use crate::aaf::AafModel;
use crate::dataio::FoldPlan;
use crate::modality::Modality;
use crate::nnblocks::ModalityModel;
use crate::scalar::Scalar;
use crate::tensorgrad::checkpoint::{self, write_atomic};
use crate::tensorgrad::ParamStore;

/// Checkpoint directory: `config.json`, `folds.json` and per-fold
/// `fold<k>/unimodal.{json,bin}`, `fold<k>/fusion.{json,bin}` and the
/// per-fold training logs.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn plan_path(&self) -> PathBuf {
        self.root.join("folds.json")
    }

    pub fn fold_dir(&self, fold: usize) -> PathBuf {
        self.root.join(format!("fold{fold}"))
    }

    pub fn unimodal_stem(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("unimodal")
    }

    pub fn fusion_stem(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("fusion")
    }

    pub fn pretrain_log(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("pretrain_log.csv")
    }

    pub fn fusion_log(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("fusion_log.csv")
    }

    pub fn write_config(&self, cfg: &TrainConfig) -> Result<(), TrainError> {
        fs::create_dir_all(&self.root)?;
        write_atomic(&self.config_path(), &json_bytes(cfg)?)?;
        Ok(())
    }

    pub fn read_config(&self) -> Result<TrainConfig, TrainError> {
        let p = self.config_path();
        let bytes = fs::read(&p).map_err(|_| TrainError::MissingCheckpoint(p.display().to_string()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Result<Vec<u8>, TrainError> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

pub fn save_plan(layout: &Layout, plan: &FoldPlan) -> Result<(), TrainError> {
    fs::create_dir_all(&layout.root)?;
    write_atomic(&layout.plan_path(), &json_bytes(plan)?)?;
    Ok(())
}

pub fn load_plan(layout: &Layout) -> Result<FoldPlan, TrainError> {
    let p = layout.plan_path();
    let bytes = fs::read(&p).map_err(|_| TrainError::MissingCheckpoint(p.display().to_string()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn ensure_dir(stem: &Path) -> Result<(), TrainError> {
    if let Some(d) = stem.parent() {
        fs::create_dir_all(d)?;
    }
    Ok(())
}

/// Writes the `modality/` tensors of `store` with their frozen flags cleared.
pub fn save_unimodal<S: Scalar>(
    layout: &Layout,
    fold: usize,
    store: &ParamStore<S>,
    step: u64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    let stem = layout.unimodal_stem(fold);
    ensure_dir(&stem)?;
    let mut part = store.subset("modality/");
    part.set_frozen("modality/", false);
    checkpoint::save(&part, step, serde_json::to_value(cfg)?, &stem)?;
    Ok(())
}

pub fn save_fusion<S: Scalar>(layout: &Layout, fold: usize, store: &ParamStore<S>, step: u64, cfg: &TrainConfig) -> Result<(), TrainError> {
    let stem = layout.fusion_stem(fold);
    ensure_dir(&stem)?;
    checkpoint::save(&store.subset("aaf/"), step, serde_json::to_value(cfg)?, &stem)?;
    Ok(())
}

/// Parameters and model handles restored from one fold's checkpoints.
pub struct FoldModels<S> {
    pub store: ParamStore<S>,
    pub models: Vec<ModalityModel>,
    pub aaf: Option<AafModel>,
    pub unimodal_step: u64,
}

pub fn load_fold<S: Scalar>(layout: &Layout, fold: usize, cfg: &TrainConfig, with_fusion: bool) -> Result<FoldModels<S>, TrainError> {
    let stem = layout.unimodal_stem(fold);
    if !checkpoint::manifest_path(&stem).is_file() {
        return Err(TrainError::MissingCheckpoint(stem.display().to_string()));
    }
    let (mut store, manifest) = checkpoint::load::<S>(&stem)?;
    let aaf = if with_fusion {
        let fstem = layout.fusion_stem(fold);
        if !checkpoint::manifest_path(&fstem).is_file() {
            return Err(TrainError::MissingCheckpoint(fstem.display().to_string()));
        }
        let (fstore, _) = checkpoint::load::<S>(&fstem)?;
        store.merge(fstore)?;
        Some(AafModel::bind(&cfg.aaf, &store)?)
    } else {
        None
    };
    let models = Modality::ALL
        .iter()
        .map(|&m| ModalityModel::bind(&cfg.model, m, &store))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| TrainError::MissingCheckpoint(format!("{}: {e}", stem.display())))?;
    Ok(FoldModels { store, models, aaf, unimodal_step: manifest.step })
}
