//! Random epoch-channel omission and SNR-targeted white Gaussian noise.

use std::io::Write;
use std::path::Path;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::epochs::EpochStudy;
use crate::modality::Modality;
use crate::rngkey::keyed_rng;
use crate::scalar::Scalar;

const OMIT_STREAM: u64 = 0x0417;
const NOISE_STREAM: u64 = 0x2A61;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionMode {
    Omit,
    Noise,
    Both,
}

impl std::str::FromStr for CorruptionMode {
    type Err = CorruptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "omit" => Ok(Self::Omit),
            "noise" => Ok(Self::Noise),
            "both" => Ok(Self::Both),
            _ => Err(CorruptError::Mode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorruptError {
    #[error("{name} = {value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("target SNR {0} dB is not finite")]
    Snr(f64),
    #[error("unknown corruption mode {0:?}")]
    Mode(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub mode: CorruptionMode,
    pub omission_ratio: f64,
    pub target_snr_db: f64,
    pub noise_occurrence_chance: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn omit(ratio: f64, seed: u64) -> Self {
        Self { mode: CorruptionMode::Omit, omission_ratio: ratio, target_snr_db: f64::INFINITY, noise_occurrence_chance: 0.0, seed }
    }

    pub fn noise(snr_db: f64, chance: f64, seed: u64) -> Self {
        Self { mode: CorruptionMode::Noise, omission_ratio: 0.0, target_snr_db: snr_db, noise_occurrence_chance: chance, seed }
    }

    pub fn both(ratio: f64, snr_db: f64, chance: f64, seed: u64) -> Self {
        Self { mode: CorruptionMode::Both, omission_ratio: ratio, target_snr_db: snr_db, noise_occurrence_chance: chance, seed }
    }

    pub fn validate(&self) -> Result<(), CorruptError> {
        check_prob("omission_ratio", self.omission_ratio)?;
        if self.mode != CorruptionMode::Omit {
            check_prob("noise_occurrence_chance", self.noise_occurrence_chance)?;
            if !self.target_snr_db.is_finite() {
                return Err(CorruptError::Snr(self.target_snr_db));
            }
        }
        Ok(())
    }
}

fn check_prob(name: &'static str, value: f64) -> Result<(), CorruptError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(CorruptError::Probability { name, value })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Omit,
    Noise,
    SkipZeroPower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub study_id: String,
    pub epoch_index: usize,
    pub modality: Modality,
    pub action: Action,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub snr_db: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AwgnOutcome {
    Added { noise_std: f64 },
    NotDrawn,
    ZeroPower,
}

pub fn average_power<S: Scalar>(x: &[S]) -> f64 {
    x.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / x.len() as f64
}

/// Noise standard deviation reaching `target_snr_db` against average power `p`.
pub fn noise_std_for(p: f64, target_snr_db: f64) -> f64 {
    let p_db = 10.0 * p.log10();
    let n_db = p_db - target_snr_db;
    10f64.powf(n_db / 10.0).sqrt()
}

/// Adds i.i.d. Gaussian noise at the target SNR with probability `chance`.
pub fn add_awgn<S: Scalar>(x: &mut [S], target_snr_db: f64, chance: f64, rng: &mut impl Rng) -> AwgnOutcome {
    let u: f64 = rng.random();
    if u >= chance || x.is_empty() {
        return AwgnOutcome::NotDrawn;
    }
    let p = average_power(x);
    if p == 0.0 {
        return AwgnOutcome::ZeroPower;
    }
    let std = noise_std_for(p, target_snr_db);
    let normal = Normal::new(0.0, std).expect("finite std");
    for v in x.iter_mut() {
        *v += S::lit(normal.sample(rng));
    }
    AwgnOutcome::Added { noise_std: std }
}

/// Zeroes each epoch-channel independently when a uniform draw in (0, 1) is ≤ `ratio`.
pub fn omit_epoch_channels<S: Scalar>(
    study: &mut EpochStudy<S>,
    ratio: f64,
    seed: u64,
    log: &mut Vec<CorruptionRecord>,
) -> Result<(), CorruptError> {
    check_prob("omission_ratio", ratio)?;
    for j in 0..study.num_epochs() {
        for m in Modality::ALL {
            let rnd: f64 = keyed_rng(seed, OMIT_STREAM, &study.study_id, j, m.index()).sample(Open01);
            if rnd <= ratio {
                study.epoch_mut(m, j).iter_mut().for_each(|v| *v = S::zero());
                log.push(CorruptionRecord {
                    study_id: study.study_id.clone(),
                    epoch_index: j,
                    modality: m,
                    action: Action::Omit,
                    snr_db: None,
                });
            }
        }
    }
    Ok(())
}

pub fn noise_epoch_channels<S: Scalar>(
    study: &mut EpochStudy<S>,
    target_snr_db: f64,
    chance: f64,
    seed: u64,
    log: &mut Vec<CorruptionRecord>,
) -> Result<(), CorruptError> {
    check_prob("noise_occurrence_chance", chance)?;
    if !target_snr_db.is_finite() {
        return Err(CorruptError::Snr(target_snr_db));
    }
    let id = study.study_id.clone();
    for j in 0..study.num_epochs() {
        for m in Modality::ALL {
            let mut rng = keyed_rng(seed, NOISE_STREAM, &id, j, m.index());
            let action = match add_awgn(study.epoch_mut(m, j), target_snr_db, chance, &mut rng) {
                AwgnOutcome::Added { .. } => Action::Noise,
                AwgnOutcome::ZeroPower => Action::SkipZeroPower,
                AwgnOutcome::NotDrawn => continue,
            };
            log.push(CorruptionRecord { study_id: id.clone(), epoch_index: j, modality: m, action, snr_db: Some(target_snr_db) });
        }
    }
    Ok(())
}

/// Applies `spec` in place. In `Both` mode noise is added first, so omitted channels stay exactly zero.
pub fn corrupt_study<S: Scalar>(
    study: &mut EpochStudy<S>,
    spec: &CorruptionSpec,
    log: &mut Vec<CorruptionRecord>,
) -> Result<(), CorruptError> {
    spec.validate()?;
    match spec.mode {
        CorruptionMode::Omit => omit_epoch_channels(study, spec.omission_ratio, spec.seed, log),
        CorruptionMode::Noise => noise_epoch_channels(study, spec.target_snr_db, spec.noise_occurrence_chance, spec.seed, log),
        CorruptionMode::Both => {
            noise_epoch_channels(study, spec.target_snr_db, spec.noise_occurrence_chance, spec.seed, log)?;
            omit_epoch_channels(study, spec.omission_ratio, spec.seed, log)
        }
    }
}

pub fn write_log(path: &Path, records: &[CorruptionRecord]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}
