use std::fmt;
use std::str::FromStr;

use super::EvalError;
use crate::corrupt::{noise_epoch_channels, omit_epoch_channels, CorruptError, CorruptionRecord};
use crate::epochs::EpochStudy;
use crate::modality::Modality;
use crate::scalar::Scalar;

/// Test-time condition: `clean`, `missing:ratio=R`, `noisy:snr=X[,chance=C]`,
/// `both:ratio=R,snr=X[,chance=C]` or `ablate:modalities=EOG+EEG`.
#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    Clean,
    Missing { ratio: f64 },
    Noisy { snr_db: f64, chance: f64 },
    Both { ratio: f64, snr_db: f64, chance: f64 },
    Ablate(Vec<Modality>),
}

impl Scenario {
    pub fn missing_ratio(&self) -> f64 {
        match self {
            Self::Missing { ratio } | Self::Both { ratio, .. } => *ratio,
            _ => 0.0,
        }
    }

    pub fn snr_db(&self) -> Option<f64> {
        match self {
            Self::Noisy { snr_db, .. } | Self::Both { snr_db, .. } => Some(*snr_db),
            _ => None,
        }
    }

    /// Corrupts `study` in place; noise precedes omission.
    pub fn apply<S: Scalar>(&self, study: &mut EpochStudy<S>, seed: u64) -> Result<Vec<CorruptionRecord>, CorruptError> {
        let mut log = Vec::new();
        match self {
            Self::Clean => {}
            Self::Missing { ratio } => omit_epoch_channels(study, *ratio, seed, &mut log)?,
            Self::Noisy { snr_db, chance } => noise_epoch_channels(study, *snr_db, *chance, seed, &mut log)?,
            Self::Both { ratio, snr_db, chance } => {
                noise_epoch_channels(study, *snr_db, *chance, seed, &mut log)?;
                omit_epoch_channels(study, *ratio, seed, &mut log)?;
            }
            Self::Ablate(ms) => ms.iter().for_each(|&m| study.zero_modality(m)),
        }
        Ok(log)
    }
}

fn chance_suffix(c: f64) -> String {
    if c == 1.0 {
        String::new()
    } else {
        format!(",chance={c}")
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Clean => write!(f, "clean"),
            Self::Missing { ratio } => write!(f, "missing:ratio={ratio}"),
            Self::Noisy { snr_db, chance } => write!(f, "noisy:snr={snr_db}{}", chance_suffix(*chance)),
            Self::Both { ratio, snr_db, chance } => write!(f, "both:ratio={ratio},snr={snr_db}{}", chance_suffix(*chance)),
            Self::Ablate(ms) => {
                let tags: Vec<&str> = ms.iter().map(|m| m.tag()).collect();
                write!(f, "ablate:modalities={}", tags.join("+"))
            }
        }
    }
}

impl FromStr for Scenario {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| EvalError::Scenario(format!("{s:?}: {why}"));
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = Vec::new();
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            kv.push((k.trim(), v.trim()));
        }
        let get = |key: &str| kv.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let num = |key: &str| -> Result<f64, EvalError> {
            let v = get(key).ok_or_else(|| bad(&format!("missing {key}")))?;
            let x: f64 = v.parse().map_err(|_| bad(&format!("{key} is not a number")))?;
            x.is_finite().then_some(x).ok_or_else(|| bad(&format!("{key} is not finite")))
        };
        let prob = |key: &str| -> Result<f64, EvalError> {
            let x = num(key)?;
            (0.0..=1.0).contains(&x).then_some(x).ok_or_else(|| bad(&format!("{key} outside [0, 1]")))
        };
        let chance = || if get("chance").is_some() { prob("chance") } else { Ok(1.0) };
        let allowed: &[&str] = match kind {
            "clean" => &[],
            "missing" => &["ratio"],
            "noisy" => &["snr", "chance"],
            "both" => &["ratio", "snr", "chance"],
            "ablate" => &["modalities"],
            _ => return Err(bad("unknown scenario kind")),
        };
        if let Some((k, _)) = kv.iter().find(|(k, _)| !allowed.contains(k)) {
            return Err(bad(&format!("unexpected key {k}")));
        }
        Ok(match kind {
            "clean" => Self::Clean,
            "missing" => Self::Missing { ratio: prob("ratio")? },
            "noisy" => Self::Noisy { snr_db: num("snr")?, chance: chance()? },
            "both" => Self::Both { ratio: prob("ratio")?, snr_db: num("snr")?, chance: chance()? },
            _ => {
                let list = get("modalities").ok_or_else(|| bad("missing modalities"))?;
                let ms = list
                    .split('+')
                    .map(|t| t.parse::<Modality>().map_err(|_| bad(&format!("unknown modality {t}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                Self::Ablate(ms)
            }
        })
    }
}
