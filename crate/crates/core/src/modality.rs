use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The six PSG signal types, in slot order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "ECG")]
    Ecg,
    #[serde(rename = "EEG")]
    Eeg,
    #[serde(rename = "EOG")]
    Eog,
    #[serde(rename = "SPO2")]
    Spo2,
    #[serde(rename = "CO2")]
    Co2,
    #[serde(rename = "RESP")]
    Resp,
}

pub const NUM_MODALITIES: usize = 6;

impl Modality {
    pub const ALL: [Modality; NUM_MODALITIES] =
        [Modality::Ecg, Modality::Eeg, Modality::Eog, Modality::Spo2, Modality::Co2, Modality::Resp];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Ecg => "ECG",
            Modality::Eeg => "EEG",
            Modality::Eog => "EOG",
            Modality::Spo2 => "SPO2",
            Modality::Co2 => "CO2",
            Modality::Resp => "RESP",
        }
    }

    /// Slot position in latent/anomaly blocks.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&m| m == self).expect("listed")
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown modality tag {0:?}")]
pub struct UnknownModality(pub String);

impl FromStr for Modality {
    type Err = UnknownModality;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        match up.as_str() {
            "ECG" => Ok(Modality::Ecg),
            "EEG" => Ok(Modality::Eeg),
            "EOG" => Ok(Modality::Eog),
            "SPO2" => Ok(Modality::Spo2),
            "CO2" => Ok(Modality::Co2),
            "RESP" => Ok(Modality::Resp),
            _ => Err(UnknownModality(s.to_string())),
        }
    }
}
