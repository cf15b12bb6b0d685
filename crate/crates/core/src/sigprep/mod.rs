//! Resampling, epoch segmentation, zero-phase filtering and R-peak extraction.

mod filters;
mod rpeaks;

pub use filters::{bandpass_ecg, butterworth_highpass, butterworth_lowpass, filtfilt, highpass_filter, notch, notch_filter, Biquad};
pub use rpeaks::{amplitude_step_series, hamilton_rpeaks, rr_step_series, RPeakSet};

use serde::{Deserialize, Serialize};

use crate::modality::Modality;
use crate::scalar::Scalar;

/// Model input rate.
pub const TARGET_HZ: f64 = 128.0;
pub const EPOCH_SECONDS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SigprepError {
    #[error("empty signal")]
    Empty,
    #[error("invalid sampling rate {0}")]
    Rate(f64),
    #[error("invalid cutoff: {0}")]
    Cutoff(String),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSeries<S> {
    pub samples: Vec<S>,
    pub sampling_rate_hz: f64,
    pub modality: Modality,
}

impl<S: Scalar> ChannelSeries<S> {
    pub fn new(samples: Vec<S>, sampling_rate_hz: f64, modality: Modality) -> Result<Self, SigprepError> {
        if !(sampling_rate_hz.is_finite() && sampling_rate_hz > 0.0) {
            return Err(SigprepError::Rate(sampling_rate_hz));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SigprepError::NonFinite(i));
        }
        Ok(Self { samples, sampling_rate_hz, modality })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate_hz
    }

    pub fn with_samples(&self, samples: Vec<S>) -> Self {
        Self { samples, sampling_rate_hz: self.sampling_rate_hz, modality: self.modality }
    }
}

/// Linear interpolation onto a uniform grid at `target_hz` covering the same duration.
pub fn resample<S: Scalar>(s: &ChannelSeries<S>, target_hz: f64) -> Result<ChannelSeries<S>, SigprepError> {
    if s.samples.is_empty() {
        return Err(SigprepError::Empty);
    }
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(SigprepError::Rate(target_hz));
    }
    if target_hz == s.sampling_rate_hz {
        return Ok(s.clone());
    }
    let n = s.samples.len();
    let n_out = ((n as f64 * target_hz / s.sampling_rate_hz).round() as usize).max(1);
    let step = s.sampling_rate_hz / target_hz;
    let out = (0..n_out)
        .map(|k| {
            let pos = k as f64 * step;
            let i = pos.floor() as usize;
            if i + 1 >= n {
                return s.samples[n - 1];
            }
            let frac = S::lit(pos - i as f64);
            s.samples[i] + (s.samples[i + 1] - s.samples[i]) * frac
        })
        .collect();
    Ok(ChannelSeries { samples: out, sampling_rate_hz: target_hz, modality: s.modality })
}

/// Non-overlapping epochs; the trailing partial epoch is dropped.
pub fn segment_epochs<S: Scalar>(s: &ChannelSeries<S>, epoch_seconds: f64) -> Result<Vec<Vec<S>>, SigprepError> {
    let len = s.sampling_rate_hz * epoch_seconds;
    if !(len >= 1.0 && (len - len.round()).abs() < 1e-9) {
        return Err(SigprepError::Rate(s.sampling_rate_hz));
    }
    Ok(s.samples.chunks_exact(len.round() as usize).map(<[S]>::to_vec).collect())
}
