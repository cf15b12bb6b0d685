use serde::{Deserialize, Serialize};

use super::{DataError, StudyBundle};
use crate::epochs::EpochStudy;
use crate::modality::Modality;
use crate::scalar::Scalar;
use crate::sigprep::{
    bandpass_ecg, hamilton_rpeaks, highpass_filter, notch_filter, resample, rr_step_series, segment_epochs, ChannelSeries, EPOCH_SECONDS,
    TARGET_HZ,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcgInput {
    #[default]
    Waveform,
    RrSeries,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub ecg_low_hz: f64,
    pub ecg_high_hz: f64,
    pub ecg_input: EcgInput,
    /// Applied to ECG, EEG and EOG when set.
    pub notch_hz: Option<f64>,
    pub notch_q: f64,
    pub highpass_hz: Option<f64>,
    pub zscore: bool,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            ecg_low_hz: 3.0,
            ecg_high_hz: 45.0,
            ecg_input: EcgInput::Waveform,
            notch_hz: None,
            notch_q: 30.0,
            highpass_hz: None,
            zscore: true,
        }
    }
}

/// Zero-mean unit-variance in place; constant channels become zero.
pub fn zscore(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= 1e-9 * mean.abs().max(1.0) {
        x.iter_mut().for_each(|v| *v = 0.0);
    } else {
        x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
}

fn condition(c: &ChannelSeries<f32>, opts: &PrepareOptions) -> Result<Vec<f64>, DataError> {
    let raw = ChannelSeries::new(c.samples.iter().map(|&v| v as f64).collect(), c.sampling_rate_hz, c.modality)?;
    let mut s = resample(&raw, TARGET_HZ)?;
    let electro = matches!(c.modality, Modality::Ecg | Modality::Eeg | Modality::Eog);
    if electro {
        if let Some(f0) = opts.notch_hz {
            s = notch_filter(&s, f0, opts.notch_q)?;
        }
        if let Some(fc) = opts.highpass_hz {
            s = highpass_filter(&s, fc)?;
        }
    }
    if c.modality == Modality::Ecg {
        s = bandpass_ecg(&s, opts.ecg_low_hz, opts.ecg_high_hz)?;
        if opts.ecg_input == EcgInput::RrSeries {
            let peaks = hamilton_rpeaks(&s);
            s = s.with_samples(rr_step_series(&peaks, s.samples.len()));
        }
    }
    let mut v = s.samples;
    if opts.zscore {
        zscore(&mut v);
    }
    Ok(v)
}

/// Resample to 128 Hz, condition, normalize and cut into 30 s epochs.
/// Modalities missing from the bundle become all-zero (absent) channels.
pub fn prepare_study<S: Scalar>(bundle: &StudyBundle, opts: &PrepareOptions) -> Result<EpochStudy<S>, DataError> {
    let epoch_len = (TARGET_HZ * EPOCH_SECONDS) as usize;
    let mut conditioned: Vec<Option<Vec<f64>>> = vec![None; Modality::ALL.len()];
    for c in &bundle.channels {
        conditioned[c.modality.index()] = Some(condition(c, opts)?);
    }
    let available = conditioned.iter().flatten().map(|v| v.len() / epoch_len).min().unwrap_or(0);
    let n = bundle.labels.len().min(available);
    let mut study = EpochStudy::zeros(&bundle.study_id, epoch_len, bundle.labels[..n].to_vec());
    for (slot, c) in conditioned.into_iter().enumerate() {
        if let Some(v) = c {
            study.channels[slot] = v[..n * epoch_len].iter().map(|&x| S::lit(x)).collect();
        }
    }
    Ok(study)
}

/// A prepared study in bundle form: every channel at 128 Hz.
pub fn bundle_from_epochs<S: Scalar>(study: &EpochStudy<S>) -> StudyBundle {
    let channels = Modality::ALL
        .iter()
        .map(|&m| ChannelSeries {
            samples: study.channels[m.index()].iter().map(|v| v.as_f64() as f32).collect(),
            sampling_rate_hz: TARGET_HZ,
            modality: m,
        })
        .collect();
    StudyBundle { study_id: study.study_id.clone(), channels, labels: study.labels.clone() }
}

/// Reads a prepared bundle back into epochs; channels must already be at 128 Hz.
pub fn epochs_from_bundle<S: Scalar>(bundle: &StudyBundle) -> Result<EpochStudy<S>, DataError> {
    let epoch_len = (TARGET_HZ * EPOCH_SECONDS) as usize;
    let mut study = EpochStudy::zeros(&bundle.study_id, epoch_len, bundle.labels.clone());
    let n = bundle.labels.len();
    for c in &bundle.channels {
        if c.sampling_rate_hz != TARGET_HZ {
            return Err(DataError::Param(format!("{} is at {} Hz; run prepare first", c.modality, c.sampling_rate_hz)));
        }
        let epochs = segment_epochs(c, EPOCH_SECONDS)?;
        if epochs.len() < n {
            return Err(DataError::LengthMismatch { channel: c.modality.tag().into(), expected: n * epoch_len, actual: c.samples.len() });
        }
        study.channels[c.modality.index()] = epochs[..n].concat().into_iter().map(|v| S::lit(v as f64)).collect();
    }
    Ok(study)
}
