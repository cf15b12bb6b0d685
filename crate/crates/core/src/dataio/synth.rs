use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, StudyBundle};
use crate::modality::Modality;
use crate::rngkey::keyed_rng;
use crate::sigprep::ChannelSeries;

const STUDY_STREAM: u64 = 0x5701;
const LABEL_STREAM: u64 = 0x1AB3;
const EPOCH_STREAM: u64 = 0xE90C;
const SIGNAL_STREAM: u64 = 0x51C0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub num_studies: usize,
    pub epochs_per_study: usize,
    pub apnea_rate: f64,
    pub seed: u64,
    pub separability: f64,
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.apnea_rate > 0.0 && self.apnea_rate < 1.0) {
            return Err(DataError::Param(format!("apnea_rate {} outside (0, 1)", self.apnea_rate)));
        }
        if !(self.separability.is_finite() && self.separability >= 0.0) {
            return Err(DataError::Param(format!("separability {}", self.separability)));
        }
        if self.epochs_per_study == 0 {
            return Err(DataError::Param("epochs_per_study must be positive".into()));
        }
        Ok(())
    }

    pub fn study_id(index: usize) -> String {
        format!("study{index:03}")
    }
}

pub fn native_rate(m: Modality) -> f64 {
    match m {
        Modality::Ecg => 256.0,
        Modality::Eeg => 128.0,
        Modality::Eog => 64.0,
        Modality::Spo2 => 1.0,
        Modality::Co2 => 64.0,
        Modality::Resp => 100.0,
    }
}

fn gauss(t: f64, c: f64, w: f64, a: f64) -> f64 {
    a * (-(t - c) * (t - c) / (2.0 * w * w)).exp()
}

/// One P-QRS-T complex centred on the R wave at `beat`.
fn beat_wave(t: f64, beat: f64) -> f64 {
    gauss(t, beat, 0.012, 1.0) + gauss(t, beat + 0.25, 0.04, 0.3) + gauss(t, beat - 0.16, 0.025, 0.12) - gauss(t, beat + 0.03, 0.01, 0.15)
}

fn render_ecg(beats: &[f64], n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            0.02 * Distribution::<f64>::sample(&StandardNormal, rng) + 0.1 * (2.0 * PI * 0.15 * t).sin()
        })
        .collect();
    for &b in beats {
        let lo = (((b - 0.5) * fs).floor().max(0.0)) as usize;
        let hi = (((b + 0.6) * fs).ceil() as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            *v += beat_wave(i as f64 / fs, b);
        }
    }
    x
}

/// Pulse-train ECG at a nominal rate with ±3% beat-to-beat jitter; returns samples and planted R times.
pub fn synth_ecg(bpm: f64, seconds: f64, fs: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = keyed_rng(seed, SIGNAL_STREAM, "ecg", 0, 0);
    let mut beats = Vec::new();
    let mut t = rng.random_range(0.3..0.8);
    while t < seconds - 0.4 {
        beats.push(t);
        t += 60.0 / bpm * rng.random_range(0.97..1.03);
    }
    let n = (seconds * fs).round() as usize;
    (render_ecg(&beats, n, fs, &mut rng), beats)
}

struct StudyTraits {
    hr_bpm: f64,
    resp_hz: f64,
    resp_amp: f64,
    spo2_base: f64,
    co2_level: f64,
    eeg_scale: f64,
    eog_scale: f64,
}

struct EpochTraits {
    apneic: bool,
    resp_amp: f64,
    resp_hz: f64,
    hr_bpm: f64,
    spo2_offset: f64,
    spo2_drop: f64,
    co2_level: f64,
}

fn ar2(n: usize, f0: f64, fs: f64, r: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (c1, c2) = (2.0 * r * (2.0 * PI * f0 / fs).cos(), -r * r);
    let (mut y1, mut y2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let e: f64 = StandardNormal.sample(rng);
        let y = c1 * y1 + c2 * y2 + e;
        y2 = y1;
        y1 = y;
        out.push(y);
    }
    out
}

fn normalize(mut v: Vec<f64>, scale: f64) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd * scale);
    v
}

/// One synthetic study. Apneic epochs carry whole-epoch signatures in RESP,
/// SpO2, CO2 and heart rate, scaled by `separability`; EEG and EOG carry none.
pub fn synth_study(p: &SynthParams, index: usize) -> Result<StudyBundle, DataError> {
    p.validate()?;
    let id = SynthParams::study_id(index);
    let sep = p.separability;
    let mut sr = keyed_rng(p.seed, STUDY_STREAM, &id, 0, 0);
    let traits = StudyTraits {
        hr_bpm: sr.random_range(55.0..85.0),
        resp_hz: sr.random_range(0.2..0.4),
        resp_amp: sr.random_range(0.8..1.2),
        spo2_base: sr.random_range(95.5..98.0),
        co2_level: sr.random_range(36.0..40.0),
        eeg_scale: sr.random_range(20.0..40.0),
        eog_scale: sr.random_range(50.0..100.0),
    };
    let epochs: Vec<EpochTraits> = (0..p.epochs_per_study)
        .map(|j| {
            let apneic = keyed_rng(p.seed, LABEL_STREAM, &id, j, 0).random_bool(p.apnea_rate);
            let mut r = keyed_rng(p.seed, EPOCH_STREAM, &id, j, 0);
            let (fa, fh, fr) = (r.random_range(0.85..1.15), r.random_range(0.95..1.05), r.random_range(0.92..1.08));
            let (so, sd, co) = (r.random_range(-0.5..0.5), r.random_range(3.0..6.0), r.random_range(-1.0..1.0));
            let s = if apneic { sep } else { 0.0 };
            EpochTraits {
                apneic,
                resp_amp: traits.resp_amp * fa * (1.0 - 0.7 * s).max(0.0),
                resp_hz: traits.resp_hz * fr,
                hr_bpm: traits.hr_bpm * fh * (1.0 - 0.15 * s).max(0.3),
                spo2_offset: so,
                spo2_drop: sd * s,
                co2_level: traits.co2_level + co + 6.0 * s,
            }
        })
        .collect();
    let seconds = 30.0 * p.epochs_per_study as f64;
    let epoch_of = |t: f64| ((t / 30.0) as usize).min(p.epochs_per_study - 1);
    let sig_rng = |slot: Modality| keyed_rng(p.seed, SIGNAL_STREAM, &id, 0, slot.index());

    let mut channels = Vec::new();
    for m in Modality::ALL {
        let fs = native_rate(m);
        let n = (seconds * fs).round() as usize;
        let mut rng = sig_rng(m);
        let samples: Vec<f64> = match m {
            Modality::Ecg => {
                let mut beats = Vec::new();
                let mut t = rng.random_range(0.3..0.8);
                while t < seconds - 0.4 {
                    beats.push(t);
                    t += 60.0 / epochs[epoch_of(t)].hr_bpm * rng.random_range(0.97..1.03);
                }
                render_ecg(&beats, n, fs, &mut rng)
            }
            Modality::Eeg => {
                let alpha = ar2(n, 10.0, fs, 0.97, &mut rng);
                let slow = ar2(n, 3.0, fs, 0.95, &mut rng);
                let mix: Vec<f64> = alpha.iter().zip(&slow).map(|(a, s)| a + 0.7 * s).collect();
                normalize(mix, traits.eeg_scale)
            }
            Modality::Eog => {
                let drift = ar2(n, 0.3, fs, 0.995, &mut rng);
                let mut v = normalize(drift, traits.eog_scale);
                let mut t = rng.random_range(1.0..6.0);
                while t < seconds {
                    let c = t;
                    let lo = ((c - 0.3) * fs).max(0.0) as usize;
                    let hi = (((c + 0.3) * fs) as usize).min(n);
                    for (i, x) in v.iter_mut().enumerate().take(hi).skip(lo) {
                        *x += gauss(i as f64 / fs, c, 0.08, 2.0 * traits.eog_scale);
                    }
                    t += rng.random_range(2.0..10.0);
                }
                v
            }
            Modality::Spo2 => (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    let e = &epochs[epoch_of(t)];
                    let within = (t - 30.0 * epoch_of(t) as f64) / 30.0;
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    (traits.spo2_base + e.spo2_offset - e.spo2_drop * within + 0.2 * noise).min(100.0)
                })
                .collect(),
            Modality::Resp | Modality::Co2 => {
                let mut phase = 0.0;
                (0..n)
                    .map(|i| {
                        let e = &epochs[epoch_of(i as f64 / fs)];
                        phase += 2.0 * PI * e.resp_hz / fs;
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        if m == Modality::Resp {
                            e.resp_amp * phase.sin() + 0.05 * noise
                        } else {
                            e.co2_level * 0.5 * (1.0 + (4.0 * phase.sin()).tanh()) + 0.3 * noise
                        }
                    })
                    .collect()
            }
        };
        let samples: Vec<f32> = samples.into_iter().map(|v| v as f32).collect();
        channels.push(ChannelSeries::new(samples, fs, m)?);
    }
    let labels = epochs.iter().map(|e| u8::from(e.apneic)).collect();
    Ok(StudyBundle { study_id: id, channels, labels })
}

pub fn synth_dataset(p: &SynthParams) -> Result<Vec<StudyBundle>, DataError> {
    (0..p.num_studies).map(|i| synth_study(p, i)).collect()
}
