use std::f64::consts::PI;

use super::{ChannelSeries, SigprepError};
use crate::scalar::Scalar;

/// Normalized second-order section `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn from_raw(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Self { b: [b[0] / a0, b[1] / a0, b[2] / a0], a: [a1 / a0, a2 / a0] }
    }

    pub fn lowpass(fc: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (c, alpha) = (w0.cos(), w0.sin() / (2.0 * q));
        Self::from_raw([(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn highpass(fc: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (c, alpha) = (w0.cos(), w0.sin() / (2.0 * q));
        Self::from_raw([(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn notch(f0: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (c, alpha) = (w0.cos(), w0.sin() / (2.0 * q));
        Self::from_raw([1.0, -2.0 * c, 1.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    /// Gain at DC.
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Magnitude response at `f` Hz.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        let nr = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let ni = -(self.b[1] * s1 + self.b[2] * s2);
        let dr = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let di = -(self.a[0] * s1 + self.a[1] * s2);
        ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
    }

    /// Transposed direct-form II state that holds for a constant unit input.
    fn steady_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }
}

fn butterworth_qs(order: usize) -> Vec<f64> {
    (1..=order / 2).map(|k| 1.0 / (2.0 * ((2 * k - 1) as f64 * PI / (2 * order) as f64).cos())).collect()
}

/// Even-order Butterworth low-pass as cascaded sections.
pub fn butterworth_lowpass(order: usize, fc: f64, fs: f64) -> Vec<Biquad> {
    butterworth_qs(order).into_iter().map(|q| Biquad::lowpass(fc, fs, q)).collect()
}

pub fn butterworth_highpass(order: usize, fc: f64, fs: f64) -> Vec<Biquad> {
    butterworth_qs(order).into_iter().map(|q| Biquad::highpass(fc, fs, q)).collect()
}

pub fn notch(f0: f64, fs: f64, q: f64) -> Vec<Biquad> {
    vec![Biquad::notch(f0, fs, q)]
}

fn sosfilt<S: Scalar>(sos: &[Biquad], x: &mut [S], x0: S) {
    let mut scale = 1.0;
    for sec in sos {
        let zi = sec.steady_state();
        let (b0, b1, b2) = (S::lit(sec.b[0]), S::lit(sec.b[1]), S::lit(sec.b[2]));
        let (a1, a2) = (S::lit(sec.a[0]), S::lit(sec.a[1]));
        let lead = x0 * S::lit(scale);
        let (mut z1, mut z2) = (S::lit(zi[0]) * lead, S::lit(zi[1]) * lead);
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
        scale *= sec.dc_gain();
    }
}

/// Forward-backward application of cascaded sections with odd-reflection
/// padding and steady-state initial conditions.
pub fn filtfilt<S: Scalar>(sos: &[Biquad], x: &[S]) -> Vec<S> {
    let n = x.len();
    if n == 0 || sos.is_empty() {
        return x.to_vec();
    }
    let pad = (3 * (2 * sos.len() + 1)).min(n - 1);
    let two = S::lit(2.0);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| two * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| two * x[n - 1] - x[n - 1 - i]));

    let first = ext[0];
    sosfilt(sos, &mut ext, first);
    ext.reverse();
    let first = ext[0];
    sosfilt(sos, &mut ext, first);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

fn check_band(f: f64, fs: f64, what: &str) -> Result<(), SigprepError> {
    if f.is_finite() && f > 0.0 && f < fs / 2.0 {
        Ok(())
    } else {
        Err(SigprepError::Cutoff(format!("{what} {f} Hz outside (0, {})", fs / 2.0)))
    }
}

/// Order-4 Butterworth high-pass at `low` cascaded with order-4 low-pass at `high`, zero phase.
pub fn bandpass_ecg<S: Scalar>(s: &ChannelSeries<S>, low: f64, high: f64) -> Result<ChannelSeries<S>, SigprepError> {
    let fs = s.sampling_rate_hz;
    check_band(low, fs, "low cutoff")?;
    check_band(high, fs, "high cutoff")?;
    if low >= high {
        return Err(SigprepError::Cutoff(format!("low {low} Hz must be below high {high} Hz")));
    }
    let mut sos = butterworth_highpass(4, low, fs);
    sos.extend(butterworth_lowpass(4, high, fs));
    Ok(s.with_samples(filtfilt(&sos, &s.samples)))
}

pub fn notch_filter<S: Scalar>(s: &ChannelSeries<S>, f0: f64, q: f64) -> Result<ChannelSeries<S>, SigprepError> {
    check_band(f0, s.sampling_rate_hz, "notch frequency")?;
    if !(q.is_finite() && q > 0.0) {
        return Err(SigprepError::Cutoff(format!("notch quality {q}")));
    }
    Ok(s.with_samples(filtfilt(&notch(f0, s.sampling_rate_hz, q), &s.samples)))
}

/// Second-order Butterworth high-pass, zero phase.
pub fn highpass_filter<S: Scalar>(s: &ChannelSeries<S>, cutoff: f64) -> Result<ChannelSeries<S>, SigprepError> {
    check_band(cutoff, s.sampling_rate_hz, "high-pass cutoff")?;
    Ok(s.with_samples(filtfilt(&butterworth_highpass(2, cutoff, s.sampling_rate_hz), &s.samples)))
}
