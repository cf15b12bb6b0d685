use serde::{Deserialize, Serialize};

use super::ChannelSeries;
use crate::scalar::Scalar;

const THRESHOLD_COEF: f64 = 0.3125;
const BUFFER: usize = 8;
const MA_SECONDS: f64 = 0.080;
const CANDIDATE_SECONDS: f64 = 0.100;
const REFRACTORY_SECONDS: f64 = 0.200;
const REFINE_SECONDS: f64 = 0.025;
const SEARCHBACK_FACTOR: f64 = 1.66;
const MIN_SECONDS: f64 = 2.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RPeakSet {
    pub indices: Vec<usize>,
    pub amplitudes: Vec<f64>,
    pub rr_s: Vec<f64>,
    pub sampling_rate_hz: f64,
}

impl RPeakSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn times_s(&self) -> Vec<f64> {
        self.indices.iter().map(|&i| i as f64 / self.sampling_rate_hz).collect()
    }
}

struct Ring {
    values: Vec<f64>,
}

impl Ring {
    fn push(&mut self, v: f64) {
        if self.values.len() == BUFFER {
            self.values.remove(0);
        }
        self.values.push(v);
    }

    fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

fn centered_moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let half = width / 2;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + width - half).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Hamilton-style QRS detection on a band-passed ECG.
pub fn hamilton_rpeaks<S: Scalar>(ecg: &ChannelSeries<S>) -> RPeakSet {
    let fs = ecg.sampling_rate_hz;
    let x: Vec<f64> = ecg.samples.iter().map(|v| v.as_f64()).collect();
    let mut out = RPeakSet { sampling_rate_hz: fs, ..Default::default() };
    let n = x.len();
    if (n as f64) < MIN_SECONDS * fs {
        return out;
    }
    let sec = |s: f64| ((s * fs).round() as usize).max(1);

    let mut deriv = vec![0.0; n];
    for i in 1..n {
        deriv[i] = (x[i] - x[i - 1]).abs();
    }
    let env = centered_moving_average(&deriv, sec(MA_SECONDS));
    let reach = sec(CANDIDATE_SECONDS);
    let candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| {
            let v = env[i];
            if v <= 0.0 || v < env[i - 1] || v < env[i + 1] {
                return false;
            }
            let lo = i.saturating_sub(reach);
            let hi = (i + reach + 1).min(n);
            // ties resolve to the earliest sample
            (lo..hi).all(|j| env[j] < v || (env[j] == v && j >= i))
        })
        .collect();
    if candidates.is_empty() {
        return out;
    }

    let mut peaks = Ring { values: Vec::new() };
    let window = sec(1.0);
    for w in 0..BUFFER.min(n / window) {
        let m = env[w * window..(w + 1) * window].iter().cloned().fold(0.0, f64::max);
        peaks.push(m);
    }
    let mut noise = Ring { values: Vec::new() };
    let mut rr = Ring { values: Vec::new() };
    let refractory = sec(REFRACTORY_SECONDS);
    let threshold = |p: &Ring, q: &Ring| {
        let (pe, ne) = (p.mean(), q.mean());
        ne + THRESHOLD_COEF * (pe - ne)
    };

    let mut qrs: Vec<usize> = Vec::new();
    let mut since_last: Vec<usize> = Vec::new();
    for &c in &candidates {
        if let Some(&last) = qrs.last() {
            if c - last < refractory {
                continue;
            }
            if rr.values.len() >= 2 {
                let limit = (SEARCHBACK_FACTOR * rr.mean()) as usize;
                if c - last > limit {
                    let half = threshold(&peaks, &noise) / 2.0;
                    let best =
                        since_last.iter().copied().filter(|&s| env[s] > half).max_by(|&a, &b| env[a].total_cmp(&env[b]).then(b.cmp(&a)));
                    if let Some(s) = best {
                        rr.push((s - last) as f64);
                        qrs.push(s);
                        peaks.push(env[s]);
                        since_last.clear();
                        if c - s < refractory {
                            continue;
                        }
                    }
                }
            }
        }
        if env[c] > threshold(&peaks, &noise) {
            if let Some(&last) = qrs.last() {
                rr.push((c - last) as f64);
            }
            qrs.push(c);
            peaks.push(env[c]);
            since_last.clear();
        } else {
            noise.push(env[c]);
            since_last.push(c);
        }
    }

    let r = sec(REFINE_SECONDS);
    for &q in &qrs {
        let lo = q.saturating_sub(r);
        let hi = (q + r + 1).min(n);
        let best = (lo..hi).fold(lo, |b, j| if x[j] > x[b] { j } else { b });
        if out.indices.last().is_none_or(|&p| best > p) {
            out.indices.push(best);
            out.amplitudes.push(x[best]);
        }
    }
    out.rr_s = out.indices.windows(2).map(|w| (w[1] - w[0]) as f64 / fs).collect();
    out
}

fn step_series(peaks: &RPeakSet, n: usize, values: &[f64], first_from: usize) -> Vec<f64> {
    if values.is_empty() {
        return vec![0.0; n];
    }
    let mut out = vec![values[0]; n];
    for (k, &v) in values.iter().enumerate() {
        let start = peaks.indices[k + first_from].min(n);
        out[start..].iter_mut().for_each(|o| *o = v);
    }
    out
}

/// Piecewise-constant R-R interval (seconds), updated at each beat.
pub fn rr_step_series(peaks: &RPeakSet, n: usize) -> Vec<f64> {
    step_series(peaks, n, &peaks.rr_s, 1)
}

/// Piecewise-constant R amplitude, updated at each beat.
pub fn amplitude_step_series(peaks: &RPeakSet, n: usize) -> Vec<f64> {
    step_series(peaks, n, &peaks.amplitudes, 0)
}
