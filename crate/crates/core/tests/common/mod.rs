#![allow(dead_code)]

use apnea_core::dataio::{prepare_study, synth_study, PrepareOptions, SynthParams};
use apnea_core::{EpochStudy, Modality};

/// O(n²) pairwise AUROC with half credit for ties.
pub fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Per-modality mean, standard deviation, mean absolute increment and end-minus-start.
pub fn epoch_features(study: &EpochStudy<f32>, j: usize) -> Vec<f64> {
    let mut f = Vec::new();
    for m in Modality::ALL {
        let x: Vec<f64> = study.epoch(m, j).iter().map(|&v| v as f64).collect();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let inc = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (n - 1.0);
        let q = x.len() / 8;
        let head = x[..q].iter().sum::<f64>() / q as f64;
        let tail = x[x.len() - q..].iter().sum::<f64>() / q as f64;
        f.extend([mean, sd, inc, tail - head]);
    }
    f
}

pub struct FeatureSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    pub study: Vec<usize>,
}

pub fn features_of(studies: &[EpochStudy<f32>]) -> FeatureSet {
    let mut out = FeatureSet { x: Vec::new(), y: Vec::new(), study: Vec::new() };
    for (i, s) in studies.iter().enumerate() {
        for j in 0..s.num_epochs() {
            out.x.push(epoch_features(s, j));
            out.y.push(s.labels[j]);
            out.study.push(i);
        }
    }
    out
}

pub fn synth_features(studies: usize, epochs: usize, separability: f64, seed: u64) -> FeatureSet {
    let p = SynthParams { num_studies: studies, epochs_per_study: epochs, apnea_rate: 0.5, seed, separability };
    let mut out = FeatureSet { x: Vec::new(), y: Vec::new(), study: Vec::new() };
    for i in 0..studies {
        let s: EpochStudy<f32> = prepare_study(&synth_study(&p, i).unwrap(), &PrepareOptions::default()).unwrap();
        for j in 0..s.num_epochs() {
            out.x.push(epoch_features(&s, j));
            out.y.push(s.labels[j]);
            out.study.push(i);
        }
    }
    out
}

/// L2-regularized logistic regression by full-batch gradient descent on standardized features.
pub fn logistic_fit_predict(train_x: &[Vec<f64>], train_y: &[u8], test_x: &[Vec<f64>]) -> Vec<f64> {
    let d = train_x[0].len();
    let n = train_x.len() as f64;
    let mut mu = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for r in train_x {
        for k in 0..d {
            mu[k] += r[k] / n;
        }
    }
    for r in train_x {
        for k in 0..d {
            sd[k] += (r[k] - mu[k]).powi(2) / n;
        }
    }
    sd.iter_mut().for_each(|s| *s = s.sqrt().max(1e-9));
    let z = |r: &[f64]| -> Vec<f64> { (0..d).map(|k| (r[k] - mu[k]) / sd[k]).collect() };
    let tx: Vec<Vec<f64>> = train_x.iter().map(|r| z(r)).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..500 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (r, &y) in tx.iter().zip(train_y) {
            let s = b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let p = 1.0 / (1.0 + (-s).exp());
            let e = p - y as f64;
            for k in 0..d {
                gw[k] += e * r[k] / n;
            }
            gb += e / n;
        }
        for k in 0..d {
            w[k] -= 0.5 * (gw[k] + 1e-3 * w[k]);
        }
        b -= 0.5 * gb;
    }
    test_x
        .iter()
        .map(|r| {
            let r = z(r);
            b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>()
        })
        .collect()
}

/// Held-out AUROC of the logistic oracle, training on the first half of the studies.
pub fn oracle_auroc(f: &FeatureSet, split_study: usize) -> f64 {
    let idx_train: Vec<usize> = (0..f.y.len()).filter(|&i| f.study[i] < split_study).collect();
    let idx_test: Vec<usize> = (0..f.y.len()).filter(|&i| f.study[i] >= split_study).collect();
    let tx: Vec<Vec<f64>> = idx_train.iter().map(|&i| f.x[i].clone()).collect();
    let ty: Vec<u8> = idx_train.iter().map(|&i| f.y[i]).collect();
    let vx: Vec<Vec<f64>> = idx_test.iter().map(|&i| f.x[i].clone()).collect();
    let vy: Vec<u8> = idx_test.iter().map(|&i| f.y[i]).collect();
    brute_auroc(&logistic_fit_predict(&tx, &ty, &vx), &vy)
}
