//! Acceptance checks 1–10; prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use apnea_core::corrupt::{add_awgn, average_power, omit_epoch_channels, AwgnOutcome};
use apnea_core::dataio::{prepare_study, synth_dataset, synth_ecg, PrepareOptions, SynthParams};
use apnea_core::eval::{auroc, f1, gradsuite, run_scenario, Confusion, EvalOptions, FoldEval, MetricsReport, Scenario};
use apnea_core::sigprep::{bandpass_ecg, hamilton_rpeaks, highpass_filter, notch_filter, ChannelSeries};
use apnea_core::trainer::{run_fusion, run_pretrain, Layout, TrainConfig};
use apnea_core::{EpochStudy, Modality};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 7;

struct Outcome {
    results: Vec<(u32, &'static str, bool)>,
}

impl Outcome {
    fn record(&mut self, n: u32, name: &'static str, ok: bool, detail: String) {
        println!("criterion {n:>2} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
        self.results.push((n, name, ok));
    }
}

fn criterion_gradients(out: &mut Outcome) {
    let t = Instant::now();
    let res = gradsuite::run_suite();
    let secs = t.elapsed().as_secs_f64();
    match res {
        Ok(checks) => {
            let worst = checks.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).expect("checks");
            let failing: Vec<&str> = checks.iter().filter(|c| !c.passes(gradsuite::TOLERANCE)).map(|c| c.name.as_str()).collect();
            let ok = failing.is_empty() && secs < 120.0;
            out.record(
                1,
                "gradient integrity",
                ok,
                format!("{} checks, worst {} at {:.2e}, failing {:?}, {secs:.1} s", checks.len(), worst.name, worst.max_rel_err, failing),
            );
        }
        Err(e) => out.record(1, "gradient integrity", false, format!("error {e}")),
    }
}

fn criterion_corruption(out: &mut Outcome) {
    let t = Instant::now();
    let p = SynthParams { num_studies: 5, epochs_per_study: 40, apnea_rate: 0.5, seed: SEED, separability: 1.0 };
    let studies: Vec<EpochStudy<f64>> =
        synth_dataset(&p).unwrap().iter().map(|b| prepare_study(b, &PrepareOptions::default()).unwrap()).collect();
    let epochs: Vec<Vec<f64>> =
        studies.iter().flat_map(|s| (0..s.num_epochs()).map(move |j| s.epoch(Modality::from_index(j % 6).unwrap(), j).to_vec())).collect();
    assert_eq!(epochs.len(), 200);
    let mut snr_ok = true;
    let mut worst_snr = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for target in [10.0, 20.0, 30.0, 40.0, 50.0] {
        let mut measured = Vec::new();
        for x in &epochs {
            let mut y = x.clone();
            assert!(matches!(add_awgn(&mut y, target, 1.0, &mut rng), AwgnOutcome::Added { .. }));
            let noise: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
            measured.push(10.0 * (average_power(x) / average_power(&noise)).log10());
        }
        let mean = measured.iter().sum::<f64>() / measured.len() as f64;
        worst_snr = worst_snr.max((mean - target).abs());
        snr_ok &= (mean - target).abs() <= 0.5;
    }
    let mut omit_ok = true;
    let mut fracs = Vec::new();
    for (k, ratio) in [0.1, 0.2, 0.3, 0.4, 0.5].into_iter().enumerate() {
        let (mut zeroed, mut total) = (0usize, 0usize);
        for s in &studies {
            let mut c = s.clone();
            omit_epoch_channels(&mut c, ratio, SEED + k as u64, &mut Vec::new()).unwrap();
            for j in 0..c.num_epochs() {
                for m in Modality::ALL {
                    total += 1;
                    zeroed += usize::from(!c.is_present(m, j));
                }
            }
        }
        let frac = zeroed as f64 / total as f64;
        let bound = 3.0 * (ratio * (1.0 - ratio) / total as f64).sqrt();
        omit_ok &= (frac - ratio).abs() <= bound;
        fracs.push(format!("{ratio}:{frac:.3}"));
    }
    let secs = t.elapsed().as_secs_f64();
    out.record(
        2,
        "corruption calibration",
        snr_ok && omit_ok && secs < 60.0,
        format!("worst mean SNR error {worst_snr:.3} dB, zeroed fractions [{}], {secs:.1} s", fracs.join(" ")),
    );
}

fn criterion_metrics(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = rng.random_range(4..80);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let levels = if case % 2 == 0 { 6 } else { 1_000_000 };
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        worst = worst.max((auroc(&scores, &labels).unwrap() - common::brute_auroc(&scores, &labels)).abs());
    }
    let mut f1_ok = 0;
    for _ in 0..50 {
        let c =
            Confusion { tp: rng.random_range(0..8), fp: rng.random_range(0..8), fn_: rng.random_range(0..8), tn: rng.random_range(0..8) };
        let (mut s, mut y) = (Vec::new(), Vec::new());
        for (count, score, label) in [(c.tp, 0.75, 1u8), (c.fp, 0.5, 0), (c.fn_, 0.25, 1), (c.tn, 0.0, 0)] {
            s.extend(std::iter::repeat_n(score, count));
            y.extend(std::iter::repeat_n(label, count));
        }
        let precision = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
        let recall = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
        let hand = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        f1_ok += usize::from((f1(&s, &y, 0.5) - hand).abs() < 1e-12);
    }
    out.record(3, "metric oracles", worst <= 1e-12 && f1_ok == 50, format!("max AUROC deviation {worst:.1e} over 200 sets, F1 {f1_ok}/50"));
}

fn scenario_list() -> Vec<Scenario> {
    let mut v: Vec<Scenario> =
        ["clean", "missing:ratio=0", "missing:ratio=0.25", "missing:ratio=0.5", "noisy:snr=50", "noisy:snr=30", "noisy:snr=10"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
    v.extend(Modality::ALL.iter().map(|&m| Scenario::Ablate(vec![m])));
    v.push(Scenario::Ablate(vec![Modality::Eog, Modality::Eeg]));
    v
}

struct Run {
    pre: Layout,
    fused: Layout,
    reports: BTreeMap<String, (MetricsReport, Vec<FoldEval>)>,
    train_secs: f64,
}

fn full_run(studies: &[EpochStudy<f32>], root: &Path) -> Run {
    let cfg = TrainConfig { seed: SEED, ..TrainConfig::desk() };
    let pre = Layout::new(root.join("pretrained"));
    let fused = Layout::new(root.join("fused"));
    let t = Instant::now();
    run_pretrain(studies, &cfg, &pre).expect("pretraining");
    run_fusion(studies, &pre, &fused).expect("fusion training");
    let train_secs = t.elapsed().as_secs_f64();
    let opts = EvalOptions { seed: SEED, threshold: 0.5 };
    let reports =
        scenario_list().into_iter().map(|sc| (sc.to_string(), run_scenario(&sc, studies, &fused, &opts).expect("evaluation"))).collect();
    Run { pre, fused, reports, train_secs }
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn mean_auroc(run: &Run, sc: &str) -> f64 {
    run.reports[sc].0.mean.auroc
}

fn non_increasing(vals: &[f64], slack: f64) -> bool {
    vals.windows(2).all(|w| w[1] <= w[0] + slack)
}

fn criteria_pipeline(out: &mut Outcome) {
    let t = Instant::now();
    let p = SynthParams { num_studies: 40, epochs_per_study: 120, apnea_rate: 0.5, seed: SEED, separability: 1.0 };
    let studies: Vec<EpochStudy<f32>> =
        synth_dataset(&p).unwrap().iter().map(|b| prepare_study(b, &PrepareOptions::default()).unwrap()).collect();
    let oracle = common::oracle_auroc(&common::features_of(&studies), 20);
    let tmp = tempfile::tempdir().unwrap();
    let a = full_run(&studies, &tmp.path().join("a"));
    let clean = mean_auroc(&a, "clean");
    let secs4 = t.elapsed().as_secs_f64() - a.reports.values().map(|r| r.0.runtime_s).sum::<f64>() + a.reports["clean"].0.runtime_s;
    out.record(
        4,
        "end-to-end learning",
        oracle >= 0.95 && clean >= 0.90 && secs4 < 1200.0,
        format!(
            "feature oracle {oracle:.4}, fused clean AUROC {clean:.4} ± {:.4}, F1 {:.3}, training {:.0} s, total {secs4:.0} s",
            a.reports["clean"].0.std.auroc, a.reports["clean"].0.mean.f1, a.train_secs
        ),
    );

    let miss: Vec<f64> = ["missing:ratio=0", "missing:ratio=0.25", "missing:ratio=0.5"].iter().map(|s| mean_auroc(&a, s)).collect();
    let snr: Vec<f64> = ["noisy:snr=50", "noisy:snr=30", "noisy:snr=10"].iter().map(|s| mean_auroc(&a, s)).collect();
    out.record(
        5,
        "robustness ordering",
        non_increasing(&miss, 0.01) && non_increasing(&snr, 0.01) && miss[2] >= 0.70,
        format!(
            "missing 0/0.25/0.5 {:.4}/{:.4}/{:.4}, SNR 50/30/10 dB {:.4}/{:.4}/{:.4}",
            miss[0], miss[1], miss[2], snr[0], snr[1], snr[2]
        ),
    );

    let drops: Vec<(Modality, f64)> =
        Modality::ALL.iter().map(|&m| (m, clean - mean_auroc(&a, &Scenario::Ablate(vec![m]).to_string()))).collect();
    let worst = drops.iter().map(|d| d.1).fold(f64::MIN, f64::max);
    let pair = clean - mean_auroc(&a, "ablate:modalities=EOG+EEG");
    out.record(
        6,
        "modality ablation",
        worst < 0.15,
        format!("drops {}, EOG+EEG {pair:.4}", drops.iter().map(|(m, d)| format!("{m}:{d:.4}")).collect::<Vec<_>>().join(" ")),
    );

    let fold_mean = |sc: &str, k: usize| -> f64 {
        let ev = &a.reports[sc].1;
        ev.iter().map(|e| e.anomaly_mean[k].expect("slot present")).sum::<f64>() / ev.len() as f64
    };
    let mut ok7 = true;
    let mut detail = Vec::new();
    for m in Modality::ALL {
        let (c, n) = (fold_mean("clean", m.index()), fold_mean("noisy:snr=10", m.index()));
        let folds_up = a.reports["clean"]
            .1
            .iter()
            .zip(&a.reports["noisy:snr=10"].1)
            .filter(|(x, y)| y.anomaly_mean[m.index()] > x.anomaly_mean[m.index()])
            .count();
        ok7 &= n > c;
        detail.push(format!("{m}:{c:.3}->{n:.3} ({folds_up}/{} folds)", a.reports["clean"].1.len()));
    }
    out.record(7, "anomaly signal validity", ok7, detail.join(" "));

    let mut same = 0;
    let mut total = 0;
    for fold in 0..TrainConfig::desk().folds {
        for ext in ["json", "bin"] {
            let before = std::fs::read(a.pre.unimodal_stem(fold).with_extension(ext)).unwrap();
            let after = std::fs::read(a.fused.unimodal_stem(fold).with_extension(ext)).unwrap();
            total += 1;
            same += usize::from(before == after);
        }
    }
    out.record(
        8,
        "freeze contract",
        same == total,
        format!("{same}/{total} unimodal checkpoint files byte-identical after fusion training"),
    );

    let b = full_run(&studies, &tmp.path().join("b"));
    let ckpt_same = tree_bytes(&a.pre.root) == tree_bytes(&b.pre.root) && tree_bytes(&a.fused.root) == tree_bytes(&b.fused.root);
    let reports_same =
        a.reports.iter().zip(&b.reports).all(|((ka, ra), (kb, rb))| {
            ka == kb && ra.0.timeless().to_json().unwrap() == rb.0.timeless().to_json().unwrap() && ra.1 == rb.1
        });
    out.record(
        9,
        "determinism",
        ckpt_same && reports_same,
        format!(
            "{} checkpoint/log files compared, {} reports compared (runtime_s excluded)",
            tree_bytes(&a.pre.root).len() + tree_bytes(&a.fused.root).len(),
            a.reports.len()
        ),
    );
}

fn tone(f: f64, fs: f64, seconds: f64) -> Vec<f64> {
    (0..(fs * seconds) as usize).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
}

fn gain_db(x: &[f64], y: &[f64]) -> f64 {
    let (lo, hi) = (x.len() / 4, 3 * x.len() / 4);
    let rms = |v: &[f64]| (v[lo..hi].iter().map(|a| a * a).sum::<f64>() / (hi - lo) as f64).sqrt();
    20.0 * (rms(y) / rms(x)).log10()
}

fn criterion_filters(out: &mut Outcome) {
    let fs = 128.0;
    let s = |x: Vec<f64>| ChannelSeries::new(x, fs, Modality::Ecg).unwrap();
    let bp = |f: f64| {
        let x = tone(f, fs, 60.0);
        gain_db(&x, &bandpass_ecg(&s(x.clone()), 3.0, 45.0).unwrap().samples)
    };
    let (b10, b05, b60) = (bp(10.0), bp(0.5), bp(60.0));
    let dc = bandpass_ecg(&s(vec![1.0; 3840]), 3.0, 45.0).unwrap().samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let nt = |f: f64| {
        let x = tone(f, fs, 60.0);
        gain_db(&x, &notch_filter(&s(x.clone()), 60.0, 30.0).unwrap().samples)
    };
    let (n60, n55, n10) = (nt(60.0), nt(55.0), nt(10.0));
    let slow = tone(0.1, fs, 600.0);
    let h01 = gain_db(&slow, &highpass_filter(&s(slow.clone()), 0.5).unwrap().samples);
    let fast = tone(10.0, fs, 60.0);
    let h10 = gain_db(&fast, &highpass_filter(&s(fast.clone()), 0.5).unwrap().samples);
    let filters_ok = b10.abs() <= 1.0
        && b05 <= -20.0
        && b60 <= -20.0
        && dc < 0.01
        && 10f64.powf(n60 / 20.0) < 0.10
        && n55.abs() <= 3.0
        && n10.abs() <= 3.0
        && h01 <= -20.0
        && h10.abs() <= 3.0;

    let mut recalls = Vec::new();
    for (k, bpm) in [60.0, 70.0, 80.0, 90.0].into_iter().enumerate() {
        let (x, planted) = synth_ecg(bpm, 300.0, fs, 100 + k as u64);
        let peaks = hamilton_rpeaks(&bandpass_ecg(&s(x), 3.0, 45.0).unwrap());
        let times = peaks.times_s();
        let hits = planted.iter().filter(|&&p| times.iter().any(|&t| (t - p).abs() <= 0.010)).count();
        recalls.push(hits as f64 / planted.len() as f64);
    }
    let det_ok = recalls.iter().all(|&r| r >= 0.95);
    out.record(
        10,
        "filter characterization",
        filters_ok && det_ok,
        format!(
            "band-pass 10/0.5/60 Hz {b10:.2}/{b05:.1}/{b60:.1} dB, DC {dc:.1e}, notch 60/55/10 Hz {n60:.1}/{n55:.2}/{n10:.2} dB, \
             high-pass 0.1/10 Hz {h01:.1}/{h10:.2} dB, R-peak recall 60-90 bpm {}",
            recalls.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join("/")
        ),
    );
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut out = Outcome { results: Vec::new() };
    criterion_gradients(&mut out);
    criterion_corruption(&mut out);
    criterion_metrics(&mut out);
    criteria_pipeline(&mut out);
    criterion_filters(&mut out);
    out.results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = out.results.iter().filter(|r| !r.2).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", out.results.len() - failed.len(), out.results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
