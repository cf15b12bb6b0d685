use super::*;
use crate::epochs::EpochStudy;
use crate::nnblocks::ModalityModel;
use crate::tensorgrad::checkpoint::encode;
use crate::tensorgrad::gradcheck::check_params;
use crate::tensorgrad::{Graph, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_cfg() -> TrainConfig {
    let model = TransformerConfig::tiny();
    TrainConfig {
        aaf: AafConfig { d_latent: model.d_latent, anomaly_bins: 4, ..AafConfig::default() },
        model,
        batch_size: 8,
        epochs: 4,
        fusion_epochs: 6,
        log_subset: 16,
        adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        fusion_adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
        seed: 5,
        ..TrainConfig::default()
    }
}

/// Studies of 64-sample epochs whose amplitude depends on the label.
fn toy_studies(n: usize, epochs: usize, seed: u64) -> Vec<EpochStudy<f64>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let labels: Vec<u8> = (0..epochs).map(|_| r.random_range(0..2)).collect();
            let mut s = EpochStudy::zeros(&format!("toy{i}"), 64, labels.clone());
            for (slot, c) in s.channels.iter_mut().enumerate() {
                for (j, &y) in labels.iter().enumerate() {
                    let amp = if y == 1 && slot % 2 == 0 { 0.3 } else { 1.0 };
                    let ph: f64 = r.random_range(0.0..std::f64::consts::TAU);
                    for t in 0..64 {
                        c[j * 64 + t] = amp * ((t as f64) * 0.4 + ph).sin() + r.random_range(-0.05..0.05);
                    }
                }
            }
            s
        })
        .collect()
}

fn bytes<S: crate::Scalar>(store: &ParamStore<S>, prefix: &str) -> Vec<u8> {
    encode(&store.subset(prefix), 0, serde_json::Value::Null, "x").1
}

#[test]
fn reconstruction_loss_examples() {
    assert_eq!(loss_reconstruction(&[vec![0.5, 1.0]], &[vec![0.5, 1.0]]).unwrap(), 0.0);
    assert_eq!(loss_reconstruction(&[vec![1.0; 4]], &[vec![0.0; 4]]).unwrap(), 1.0);
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<Vec<f64>> = (0..5).map(|_| (0..7).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let y: Vec<Vec<f64>> = (0..5).map(|_| (0..7).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let mut acc = 0.0;
    for i in 0..5 {
        for t in 0..7 {
            acc += (x[i][t] - y[i][t]).powi(2);
        }
    }
    assert!((loss_reconstruction(&x, &y).unwrap() - acc / 35.0).abs() < 1e-12);
    let mut g = Graph::<f64>::new();
    let graph_mean: f64 = (0..5)
        .map(|i| {
            let p = g.constant(crate::tensorgrad::Tensor::vector(y[i].clone())).unwrap();
            let l = g.mse(p, &x[i]).unwrap();
            g.value(l).data()[0]
        })
        .sum::<f64>()
        / 5.0;
    assert!((graph_mean - acc / 35.0).abs() < 1e-12);
    assert!(loss_reconstruction(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
}

#[test]
fn bce_examples() {
    assert!((loss_bce(&[1.0], &[0.5]) - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(loss_bce(&[1.0], &[1.0]) < 1e-6);
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let y: Vec<f64> = (0..8).map(|_| r.random_range(0..2) as f64).collect();
    let p: Vec<f64> = (0..8).map(|_| r.random_range(0.01..0.99)).collect();
    let mut acc = 0.0;
    for k in 0..8 {
        acc += if y[k] == 1.0 { -p[k].ln() } else { -(1.0 - p[k]).ln() };
    }
    assert!((loss_bce(&y, &p) - acc / 8.0).abs() < 1e-12);
    let mut g = Graph::<f64>::new();
    let pv = g.constant(crate::tensorgrad::Tensor::vector(p.clone())).unwrap();
    let l = g.bce(pv, &y, BCE_EPS).unwrap();
    assert!((g.value(l).data()[0] - acc / 8.0).abs() < 1e-12);
}

#[test]
fn joint_loss_decomposes() {
    let cfg = tiny_cfg();
    let mut store = ParamStore::<f64>::new();
    let m = ModalityModel::init(&cfg.model, Modality::Resp, &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let x: Vec<f64> = (0..64).map(|t| (t as f64 * 0.2).cos()).collect();
    let (a, b) = (0.7, 1.9);
    let mut g = Graph::new();
    let total = sample_loss(&mut g, &m, &store, &x, 1, a, b).unwrap();
    let total = g.value(total).data()[0];
    let mut g = Graph::new();
    let xv = g.constant(crate::tensorgrad::Tensor::vector(x.clone())).unwrap();
    let z = m.encode(&mut g, &store, xv).unwrap();
    let xh = m.decode(&mut g, &store, z).unwrap();
    let p = m.classify(&mut g, &store, z).unwrap();
    let lr = loss_reconstruction(std::slice::from_ref(&x), &[g.value(xh).data().to_vec()]).unwrap();
    let lc = loss_bce(&[1.0], g.value(p).data());
    assert!((total - (a * lr + b * lc)).abs() < 1e-12);
}

#[test]
fn joint_loss_gradients_match_finite_differences() {
    let cfg = tiny_cfg();
    let mut store = ParamStore::<f64>::new();
    let m = ModalityModel::init(&cfg.model, Modality::Co2, &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let x: Vec<f64> = (0..64).map(|t| (t as f64 * 0.3).sin() + 0.1 * t as f64 / 64.0).collect();
    let r = check_params("joint", &store, Some(9), |g, s| sample_loss(g, &m, s, &x, 1, 1.0, 1.0)).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn pretraining_improves_both_losses_and_replays() {
    let cfg = TrainConfig { epochs: 6, ..tiny_cfg() };
    let data = toy_studies(4, 40, 7);
    let (train, held): (Vec<&EpochStudy<f64>>, Vec<&EpochStudy<f64>>) = (data[..3].iter().collect(), data[3..].iter().collect());
    let out = pretrain_fold(&train, &held, &cfg, 0).unwrap();
    let evals: Vec<&LogRow> = out.log.iter().filter(|r| r.split == "eval").collect();
    assert_eq!(evals.len(), cfg.epochs + 1);
    let (first, last) = (evals[0], evals[evals.len() - 1]);
    for k in 0..6 {
        assert!(last.recon[k].unwrap() < first.recon[k].unwrap(), "recon slot {k}");
        assert!(last.cls[k].unwrap() < first.cls[k].unwrap(), "cls slot {k}");
    }
    assert!(out.log.iter().any(|r| r.split == "train" && r.epoch == 1));
    assert!(out.steps > 0);

    let again = pretrain_fold(&train, &held, &cfg, 0).unwrap();
    assert_eq!(bytes(&out.store, ""), bytes(&again.store, ""));
    assert_eq!(out.log, again.log);
}

#[test]
fn zero_loss_weight_leaves_branch_untouched() {
    let mut cfg = TrainConfig { epochs: 2, ..tiny_cfg() };
    cfg.beta = vec![0.0; 6];
    cfg.alpha[1] = 0.0;
    cfg.beta[1] = 1.0;
    let data = toy_studies(2, 16, 8);
    let train: Vec<&EpochStudy<f64>> = data.iter().collect();
    let mut init = ParamStore::<f64>::new();
    ModalityModel::init(&cfg.model, Modality::Ecg, &mut init, &mut crate::rngkey::keyed_rng(cfg.seed, 0x1417, "fold0/ECG", 0, 0)).unwrap();
    let (store, _, _) = pretrain_modality(Modality::Ecg, &train, &[], &cfg, 0).unwrap();
    assert_eq!(bytes(&store, "modality/ECG/classifier/"), bytes(&init, "modality/ECG/classifier/"));
    assert_ne!(bytes(&store, "modality/ECG/encoder/"), bytes(&init, "modality/ECG/encoder/"));

    let mut init = ParamStore::<f64>::new();
    ModalityModel::init(&cfg.model, Modality::Eeg, &mut init, &mut crate::rngkey::keyed_rng(cfg.seed, 0x1417, "fold0/EEG", 0, 1)).unwrap();
    let (store, _, _) = pretrain_modality(Modality::Eeg, &train, &[], &cfg, 0).unwrap();
    assert_eq!(bytes(&store, "modality/EEG/decoder/"), bytes(&init, "modality/EEG/decoder/"));
    assert_ne!(bytes(&store, "modality/EEG/classifier/"), bytes(&init, "modality/EEG/classifier/"));
}

#[test]
fn omitted_channels_do_not_train_their_modality() {
    let cfg = TrainConfig { epochs: 1, ..tiny_cfg() };
    let mut data = toy_studies(2, 8, 9);
    for s in &mut data {
        s.zero_modality(Modality::Spo2);
    }
    let train: Vec<&EpochStudy<f64>> = data.iter().collect();
    assert!(matches!(pretrain_modality(Modality::Spo2, &train, &[], &cfg, 0), Err(TrainError::Empty(_))));
}

#[test]
fn fusion_respects_freeze_and_learns() {
    let cfg = tiny_cfg();
    let data = toy_studies(4, 40, 10);
    let (train, held): (Vec<&EpochStudy<f64>>, Vec<&EpochStudy<f64>>) = (data[..3].iter().collect(), data[3..].iter().collect());
    let pre = pretrain_fold(&train, &held, &cfg, 0).unwrap();
    let frozen_before = bytes(&pre.store, "modality/");
    let mut store = pre.store.clone();
    let tr = extract_features(&pre.models, &store, &train, &cfg).unwrap();
    let he = extract_features(&pre.models, &store, &held, &cfg).unwrap();
    assert_eq!(tr.len(), 120);
    assert!(tr.iter().all(|s| s.block.a_pooled.iter().flatten().all(|&a| a >= 0.0)));

    let one = TrainConfig { fusion_epochs: 1, batch_size: 4, ..cfg.clone() };
    let mut s1 = pre.store.clone();
    train_fusion_fold(&mut s1, &tr[..4], &he, &one, 0).unwrap();
    let mut s0 = pre.store.clone();
    let untrained = TrainConfig { fusion_epochs: 0, ..cfg.clone() };
    train_fusion_fold(&mut s0, &tr[..4], &he, &untrained, 0).unwrap();
    let diff = s1
        .subset("aaf/")
        .entries()
        .iter()
        .zip(s0.subset("aaf/").entries())
        .map(|(a, b)| a.value.max_abs_diff(&b.value))
        .fold(0.0, f64::max);
    assert!(diff > 0.0);

    let out = train_fusion_fold(&mut store, &tr, &he, &cfg, 0).unwrap();
    let mut unfrozen = store.clone();
    unfrozen.set_frozen("modality/", false);
    assert_eq!(bytes(&unfrozen, "modality/"), frozen_before);
    let train_rows: Vec<f64> = out.log.iter().filter(|r| r.split == "train").map(|r| r.fusion.unwrap()).collect();
    assert_eq!(train_rows.len(), cfg.fusion_epochs);
    assert!(train_rows.last().unwrap() < train_rows.first().unwrap(), "{train_rows:?}");
}

#[test]
fn fusion_requires_every_pretrained_model() {
    let cfg = tiny_cfg();
    let mut store = ParamStore::<f64>::new();
    for m in [Modality::Ecg, Modality::Eeg] {
        ModalityModel::init(&cfg.model, m, &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    }
    let sample = FusionSample { block: crate::aaf::LatentBlock::zeros(&cfg.aaf), label: 1 };
    assert!(matches!(train_fusion_fold(&mut store, &[sample], &[], &cfg, 0), Err(TrainError::MissingCheckpoint(_))));
}

#[test]
fn eval_mode_scores_are_deterministic() {
    let cfg = tiny_cfg();
    let data = toy_studies(1, 4, 11);
    let mut store = ParamStore::<f64>::new();
    let m = ModalityModel::init(&cfg.model, Modality::Eog, &mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let score = || {
        let mut g = Graph::new();
        let l = sample_loss(&mut g, &m, &store, data[0].epoch(Modality::Eog, 2), 0, 1.0, 1.0).unwrap();
        g.value(l).data()[0].to_bits()
    };
    assert_eq!(score(), score());
}

#[test]
fn log_header_lists_every_column() {
    let csv = log::to_csv(&[LogRow::new(0, "eval")]);
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("epoch,split,loss_recon_ECG,"));
    assert!(header.ends_with("loss_cls_RESP,loss_fusion"));
    assert_eq!(header.split(',').count(), 15);
    assert_eq!(csv.lines().nth(1).unwrap(), "0,eval,,,,,,,,,,,,,");
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { alpha: vec![1.0; 5], ..TrainConfig::default() }.validate().is_err());
    let mut bad = TrainConfig::default();
    bad.beta[2] = -1.0;
    assert!(bad.validate().is_err());
    let json = serde_json::to_string(&TrainConfig::default()).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), TrainConfig::default());
    assert_eq!(serde_json::from_str::<TrainConfig>("{\"epochs\": 3}").unwrap().epochs, 3);
}

#[test]
fn shipped_desk_config_matches_preset() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    let cfg: TrainConfig = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    assert_eq!(cfg, TrainConfig { seed: 7, ..TrainConfig::desk() });
    assert!(cfg.validate().is_ok());
}
