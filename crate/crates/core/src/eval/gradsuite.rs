//! Finite-difference checks of every differentiable op and both training
//! objectives on a tiny configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aaf::{AafConfig, AafModel, LatentBlock};
use crate::modality::Modality;
use crate::nnblocks::{transformer_block, BlockParams, ModalityModel, TransformerConfig};
use crate::tensorgrad::gradcheck::{check_inputs, check_params, GradCheck};
use crate::tensorgrad::{Graph, ParamStore, Tensor, TensorError, Var};
use crate::trainer::{sample_loss, BCE_EPS};

pub const TOLERANCE: f64 = 1e-4;

type Build = fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    vec![
        ("add", vec![vec![2, 3], vec![2, 3]], |g, v| g.add(v[0], v[1])),
        ("add_broadcast", vec![vec![2, 3], vec![1]], |g, v| g.add(v[0], v[1])),
        ("sub", vec![vec![4], vec![4]], |g, v| g.sub(v[0], v[1])),
        ("mul", vec![vec![2, 3], vec![2, 3]], |g, v| g.mul(v[0], v[1])),
        ("scale", vec![vec![3, 2]], |g, v| g.scale(v[0], -1.7)),
        ("add_bias", vec![vec![3, 4], vec![4]], |g, v| g.add_bias(v[0], v[1])),
        ("matmul", vec![vec![3, 4], vec![4, 2]], |g, v| g.matmul(v[0], v[1])),
        ("transpose", vec![vec![2, 5]], |g, v| g.transpose(v[0])),
        ("relu", vec![vec![6]], |g, v| g.relu(v[0])),
        ("tanh", vec![vec![6]], |g, v| g.tanh(v[0])),
        ("sigmoid", vec![vec![6]], |g, v| g.sigmoid(v[0])),
        ("abs", vec![vec![6]], |g, v| g.abs(v[0])),
        ("softmax", vec![vec![3, 4]], |g, v| g.softmax(v[0], 1)),
        ("layer_norm", vec![vec![2, 6], vec![6], vec![6]], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        ("concat", vec![vec![2, 3], vec![2, 2]], |g, v| g.concat(&[v[0], v[1]], 1)),
        ("narrow", vec![vec![3, 5]], |g, v| g.narrow(v[0], 1, 1, 3)),
        ("mean_axis", vec![vec![4, 3]], |g, v| g.mean_axis(v[0], 0)),
        ("sum", vec![vec![7]], |g, v| g.sum(v[0])),
        ("mean", vec![vec![7]], |g, v| g.mean(v[0])),
        ("reshape", vec![vec![2, 6]], |g, v| g.reshape(v[0], &[3, 4])),
        ("dropout", vec![vec![3, 4]], |g, v| g.dropout(v[0], 0.25)),
        ("linear", vec![vec![3, 4], vec![4, 2], vec![2]], |g, v| g.linear(v[0], v[1], Some(v[2]))),
        ("mse", vec![vec![5]], |g, v| g.mse(v[0], &[0.1, -0.2, 0.3, 0.0, 1.0])),
        ("bce", vec![vec![3]], |g, v| {
            let p = g.sigmoid(v[0])?;
            g.bce(p, &[1.0, 0.0, 1.0], BCE_EPS)
        }),
    ]
}

fn check_op(name: &str, shapes: &[Vec<usize>], build: Build, trials: u64, rng: &mut ChaCha8Rng) -> Result<GradCheck, TensorError> {
    let mut worst = GradCheck { name: name.to_string(), max_rel_err: 0.0, entries: 0 };
    for trial in 0..trials {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, rng)).collect();
        let mut g = Graph::training(ChaCha8Rng::seed_from_u64(trial));
        let vars = inputs.iter().map(|x| g.variable(x.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = build(&mut g, &vars)?;
        let w = random(g.shape(out), rng);
        let r = check_inputs(name, &inputs, Some(trial), |g, v| {
            let o = build(g, v)?;
            let wv = g.constant(w.clone())?;
            let p = g.mul(o, wv)?;
            g.sum(p)
        })?;
        worst.entries += r.entries;
        worst.max_rel_err = worst.max_rel_err.max(r.max_rel_err);
    }
    Ok(worst)
}

/// Runs all checks; each entry reports its worst relative error.
pub fn run_suite() -> Result<Vec<GradCheck>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let mut out = Vec::new();
    for (name, shapes, build) in op_cases() {
        out.push(check_op(name, &shapes, build, 5, &mut rng)?);
    }

    let cfg = TransformerConfig::tiny();
    let n = cfg.num_tokens;
    let mut store = ParamStore::<f64>::new();
    let block = BlockParams::init(&mut store, "block", &cfg, &mut rng)?;
    let x = random(&[n, cfg.d_model], &mut rng);
    let w = random(&[n, cfg.d_model], &mut rng);
    out.push(check_params("transformer_block", &store, Some(3), |g, s| {
        let xv = g.constant(x.clone())?;
        let y = transformer_block(g, s, &block, &cfg, xv)?;
        let wv = g.constant(w.clone())?;
        let p = g.mul(y, wv)?;
        g.sum(p)
    })?);

    let mut store = ParamStore::<f64>::new();
    let model = ModalityModel::init(&cfg, Modality::Resp, &mut store, &mut rng)?;
    let t = cfg.epoch_len();
    let phase: f64 = rng.random_range(0.0..6.0);
    let sig: Vec<f64> = (0..t).map(|i| (i as f64 * 0.3 + phase).sin() + rng.random_range(-0.1..0.1)).collect();
    out.push(check_params("unimodal_joint_loss", &store, Some(11), |g, s| sample_loss(g, &model, s, &sig, 1, 0.8, 1.3))?);

    let acfg = AafConfig { d_latent: cfg.d_latent, anomaly_bins: 4, ..AafConfig::default() };
    let mut store = ParamStore::<f64>::new();
    let aaf = AafModel::init(&acfg, &mut store, &mut rng)?;
    // perturb the zero-initialised gate biases so every path is exercised
    for m in 0..acfg.num_modalities {
        let id = aaf.gate_bias(m);
        store.entry_mut(id).value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let mut blk = LatentBlock::zeros(&acfg);
    for m in 0..acfg.num_modalities - 1 {
        let z = (0..acfg.d_latent).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = (0..acfg.anomaly_bins).map(|_| rng.random_range(0.0..1.0)).collect();
        blk.set(m, z, a);
    }
    for (name, y) in [("fusion_bce_pos", 1.0), ("fusion_bce_neg", 0.0)] {
        out.push(check_params(name, &store, None, |g, s| {
            let p = aaf.forward(g, s, &blk)?;
            g.bce(p, &[y], BCE_EPS)
        })?);
    }
    Ok(out)
}
