//! Central finite-difference checks of analytic gradients (64-bit only).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{Grads, ParamStore};
use super::tensor::Tensor;
use super::TensorError;

/// Default perturbation.
pub const STEP: f64 = 1e-5;

/// Entries whose gradients are both below this magnitude are compared on an
/// absolute scale; finite differences cannot resolve relative error there.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub entries: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn graph_for(seed: Option<u64>) -> Graph<f64> {
    match seed {
        Some(s) => Graph::training(ChaCha8Rng::seed_from_u64(s)),
        None => Graph::new(),
    }
}

/// Checks `d f / d inputs` where `f` maps input variables to a scalar.
/// With a `dropout_seed`, every evaluation replays identical masks.
pub fn check_inputs<F>(name: &str, inputs: &[Tensor<f64>], dropout_seed: Option<u64>, f: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g = graph_for(dropout_seed);
        let vars = xs.iter().map(|x| g.variable(x.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut g, &vars)?;
        g.value(out).item().ok_or_else(|| TensorError::Contract("loss is not scalar".into()))
    };

    let mut g = graph_for(dropout_seed);
    let vars = inputs.iter().map(|x| g.variable(x.clone())).collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().zip(inputs).map(|(&v, x)| g.grad(v).unwrap_or_else(|| Tensor::zeros(x.shape()))).collect();

    let mut worst = 0.0f64;
    let mut entries = 0;
    let mut xs = inputs.to_vec();
    for (i, an) in analytic.iter().enumerate() {
        for k in 0..xs[i].numel() {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + STEP;
            let up = eval(&xs)?;
            xs[i].data_mut()[k] = orig - STEP;
            let down = eval(&xs)?;
            xs[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_err(an.data()[k], numeric));
            entries += 1;
        }
    }
    Ok(GradCheck { name: name.to_string(), max_rel_err: worst, entries })
}

/// Checks the gradient of `f` with respect to every trainable parameter.
pub fn check_params<F>(name: &str, store: &ParamStore<f64>, dropout_seed: Option<u64>, f: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, TensorError>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64, TensorError> {
        let mut g = graph_for(dropout_seed);
        let out = f(&mut g, s)?;
        g.value(out).item().ok_or_else(|| TensorError::Contract("loss is not scalar".into()))
    };

    let mut g = graph_for(dropout_seed);
    let out = f(&mut g, store)?;
    g.backward(out)?;
    let mut grads = Grads::for_store(store);
    g.accumulate_param_grads(&mut grads);

    let mut work = store.clone();
    let mut worst = 0.0f64;
    let mut entries = 0;
    for id in store.ids() {
        if store.entry(id).frozen {
            continue;
        }
        let n = store.entry(id).value.numel();
        for k in 0..n {
            let an = grads.get(id).map_or(0.0, |g| g[k]);
            let orig = work.entry(id).value.data()[k];
            work.entry_mut(id).value.data_mut()[k] = orig + STEP;
            let up = eval(&work)?;
            work.entry_mut(id).value.data_mut()[k] = orig - STEP;
            let down = eval(&work)?;
            work.entry_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_err(an, numeric));
            entries += 1;
        }
    }
    Ok(GradCheck { name: name.to_string(), max_rel_err: worst, entries })
}
