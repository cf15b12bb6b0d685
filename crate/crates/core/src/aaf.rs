//! Anomaly-aware gated fusion over all modality latents.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::modality::{Modality, NUM_MODALITIES};
use crate::nnblocks::lookup;
use crate::scalar::Scalar;
use crate::tensorgrad::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AafConfig {
    pub d_gate_hidden: usize,
    pub anomaly_bins: usize,
    pub num_modalities: usize,
    pub d_latent: usize,
}

impl Default for AafConfig {
    fn default() -> Self {
        Self { d_gate_hidden: 8, anomaly_bins: 16, num_modalities: NUM_MODALITIES, d_latent: 32 }
    }
}

impl AafConfig {
    pub fn gate_input_len(&self) -> usize {
        self.num_modalities * (self.d_latent + self.anomaly_bins)
    }
}

/// `|x − x̂|` per time step.
pub fn anomaly_trace<S: Scalar>(x: &[S], x_hat: &[S]) -> Result<Vec<S>, TensorError> {
    if x.len() != x_hat.len() {
        return Err(TensorError::Shape(format!("trace lengths {} vs {}", x.len(), x_hat.len())));
    }
    Ok(x.iter().zip(x_hat).map(|(&a, &b)| (a - b).abs()).collect())
}

/// Means of `bins` contiguous equal segments.
pub fn pool_anomaly<S: Scalar>(a: &[S], bins: usize) -> Result<Vec<S>, TensorError> {
    if bins == 0 || !a.len().is_multiple_of(bins) {
        return Err(TensorError::Shape(format!("{bins} bins do not divide length {}", a.len())));
    }
    let w = a.len() / bins;
    let inv = S::one() / S::lit(w as f64);
    Ok(a.chunks(w).map(|c| c.iter().copied().sum::<S>() * inv).collect())
}

/// Latents and pooled anomaly traces for one epoch, one slot per modality.
/// Absent slots are all zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentBlock<S> {
    pub z: Vec<Vec<S>>,
    pub a_pooled: Vec<Vec<S>>,
    pub present: Vec<bool>,
}

impl<S: Scalar> LatentBlock<S> {
    pub fn zeros(cfg: &AafConfig) -> Self {
        Self {
            z: vec![vec![S::zero(); cfg.d_latent]; cfg.num_modalities],
            a_pooled: vec![vec![S::zero(); cfg.anomaly_bins]; cfg.num_modalities],
            present: vec![false; cfg.num_modalities],
        }
    }

    pub fn set(&mut self, slot: usize, z: Vec<S>, a_pooled: Vec<S>) {
        self.z[slot] = z;
        self.a_pooled[slot] = a_pooled;
        self.present[slot] = true;
    }

    pub fn clear(&mut self, slot: usize) {
        self.z[slot].iter_mut().for_each(|v| *v = S::zero());
        self.a_pooled[slot].iter_mut().for_each(|v| *v = S::zero());
        self.present[slot] = false;
    }

    fn check(&self, cfg: &AafConfig) -> Result<(), TensorError> {
        let m = cfg.num_modalities;
        if self.z.len() != m || self.a_pooled.len() != m {
            return Err(TensorError::Shape(format!("{} latent / {} anomaly slots, expected {m}", self.z.len(), self.a_pooled.len())));
        }
        if self.z.iter().any(|z| z.len() != cfg.d_latent) || self.a_pooled.iter().any(|a| a.len() != cfg.anomaly_bins) {
            return Err(TensorError::Shape("latent block slot width".into()));
        }
        Ok(())
    }

    /// `[Z_1, …, Z_M, A_1, …, A_M]` flattened.
    pub fn gate_input(&self) -> Vec<S> {
        self.z.iter().chain(&self.a_pooled).flatten().copied().collect()
    }
}

#[derive(Clone, Debug)]
pub struct AafModel {
    pub cfg: AafConfig,
    w_h: Vec<ParamId>,
    w_gate: Vec<ParamId>,
    b_gate: Vec<ParamId>,
    w_c: ParamId,
    b_c: ParamId,
}

fn slot_name(m: usize) -> String {
    Modality::from_index(m).map_or_else(|| format!("slot{m}"), |t| t.tag().to_string())
}

impl AafModel {
    pub fn init<S: Scalar>(cfg: &AafConfig, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<Self, TensorError> {
        let (dl, h, gin) = (cfg.d_latent, cfg.d_gate_hidden, cfg.gate_input_len());
        let mut w_h = Vec::new();
        let mut w_gate = Vec::new();
        let mut b_gate = Vec::new();
        for m in 0..cfg.num_modalities {
            let s = slot_name(m);
            w_h.push(store.insert_glorot(&format!("aaf/{s}/w_h"), dl, h, rng)?);
            w_gate.push(store.insert_glorot(&format!("aaf/{s}/w_gate"), gin, h, rng)?);
            b_gate.push(store.insert_zeros(&format!("aaf/{s}/b_gate"), &[h])?);
        }
        let w_c = store.insert_glorot("aaf/classifier/w", h, 1, rng)?;
        let b_c = store.insert_zeros("aaf/classifier/b", &[1])?;
        Ok(Self { cfg: cfg.clone(), w_h, w_gate, b_gate, w_c, b_c })
    }

    pub fn bind<S: Scalar>(cfg: &AafConfig, store: &ParamStore<S>) -> Result<Self, TensorError> {
        let mut w_h = Vec::new();
        let mut w_gate = Vec::new();
        let mut b_gate = Vec::new();
        for m in 0..cfg.num_modalities {
            let s = slot_name(m);
            w_h.push(lookup(store, &format!("aaf/{s}/w_h"))?);
            w_gate.push(lookup(store, &format!("aaf/{s}/w_gate"))?);
            b_gate.push(lookup(store, &format!("aaf/{s}/b_gate"))?);
        }
        Ok(Self { cfg: cfg.clone(), w_h, w_gate, b_gate, w_c: lookup(store, "aaf/classifier/w")?, b_c: lookup(store, "aaf/classifier/b")? })
    }

    pub fn w_h(&self, m: usize) -> ParamId {
        self.w_h[m]
    }

    pub fn gate_weight(&self, m: usize) -> ParamId {
        self.w_gate[m]
    }

    pub fn gate_bias(&self, m: usize) -> ParamId {
        self.b_gate[m]
    }

    pub fn classifier(&self) -> (ParamId, ParamId) {
        (self.w_c, self.b_c)
    }

    fn inputs<S: Scalar>(&self, g: &mut Graph<S>, block: &LatentBlock<S>) -> Result<(Vec<Var>, Var), TensorError> {
        block.check(&self.cfg)?;
        let zs = block.z.iter().map(|z| g.constant(Tensor::new(&[1, z.len()], z.clone())?)).collect::<Result<Vec<_>, _>>()?;
        let u = block.gate_input();
        let u = g.constant(Tensor::new(&[1, u.len()], u)?)?;
        Ok((zs, u))
    }

    fn head<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, h: Var) -> Result<Var, TensorError> {
        let (w, b) = (g.param(store, self.w_c)?, g.param(store, self.b_c)?);
        let logit = g.linear(h, w, Some(b))?;
        let p = g.sigmoid(logit)?;
        g.reshape(p, &[1])
    }

    /// Fused apnea probability `[1]`. All gates are computed with a single
    /// product against the concatenated gate matrices.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, block: &LatentBlock<S>) -> Result<Var, TensorError> {
        let (zs, u) = self.inputs(g, block)?;
        let (m, hd) = (self.cfg.num_modalities, self.cfg.d_gate_hidden);
        let wg = self.w_gate.iter().map(|&id| g.param(store, id)).collect::<Result<Vec<_>, _>>()?;
        let bg = self.b_gate.iter().map(|&id| g.param(store, id)).collect::<Result<Vec<_>, _>>()?;
        let wg = g.concat(&wg, 1)?;
        let bg = g.concat(&bg, 0)?;
        let gates = g.linear(u, wg, Some(bg))?;
        let gates = g.sigmoid(gates)?;
        let mut hs = Vec::with_capacity(m);
        for (slot, &z) in zs.iter().enumerate() {
            let w = g.param(store, self.w_h[slot])?;
            let pre = g.matmul(z, w)?;
            hs.push(g.tanh(pre)?);
        }
        let hs = g.concat(&hs, 1)?;
        let gated = g.mul(gates, hs)?;
        let gated = g.reshape(gated, &[m, hd])?;
        let h = g.mean_axis(gated, 0)?;
        let h = g.scale(h, S::lit(m as f64))?;
        let h = g.as_row(h)?;
        self.head(g, store, h)
    }

    /// Same function as [`forward`](Self::forward), accumulating each gated
    /// modality term one at a time.
    pub fn forward_reference<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        block: &LatentBlock<S>,
    ) -> Result<Var, TensorError> {
        let (zs, u) = self.inputs(g, block)?;
        let mut h: Option<Var> = None;
        for (slot, &z) in zs.iter().enumerate() {
            let w = g.param(store, self.w_h[slot])?;
            let pre = g.matmul(z, w)?;
            let hm = g.tanh(pre)?;
            let (wg, bg) = (g.param(store, self.w_gate[slot])?, g.param(store, self.b_gate[slot])?);
            let gate = g.linear(u, wg, Some(bg))?;
            let gate = g.sigmoid(gate)?;
            let term = g.mul(gate, hm)?;
            h = Some(match h {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let h = h.ok_or_else(|| TensorError::Contract("no modality slots".into()))?;
        self.head(g, store, h)
    }

    /// Eval-mode convenience wrapper.
    pub fn predict<S: Scalar>(&self, store: &ParamStore<S>, block: &LatentBlock<S>) -> Result<S, TensorError> {
        let mut g = Graph::new();
        let p = self.forward(&mut g, store, block)?;
        Ok(g.value(p).data()[0])
    }

    /// Gate activations per slot, for inspection.
    pub fn gates<S: Scalar>(&self, store: &ParamStore<S>, block: &LatentBlock<S>) -> Result<Vec<Vec<S>>, TensorError> {
        let mut g = Graph::new();
        let (_, u) = self.inputs(&mut g, block)?;
        (0..self.cfg.num_modalities)
            .map(|slot| {
                let (wg, bg) = (g.param(store, self.w_gate[slot])?, g.param(store, self.b_gate[slot])?);
                let pre = g.linear(u, wg, Some(bg))?;
                let s = g.sigmoid(pre)?;
                Ok(g.value(s).data().to_vec())
            })
            .collect()
    }
}
