//! Per-modality transformer autoencoder with a unimodal classification head.
//!
//! An epoch of `T` samples is cut into `num_tokens` non-overlapping patches
//! of `patch_size` samples, each projected to `d_model` and offset by a
//! learned positional embedding. Blocks are pre-norm:
//!
//! ```text
//! X'  = LN1(X)
//! X'' = LN2(X' + Dropout(MHSA(X')))
//! out = X'' + Dropout(ReLU(X'' W1 + b1) W2 + b2)
//! ```
//!
//! `MHSA` concatenates per-head `Softmax(K Qᵀ / √d_k) V` and projects the
//! result with an output matrix. The encoder mean-pools token states and
//! projects to the latent `Z`; the decoder adds a projection of `Z` to its
//! own positional embeddings, runs the same block stack and projects every
//! token back to a patch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::modality::Modality;
use crate::scalar::Scalar;
use crate::tensorgrad::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ffn_hidden: usize,
    pub dropout_rate: f64,
    pub patch_size: usize,
    pub num_tokens: usize,
    pub d_latent: usize,
    pub classifier_hidden: usize,
    pub ln_eps: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            num_layers: 5,
            num_heads: 4,
            d_model: 32,
            d_ffn_hidden: 16,
            dropout_rate: 0.25,
            patch_size: 128,
            num_tokens: 30,
            d_latent: 32,
            classifier_hidden: 16,
            ln_eps: 1e-5,
        }
    }
}

impl TransformerConfig {
    /// Small configuration for gradient checks: T = 64, patch 16, one layer, d_model 8.
    pub fn tiny() -> Self {
        Self {
            num_layers: 1,
            num_heads: 2,
            d_model: 8,
            d_ffn_hidden: 4,
            dropout_rate: 0.25,
            patch_size: 16,
            num_tokens: 4,
            d_latent: 8,
            classifier_hidden: 4,
            ln_eps: 1e-5,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn epoch_len(&self) -> usize {
        self.patch_size * self.num_tokens
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |m: &str| Err(TensorError::Contract(m.to_string()));
        if self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return bad("d_model must be divisible by num_heads");
        }
        if [self.num_layers, self.d_model, self.d_ffn_hidden, self.patch_size, self.num_tokens, self.d_latent].contains(&0) {
            return bad("transformer dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Parameter handles of one transformer block.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub w_out: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

impl BlockParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        cfg: &TransformerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        let d = cfg.d_model;
        let h = cfg.d_ffn_hidden;
        let n = |s: &str| format!("{prefix}/{s}");
        Ok(Self {
            ln1_gamma: store.insert_ones(&n("ln1_gamma"), &[d])?,
            ln1_beta: store.insert_zeros(&n("ln1_beta"), &[d])?,
            w_query: store.insert_glorot(&n("w_query"), d, d, rng)?,
            w_key: store.insert_glorot(&n("w_key"), d, d, rng)?,
            w_value: store.insert_glorot(&n("w_value"), d, d, rng)?,
            w_out: store.insert_glorot(&n("w_out"), d, d, rng)?,
            ln2_gamma: store.insert_ones(&n("ln2_gamma"), &[d])?,
            ln2_beta: store.insert_zeros(&n("ln2_beta"), &[d])?,
            ffn_w1: store.insert_glorot(&n("ffn_w1"), d, h, rng)?,
            ffn_b1: store.insert_zeros(&n("ffn_b1"), &[h])?,
            ffn_w2: store.insert_glorot(&n("ffn_w2"), h, d, rng)?,
            ffn_b2: store.insert_zeros(&n("ffn_b2"), &[d])?,
        })
    }

    pub fn bind<S: Scalar>(store: &ParamStore<S>, prefix: &str) -> Result<Self, TensorError> {
        let f = |s: &str| lookup(store, &format!("{prefix}/{s}"));
        Ok(Self {
            ln1_gamma: f("ln1_gamma")?,
            ln1_beta: f("ln1_beta")?,
            w_query: f("w_query")?,
            w_key: f("w_key")?,
            w_value: f("w_value")?,
            w_out: f("w_out")?,
            ln2_gamma: f("ln2_gamma")?,
            ln2_beta: f("ln2_beta")?,
            ffn_w1: f("ffn_w1")?,
            ffn_b1: f("ffn_b1")?,
            ffn_w2: f("ffn_w2")?,
            ffn_b2: f("ffn_b2")?,
        })
    }
}

pub(crate) fn lookup<S: Scalar>(store: &ParamStore<S>, name: &str) -> Result<ParamId, TensorError> {
    store.id(name).ok_or_else(|| TensorError::Contract(format!("missing parameter {name}")))
}

/// Multi-head self-attention over token rows `x[n × d_model]`.
pub fn mhsa<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    p: &BlockParams,
    cfg: &TransformerConfig,
    x: Var,
) -> Result<Var, TensorError> {
    let wq = g.param(store, p.w_query)?;
    let wk = g.param(store, p.w_key)?;
    let wv = g.param(store, p.w_value)?;
    let wo = g.param(store, p.w_out)?;
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let dk = cfg.d_k();
    let inv_sqrt = S::one() / S::lit(dk as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let qh = g.narrow(q, 1, h * dk, dk)?;
        let kh = g.narrow(k, 1, h * dk, dk)?;
        let vh = g.narrow(v, 1, h * dk, dk)?;
        let qt = g.transpose(qh)?;
        let scores = g.matmul(kh, qt)?;
        let scores = g.scale(scores, inv_sqrt)?;
        let attn = g.softmax(scores, 1)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
    g.matmul(cat, wo)
}

pub fn transformer_block<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    p: &BlockParams,
    cfg: &TransformerConfig,
    x: Var,
) -> Result<Var, TensorError> {
    let eps = S::lit(cfg.ln_eps);
    let rate = S::lit(cfg.dropout_rate);
    let (g1, b1) = (g.param(store, p.ln1_gamma)?, g.param(store, p.ln1_beta)?);
    let xn = g.layer_norm(x, g1, b1, eps)?;
    let att = mhsa(g, store, p, cfg, xn)?;
    let att = g.dropout(att, rate)?;
    let res = g.add(xn, att)?;
    let (g2, b2) = (g.param(store, p.ln2_gamma)?, g.param(store, p.ln2_beta)?);
    let xnn = g.layer_norm(res, g2, b2, eps)?;
    let (w1, fb1) = (g.param(store, p.ffn_w1)?, g.param(store, p.ffn_b1)?);
    let (w2, fb2) = (g.param(store, p.ffn_w2)?, g.param(store, p.ffn_b2)?);
    let hidden = g.linear(xnn, w1, Some(fb1))?;
    let hidden = g.relu(hidden)?;
    let ffn = g.linear(hidden, w2, Some(fb2))?;
    let ffn = g.dropout(ffn, rate)?;
    g.add(xnn, ffn)
}

/// Encoder, decoder and classifier of one modality, registered under
/// `modality/<tag>/{encoder,decoder,classifier}/...`.
#[derive(Clone, Debug)]
pub struct ModalityModel {
    pub cfg: TransformerConfig,
    pub modality: Modality,
    patch_w: ParamId,
    patch_b: ParamId,
    enc_pos: ParamId,
    enc_blocks: Vec<BlockParams>,
    latent_w: ParamId,
    latent_b: ParamId,
    dec_in_w: ParamId,
    dec_in_b: ParamId,
    dec_pos: ParamId,
    dec_blocks: Vec<BlockParams>,
    out_w: ParamId,
    out_b: ParamId,
    cls_w1: ParamId,
    cls_b1: ParamId,
    cls_w2: ParamId,
    cls_b2: ParamId,
}

/// Namespace root of a modality's parameters.
pub fn modality_prefix(m: Modality) -> String {
    format!("modality/{}", m.tag())
}

impl ModalityModel {
    pub fn init<S: Scalar>(
        cfg: &TransformerConfig,
        modality: Modality,
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        cfg.validate()?;
        let root = modality_prefix(modality);
        let (d, n, p, dl, ch) = (cfg.d_model, cfg.num_tokens, cfg.patch_size, cfg.d_latent, cfg.classifier_hidden);
        let enc = format!("{root}/encoder");
        let dec = format!("{root}/decoder");
        let cls = format!("{root}/classifier");
        let patch_w = store.insert_glorot(&format!("{enc}/patch_w"), p, d, rng)?;
        let patch_b = store.insert_zeros(&format!("{enc}/patch_b"), &[d])?;
        let enc_pos = insert_positional(store, &format!("{enc}/pos"), n, d, rng)?;
        let enc_blocks =
            (0..cfg.num_layers).map(|i| BlockParams::init(store, &format!("{enc}/block{i}"), cfg, rng)).collect::<Result<Vec<_>, _>>()?;
        let latent_w = store.insert_glorot(&format!("{enc}/latent_w"), d, dl, rng)?;
        let latent_b = store.insert_zeros(&format!("{enc}/latent_b"), &[dl])?;
        let dec_in_w = store.insert_glorot(&format!("{dec}/latent_w"), dl, d, rng)?;
        let dec_in_b = store.insert_zeros(&format!("{dec}/latent_b"), &[d])?;
        let dec_pos = insert_positional(store, &format!("{dec}/pos"), n, d, rng)?;
        let dec_blocks =
            (0..cfg.num_layers).map(|i| BlockParams::init(store, &format!("{dec}/block{i}"), cfg, rng)).collect::<Result<Vec<_>, _>>()?;
        let out_w = store.insert_glorot(&format!("{dec}/out_w"), d, p, rng)?;
        let out_b = store.insert_zeros(&format!("{dec}/out_b"), &[p])?;
        let cls_w1 = store.insert_glorot(&format!("{cls}/w1"), dl, ch, rng)?;
        let cls_b1 = store.insert_zeros(&format!("{cls}/b1"), &[ch])?;
        let cls_w2 = store.insert_glorot(&format!("{cls}/w2"), ch, 1, rng)?;
        let cls_b2 = store.insert_zeros(&format!("{cls}/b2"), &[1])?;
        Ok(Self {
            cfg: cfg.clone(),
            modality,
            patch_w,
            patch_b,
            enc_pos,
            enc_blocks,
            latent_w,
            latent_b,
            dec_in_w,
            dec_in_b,
            dec_pos,
            dec_blocks,
            out_w,
            out_b,
            cls_w1,
            cls_b1,
            cls_w2,
            cls_b2,
        })
    }

    /// Re-attaches to parameters already present in `store` (e.g. loaded from a checkpoint).
    pub fn bind<S: Scalar>(cfg: &TransformerConfig, modality: Modality, store: &ParamStore<S>) -> Result<Self, TensorError> {
        cfg.validate()?;
        let root = modality_prefix(modality);
        let f = |s: &str| lookup(store, &format!("{root}/{s}"));
        let blocks = |part: &str| {
            (0..cfg.num_layers).map(|i| BlockParams::bind(store, &format!("{root}/{part}/block{i}"))).collect::<Result<Vec<_>, _>>()
        };
        Ok(Self {
            cfg: cfg.clone(),
            modality,
            patch_w: f("encoder/patch_w")?,
            patch_b: f("encoder/patch_b")?,
            enc_pos: f("encoder/pos")?,
            enc_blocks: blocks("encoder")?,
            latent_w: f("encoder/latent_w")?,
            latent_b: f("encoder/latent_b")?,
            dec_in_w: f("decoder/latent_w")?,
            dec_in_b: f("decoder/latent_b")?,
            dec_pos: f("decoder/pos")?,
            dec_blocks: blocks("decoder")?,
            out_w: f("decoder/out_w")?,
            out_b: f("decoder/out_b")?,
            cls_w1: f("classifier/w1")?,
            cls_b1: f("classifier/b1")?,
            cls_w2: f("classifier/w2")?,
            cls_b2: f("classifier/b2")?,
        })
    }

    pub fn encoder_blocks(&self) -> &[BlockParams] {
        &self.enc_blocks
    }

    /// Token matrix `[num_tokens × d_model]` from an epoch of length `T`.
    pub fn patch_embed<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Result<Var, TensorError> {
        let t = g.value(x).numel();
        if t != self.cfg.epoch_len() {
            return Err(TensorError::Shape(format!(
                "epoch length {t}, expected {} = {} x {}",
                self.cfg.epoch_len(),
                self.cfg.num_tokens,
                self.cfg.patch_size
            )));
        }
        let patches = g.reshape(x, &[self.cfg.num_tokens, self.cfg.patch_size])?;
        let (w, b) = (g.param(store, self.patch_w)?, g.param(store, self.patch_b)?);
        let tokens = g.linear(patches, w, Some(b))?;
        let pos = g.param(store, self.enc_pos)?;
        g.add(tokens, pos)
    }

    /// Latent `Z[d_latent]`.
    pub fn encode<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Result<Var, TensorError> {
        let mut h = self.patch_embed(g, store, x)?;
        for blk in &self.enc_blocks {
            h = transformer_block(g, store, blk, &self.cfg, h)?;
        }
        let pooled = g.mean_axis(h, 0)?;
        let row = g.as_row(pooled)?;
        let (w, b) = (g.param(store, self.latent_w)?, g.param(store, self.latent_b)?);
        let z = g.linear(row, w, Some(b))?;
        g.reshape(z, &[self.cfg.d_latent])
    }

    /// Reconstruction `X̂[T]` from a latent.
    pub fn decode<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, z: Var) -> Result<Var, TensorError> {
        let row = g.as_row(z)?;
        let (w, b) = (g.param(store, self.dec_in_w)?, g.param(store, self.dec_in_b)?);
        let cond = g.linear(row, w, Some(b))?;
        let cond = g.reshape(cond, &[self.cfg.d_model])?;
        let pos = g.param(store, self.dec_pos)?;
        let mut h = g.add_bias(pos, cond)?;
        for blk in &self.dec_blocks {
            h = transformer_block(g, store, blk, &self.cfg, h)?;
        }
        let (w, b) = (g.param(store, self.out_w)?, g.param(store, self.out_b)?);
        let patches = g.linear(h, w, Some(b))?;
        g.reshape(patches, &[self.cfg.epoch_len()])
    }

    /// Apnea probability `[1]` from a latent.
    pub fn classify<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, z: Var) -> Result<Var, TensorError> {
        let row = g.as_row(z)?;
        let (w1, b1) = (g.param(store, self.cls_w1)?, g.param(store, self.cls_b1)?);
        let (w2, b2) = (g.param(store, self.cls_w2)?, g.param(store, self.cls_b2)?);
        let h = g.linear(row, w1, Some(b1))?;
        let h = g.relu(h)?;
        let h = g.dropout(h, S::lit(self.cfg.dropout_rate))?;
        let logit = g.linear(h, w2, Some(b2))?;
        let p = g.sigmoid(logit)?;
        g.reshape(p, &[1])
    }

    pub fn encoder_prefix(&self) -> String {
        format!("{}/encoder/", modality_prefix(self.modality))
    }

    pub fn decoder_prefix(&self) -> String {
        format!("{}/decoder/", modality_prefix(self.modality))
    }

    pub fn classifier_prefix(&self) -> String {
        format!("{}/classifier/", modality_prefix(self.modality))
    }
}

fn insert_positional<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    n: usize,
    d: usize,
    rng: &mut impl Rng,
) -> Result<ParamId, TensorError> {
    let data = (0..n * d).map(|_| S::lit(rng.random_range(-0.05..0.05))).collect();
    store.insert(name, Tensor::new(&[n, d], data)?, false)
}

/// Evaluation-mode encode of a raw epoch, outside any training graph.
pub fn encode_epoch<S: Scalar>(model: &ModalityModel, store: &ParamStore<S>, x: &[S]) -> Result<Vec<S>, TensorError> {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::vector(x.to_vec()))?;
    let z = model.encode(&mut g, store, xv)?;
    Ok(g.value(z).data().to_vec())
}
