//! Patch transformer over the resting-state series.
//!
//! The `T_rest×V` input is zero-padded to a multiple of the patch length,
//! cut into non-overlapping patches of `P` timepoints, and each flattened
//! patch is projected to `d_c`. A learned aggregation token is prepended,
//! learned positional embeddings are added, and pre-norm transformer blocks
//! follow. The final-layer representation of the aggregation token is the
//! subject context.

use rand::Rng;

use crate::autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::init_param;
use crate::nn::{Dense, LayerNorm};
use crate::io::{RunConfig, TimeSeries};

/// Subject context vector `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextEmbedding(pub Vec<f64>);

impl ContextEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::row(self.0.clone())
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln_attn: LayerNorm,
    query: Dense,
    key: Dense,
    value: Dense,
    out: Dense,
    ln_mlp: LayerNorm,
    mlp_in: Dense,
    mlp_out: Dense,
}

/// Trainable weights of the rest encoder.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    patch_proj: Dense,
    pos: ParamId,
    cls: ParamId,
    layers: Vec<EncoderLayer>,
    ln_final: LayerNorm,
    n_rois: usize,
    patch_len: usize,
    d_c: usize,
    heads: usize,
    max_patches: usize,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &RunConfig,
        n_rois: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.d_c;
        let patch_in = cfg.patch_len * n_rois;
        let patch_proj = Dense::new(store, "enc.patch", patch_in, d, rng)?;
        let pos = init_param(store, "enc.pos".into(), cfg.max_patches + 1, d, d, rng)?;
        let cls = init_param(store, "enc.cls".into(), 1, d, d, rng)?;
        let mut layers = Vec::with_capacity(cfg.enc_layers);
        for l in 0..cfg.enc_layers {
            let p = format!("enc.layer{l}");
            layers.push(EncoderLayer {
                ln_attn: LayerNorm::new(store, &format!("{p}.ln_attn"), d)?,
                query: Dense::new(store, &format!("{p}.q"), d, d, rng)?,
                key: Dense::new(store, &format!("{p}.k"), d, d, rng)?,
                value: Dense::new(store, &format!("{p}.v"), d, d, rng)?,
                out: Dense::new(store, &format!("{p}.o"), d, d, rng)?,
                ln_mlp: LayerNorm::new(store, &format!("{p}.ln_mlp"), d)?,
                mlp_in: Dense::new(store, &format!("{p}.mlp_in"), d, cfg.enc_mlp_hidden, rng)?,
                mlp_out: Dense::new(store, &format!("{p}.mlp_out"), cfg.enc_mlp_hidden, d, rng)?,
            });
        }
        let ln_final = LayerNorm::new(store, "enc.ln_final", d)?;
        Ok(Self {
            patch_proj,
            pos,
            cls,
            layers,
            ln_final,
            n_rois,
            patch_len: cfg.patch_len,
            d_c: d,
            heads: cfg.enc_heads,
            max_patches: cfg.max_patches,
        })
    }

    pub fn d_c(&self) -> usize {
        self.d_c
    }

    pub fn n_rois(&self) -> usize {
        self.n_rois
    }

    pub fn n_patches(&self, t_rest: usize) -> usize {
        t_rest.div_ceil(self.patch_len)
    }

    /// `x_rest` is `T_rest×V`; returns the `1×d_c` context.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x_rest: Var) -> Result<Var> {
        let (t, v) = g.shape(x_rest);
        if v != self.n_rois {
            return Err(Error::shape(
                "encode_rest",
                format!("expected {} ROIs, got {v}", self.n_rois),
            ));
        }
        if t == 0 {
            return Err(Error::Validation("resting series is empty".into()));
        }
        let n_patches = self.n_patches(t);
        if n_patches > self.max_patches {
            return Err(Error::Validation(format!(
                "{n_patches} patches exceed max_patches={}",
                self.max_patches
            )));
        }
        let pad = n_patches * self.patch_len - t;
        let padded = if pad > 0 {
            let zeros = g.constant(Tensor::zeros(pad, v))?;
            g.concat_rows(&[x_rest, zeros])?
        } else {
            x_rest
        };
        let patches = g.reshape(padded, n_patches, self.patch_len * v)?;
        let tokens = self.patch_proj.forward(g, store, patches)?;
        let cls = g.param(store, self.cls)?;
        let seq = g.concat_rows(&[cls, tokens])?;
        let pos = g.param(store, self.pos)?;
        let pos = g.slice_rows(pos, 0, n_patches + 1)?;
        let mut h = g.add(seq, pos)?;
        for layer in &self.layers {
            h = self.block(g, store, layer, h)?;
        }
        let h = self.ln_final.forward(g, store, h)?;
        g.slice_rows(h, 0, 1)
    }

    fn block(&self, g: &mut Graph, store: &ParamStore, layer: &EncoderLayer, h: Var) -> Result<Var> {
        let x = layer.ln_attn.forward(g, store, h)?;
        let q = layer.query.forward(g, store, x)?;
        let k = layer.key.forward(g, store, x)?;
        let v = layer.value.forward(g, store, x)?;
        let dh = self.d_c / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let qh = g.slice_cols(q, head * dh, dh)?;
            let kh = g.slice_cols(k, head * dh, dh)?;
            let vh = g.slice_cols(v, head * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax(scores, None)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let merged = g.concat_cols(&heads)?;
        let attn_out = layer.out.forward(g, store, merged)?;
        let h = g.add(h, attn_out)?;

        let x = layer.ln_mlp.forward(g, store, h)?;
        let hidden = layer.mlp_in.forward(g, store, x)?;
        let hidden = g.gelu(hidden)?;
        let mlp_out = layer.mlp_out.forward(g, store, hidden)?;
        g.add(h, mlp_out)
    }
}

/// Context embedding of a resting-state series with frozen parameters.
pub fn encode_rest(x_rest: &TimeSeries, params: &EncoderParams, store: &ParamStore) -> Result<ContextEmbedding> {
    let mut g = Graph::new();
    let x = g.constant(x_rest.data().clone())?;
    let c = params.forward(&mut g, store, x)?;
    Ok(ContextEmbedding(g.value(c).data().to_vec()))
}
