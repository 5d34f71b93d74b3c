//! Velocity field `v(t, x_t, c, e)`.
//!
//! Every timepoint row of `x_t` queries the event tokens through single-head
//! cross-attention; the attended event context is concatenated with the row,
//! the subject context and the time embedding, and a pointwise MLP maps the
//! result back to `V` outputs.

use rand::Rng;

use crate::autograd::{Graph, ParamId, ParamStore, Tensor, Var, MASK_NEG};
use crate::error::{Error, Result};
use crate::init_param;
use crate::io::RunConfig;
use crate::nn::Dense;

#[derive(Clone, Debug)]
pub struct VelocityParams {
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    time: Dense,
    mlp: Vec<Dense>,
    freqs: Vec<f64>,
    n_rois: usize,
    d_c: usize,
    d_ev: usize,
    d_t: usize,
}

/// Event tokens as graph input.
#[derive(Clone, Copy, Debug)]
pub struct TokenInput<'a> {
    pub tokens: Var,
    pub mask: &'a [bool],
}

impl VelocityParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &RunConfig, n_rois: usize, rng: &mut R) -> Result<Self> {
        let d_ev = cfg.d_ev;
        let w_q = init_param(store, "vel.w_q".into(), n_rois, d_ev, n_rois, rng)?;
        let w_k = init_param(store, "vel.w_k".into(), d_ev, d_ev, d_ev, rng)?;
        let w_v = init_param(store, "vel.w_v".into(), d_ev, d_ev, d_ev, rng)?;
        let time = Dense::new(store, "vel.time", 2 * cfg.time_freqs, cfg.d_t, rng)?;
        let mut mlp = Vec::with_capacity(cfg.vel_layers + 1);
        let mut width = n_rois + cfg.d_c + cfg.d_t + d_ev;
        for l in 0..cfg.vel_layers {
            mlp.push(Dense::new(store, &format!("vel.mlp{l}"), width, cfg.vel_hidden, rng)?);
            width = cfg.vel_hidden;
        }
        mlp.push(Dense::new(store, "vel.mlp_out", width, n_rois, rng)?);
        let freqs = (0..cfg.time_freqs).map(|k| 2f64.powi(k as i32)).collect();
        Ok(Self {
            w_q,
            w_k,
            w_v,
            time,
            mlp,
            freqs,
            n_rois,
            d_c: cfg.d_c,
            d_ev,
            d_t: cfg.d_t,
        })
    }

    pub fn d_t(&self) -> usize {
        self.d_t
    }

    /// `psi(t)`: sinusoidal features `[sin(w t), cos(w t)]` through a learned
    /// affine map. `t` is a `1×1` node.
    pub fn time_embedding(&self, g: &mut Graph, store: &ParamStore, t: Var) -> Result<Var> {
        let tv = g.value(t).item();
        if !(0.0..=1.0).contains(&tv) {
            return Err(Error::Validation(format!("time {tv} outside [0, 1]")));
        }
        let freqs = g.constant(Tensor::row(self.freqs.clone()))?;
        let phase = g.matmul(t, freqs)?;
        let s = g.sin(phase)?;
        let c = g.cos(phase)?;
        let feats = g.concat_cols(&[s, c])?;
        self.time.forward(g, store, feats)
    }

    /// Cross-attention of the `T×V` state over the tokens. Returns the
    /// `T×d_ev` event context and the `T×K_ev` attention weights, or `None`
    /// when every token is masked (the caller then uses a zero context).
    pub fn attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        tokens: TokenInput<'_>,
    ) -> Result<Option<(Var, Var)>> {
        let (k_ev, d) = g.shape(tokens.tokens);
        if d != self.d_ev || tokens.mask.len() != k_ev {
            return Err(Error::shape(
                "predict_velocity",
                format!("tokens {k_ev}x{d}, mask {}, d_ev {}", tokens.mask.len(), self.d_ev),
            ));
        }
        if !tokens.mask.iter().any(|&m| m) {
            return Ok(None);
        }
        let w_q = g.param(store, self.w_q)?;
        let w_k = g.param(store, self.w_k)?;
        let w_v = g.param(store, self.w_v)?;
        let q = g.matmul(x, w_q)?;
        let k = g.matmul(tokens.tokens, w_k)?;
        let v = g.matmul(tokens.tokens, w_v)?;
        let kt = g.transpose(k)?;
        let logits = g.matmul(q, kt)?;
        let logits = g.scale(logits, 1.0 / (self.d_ev as f64).sqrt())?;
        let mask: Vec<f64> = tokens.mask.iter().map(|&m| if m { 0.0 } else { MASK_NEG }).collect();
        let attn = g.softmax(logits, Some(&mask))?;
        let ctx = g.matmul(attn, v)?;
        Ok(Some((ctx, attn)))
    }

    /// `T×V` velocity for state `x` at time `t` (a `1×1` node), context `c`
    /// (`1×d_c`) and optional event tokens.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        t: Var,
        x: Var,
        c: Var,
        tokens: Option<TokenInput<'_>>,
    ) -> Result<Var> {
        let (rows, v) = g.shape(x);
        if v != self.n_rois {
            return Err(Error::shape("predict_velocity", format!("state has {v} ROIs, expected {}", self.n_rois)));
        }
        if g.shape(c) != (1, self.d_c) {
            return Err(Error::shape("predict_velocity", format!("context {:?}, expected (1, {})", g.shape(c), self.d_c)));
        }
        let ctx = match tokens {
            Some(tok) => self.attend(g, store, x, tok)?.map(|(ctx, _)| ctx),
            None => None,
        };
        let ctx = match ctx {
            Some(ctx) => ctx,
            None => g.constant(Tensor::zeros(rows, self.d_ev))?,
        };
        let psi = self.time_embedding(g, store, t)?;
        let psi = g.broadcast_rows(psi, rows)?;
        let cb = g.broadcast_rows(c, rows)?;
        let mut h = g.concat_cols(&[x, cb, psi, ctx])?;
        let last = self.mlp.len() - 1;
        for (l, layer) in self.mlp.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if l < last {
                h = g.gelu(h)?;
            }
        }
        Ok(h)
    }
}

/// Velocity with frozen parameters on plain tensors.
pub fn predict_velocity(
    t: f64,
    x_t: &Tensor,
    c: &Tensor,
    tokens: Option<&crate::events::EventTokens>,
    params: &VelocityParams,
    store: &ParamStore,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let tv = g.constant(Tensor::scalar(t))?;
    let x = g.constant(x_t.clone())?;
    let cv = g.constant(c.clone())?;
    let tok = match tokens {
        Some(tk) => Some((g.constant(tk.tokens.clone())?, tk.mask.as_slice())),
        None => None,
    };
    let out = params.forward(
        &mut g,
        store,
        tv,
        x,
        cv,
        tok.map(|(tokens, mask)| TokenInput { tokens, mask }),
    )?;
    Ok(g.value(out).clone())
}
