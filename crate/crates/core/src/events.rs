//! Event tokens: `e_k = MLP([onset, duration, amplitude]) + E_cond[condition]`.

use rand::Rng;

use crate::autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::init_param;
use crate::io::{NormalizedEvent, RunConfig};
use crate::nn::Dense;

/// Padded token matrix; `mask[k]` is true for real events.
#[derive(Clone, Debug, PartialEq)]
pub struct EventTokens {
    pub tokens: Tensor,
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct EventEmbedParams {
    hidden: Dense,
    out: Dense,
    table: ParamId,
    vocab_size: usize,
    d_ev: usize,
}

impl EventEmbedParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &RunConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::Validation("event vocabulary is empty".into()));
        }
        Ok(Self {
            hidden: Dense::new(store, "events.mlp_in", 3, cfg.ev_hidden, rng)?,
            out: Dense::new(store, "events.mlp_out", cfg.ev_hidden, cfg.d_ev, rng)?,
            table: init_param(store, "events.table".into(), vocab_size, cfg.d_ev, cfg.d_ev, rng)?,
            vocab_size,
            d_ev: cfg.d_ev,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn d_ev(&self) -> usize {
        self.d_ev
    }

    pub fn table_id(&self) -> ParamId {
        self.table
    }

    /// `pad_to×d_ev` token node plus the padding mask.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        events: &[NormalizedEvent],
        pad_to: usize,
    ) -> Result<(Var, Vec<bool>)> {
        if events.len() > pad_to {
            return Err(Error::Validation(format!(
                "{} events exceed padding length {pad_to}",
                events.len()
            )));
        }
        if pad_to == 0 {
            return Err(Error::Validation("padding length must be positive".into()));
        }
        let mut features = Tensor::zeros(pad_to, 3);
        let mut onehot = Tensor::zeros(pad_to, self.vocab_size);
        let mut keep = Tensor::zeros(pad_to, 1);
        for (k, ev) in events.iter().enumerate() {
            if ev.condition_id >= self.vocab_size {
                return Err(Error::Validation(format!(
                    "condition id {} outside vocabulary of size {}",
                    ev.condition_id, self.vocab_size
                )));
            }
            features.set(k, 0, ev.onset_tr);
            features.set(k, 1, ev.duration_tr);
            features.set(k, 2, ev.amplitude_z);
            onehot.set(k, ev.condition_id, 1.0);
            keep.set(k, 0, 1.0);
        }
        let f = g.constant(features)?;
        let h = self.hidden.forward(g, store, f)?;
        let h = g.tanh(h)?;
        let timing = self.out.forward(g, store, h)?;
        let onehot = g.constant(onehot)?;
        let table = g.param(store, self.table)?;
        let cond = g.matmul(onehot, table)?;
        let tokens = g.add(timing, cond)?;
        let keep = g.constant(keep)?;
        let keep = g.broadcast_cols(keep, self.d_ev)?;
        let tokens = g.mul(tokens, keep)?;
        let mask = (0..pad_to).map(|k| k < events.len()).collect();
        Ok((tokens, mask))
    }
}

pub fn embed_events(
    events: &[NormalizedEvent],
    params: &EventEmbedParams,
    store: &ParamStore,
    pad_to: usize,
) -> Result<EventTokens> {
    let mut g = Graph::new();
    let (tokens, mask) = params.forward(&mut g, store, events, pad_to)?;
    Ok(EventTokens {
        tokens: g.value(tokens).clone(),
        mask,
    })
}
