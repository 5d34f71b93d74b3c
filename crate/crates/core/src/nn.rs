//! Affine and layer-norm building blocks shared by the networks.

use rand::Rng;

use crate::autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::init_param;

const LN_EPS: f64 = 1e-5;

/// `x·w + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: init_param(store, format!("{prefix}.w"), fan_in, fan_out, fan_in, rng)?,
            b: store.insert(format!("{prefix}.b"), Tensor::zeros(1, fan_out))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w)?;
        let b = g.param(store, self.b)?;
        g.linear(x, w, b)
    }
}

/// Row-wise layer norm with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.insert(format!("{prefix}.gain"), Tensor::filled(1, dim, 1.0))?,
            bias: store.insert(format!("{prefix}.bias"), Tensor::zeros(1, dim))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let rows = g.shape(x).0;
        let n = g.layer_norm(x, LN_EPS)?;
        let gain = g.param(store, self.gain)?;
        let gain = g.broadcast_rows(gain, rows)?;
        let bias = g.param(store, self.bias)?;
        let bias = g.broadcast_rows(bias, rows)?;
        let scaled = g.mul(n, gain)?;
        g.add(scaled, bias)
    }
}
