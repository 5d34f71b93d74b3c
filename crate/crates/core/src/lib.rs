//! Event-conditioned flow matching for rest-to-task multivariate time series.
//!
//! A resting-state series is encoded into a subject context, which
//! parameterizes a structured prior (mean, scale, 1/f temporal noise and a
//! low-rank spatial factor). A velocity field conditioned on the context, a
//! time embedding and cross-attention over event tokens transports prior
//! samples to task series; training uses the flow-matching objective plus
//! connectivity and spectral auxiliary losses, and sampling integrates the
//! learned ODE with fixed-step Euler.

pub mod autograd;
pub mod data;
pub mod encoder;
pub mod error;
pub mod events;
pub mod flow;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
mod nn;
pub mod prior;
pub mod stats;
pub mod velocity;

pub use error::{Error, Result};

use rand::Rng;

use autograd::{ParamId, ParamStore, Tensor};

/// Insert a `rows×cols` parameter with entries uniform in `±1/sqrt(fan_in)`.
pub(crate) fn init_param<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: String,
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> Result<ParamId> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    store.insert(name, Tensor::uniform(rows, cols, bound, rng))
}
