//! Full-pipeline gradient check against central finite differences.
//!
//! A micro model (3 ROIs, 8 timepoints, 2 events) is built from the run
//! configuration's loss weights and band; every scalar parameter is
//! perturbed by `±h` and the resulting loss difference compared with the
//! analytic gradient. Errors are normwise per parameter tensor:
//! `|g_analytic - g_numeric|_2 / max(|g_analytic|_2, |g_numeric|_2, f)`
//! with `f = GRAD_FLOOR * max(1, |loss|)`.
//! The floor keeps parameters whose exact gradient is zero (attention key
//! biases, which shift every score of a query equally) from dividing
//! finite-difference round-off by itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamId, Tensor};
use crate::error::Result;
use crate::flow::{item_loss, TrainItem};
use crate::io::{NormalizedEvent, RunConfig};
use crate::model::{FlowModel, ModelMeta};
use crate::prior::PriorDraw;

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const GRAD_FLOOR: f64 = 1e-5;

/// Sampling interval for the micro model: puts DFT bins 1 and 2 of an
/// 8-point series at 0.025 and 0.05 Hz.
pub const MICRO_TR: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub group: &'static str,
    pub numel: usize,
    pub grad_norm: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub loss: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= TOLERANCE
    }

    /// Max error per parameter group, in first-seen order.
    pub fn groups(&self) -> Vec<(&'static str, f64)> {
        let mut out: Vec<(&'static str, f64)> = Vec::new();
        for p in &self.params {
            match out.iter_mut().find(|(g, _)| *g == p.group) {
                Some((_, e)) => *e = e.max(p.rel_error),
                None => out.push((p.group, p.rel_error)),
            }
        }
        out
    }
}

/// Coarse module label for a parameter name.
pub fn param_group(name: &str) -> &'static str {
    if name.starts_with("enc.") {
        "encoder"
    } else if name.starts_with("prior.") {
        "prior"
    } else if name.starts_with("events.") {
        "event-embedding"
    } else if name.starts_with("vel.w_") {
        "cross-attention"
    } else if name.starts_with("vel.time") {
        "time-embedding"
    } else if name.starts_with("vel.mlp") {
        "velocity-mlp"
    } else {
        "other"
    }
}

/// Micro-model configuration keeping the loss weights, band and optimizer of `base`.
pub fn micro_config(base: &RunConfig) -> RunConfig {
    RunConfig {
        d_c: 8,
        enc_layers: 2,
        enc_heads: 2,
        enc_mlp_hidden: 12,
        patch_len: 4,
        max_patches: 4,
        rank_k: 2,
        d_ev: 4,
        ev_hidden: 6,
        d_t: 4,
        time_freqs: 3,
        vel_hidden: 8,
        vel_layers: 2,
        use_events: true,
        tr: MICRO_TR,
        ..base.clone()
    }
}

/// Micro model, one item, a prior draw and an interpolation time.
pub fn micro_problem(base: &RunConfig, seed: u64) -> Result<(FlowModel, TrainItem, PriorDraw, f64)> {
    let cfg = micro_config(base);
    let meta = ModelMeta {
        n_rois: 3,
        task_len: 8,
        tr: MICRO_TR,
        vocab: vec!["a".into(), "b".into()],
    };
    let model = FlowModel::new(cfg.clone(), meta, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let item = TrainItem {
        rest: Tensor::standard_normal(8, 3, &mut rng),
        task: Tensor::standard_normal(8, 3, &mut rng),
        tr: MICRO_TR,
        events: vec![
            NormalizedEvent {
                onset_tr: 1.0,
                duration_tr: 2.0,
                amplitude_z: -1.0,
                condition_id: 0,
            },
            NormalizedEvent {
                onset_tr: 5.0,
                duration_tr: 1.5,
                amplitude_z: 1.0,
                condition_id: 1,
            },
        ],
    };
    let draw = PriorDraw::sample(8, 3, cfg.rank_k, &mut rng)?;
    let t = rng.random_range(0.2..0.8);
    Ok((model, item, draw, t))
}

fn loss_value(model: &FlowModel, item: &TrainItem, draw: &PriorDraw, t: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (total, _, _) = item_loss(model, &mut g, item, draw, t)?;
    Ok(g.value(total).item())
}

/// Analytic gradients from `graph` (which may carry a corrupted rule).
fn analytic(model: &FlowModel, item: &TrainItem, draw: &PriorDraw, t: f64, mut graph: Graph) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
    let (total, _, _) = item_loss(model, &mut graph, item, draw, t)?;
    graph.backward(total)?;
    Ok((graph.value(total).item(), graph.param_grads()))
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normwise(a: &[f64], n: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(n)).max(floor)
}

/// Check every parameter of the micro model. `corrupt` scales one op's
/// backward rule to show the check can fail.
pub fn run(base: &RunConfig, seed: u64, corrupt: Option<(&'static str, f64)>) -> Result<GradcheckReport> {
    let (mut model, item, draw, t) = micro_problem(base, seed)?;
    let graph = match corrupt {
        Some((op, k)) => Graph::with_corrupted_backward(op, k),
        None => Graph::new(),
    };
    let (loss, grads) = analytic(&model, &item, &draw, t, graph)?;
    let floor = GRAD_FLOOR * loss.abs().max(1.0);
    let mut params = Vec::new();
    for id in model.store.ids().collect::<Vec<_>>() {
        let analytic_grad = grads
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; model.store.value(id).len()]);
        let n = model.store.value(id).len();
        let mut numeric = vec![0.0; n];
        for (i, num) in numeric.iter_mut().enumerate() {
            let orig = model.store.value(id).data()[i];
            model.store.value_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = loss_value(&model, &item, &draw, t)?;
            model.store.value_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = loss_value(&model, &item, &draw, t)?;
            model.store.value_mut(id).data_mut()[i] = orig;
            *num = (up - down) / (2.0 * FD_STEP);
        }
        let name = model.store.name(id).to_string();
        params.push(ParamCheck {
            group: param_group(&name),
            name,
            numel: n,
            grad_norm: norm(&numeric),
            rel_error: normwise(&analytic_grad, &numeric, floor),
        });
    }
    Ok(GradcheckReport { params, loss })
}
