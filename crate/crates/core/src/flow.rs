//! Flow-matching objective, auxiliary connectivity and spectral losses,
//! the training loop, and fixed-step Euler sampling.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::data::SubjectPair;
use crate::encoder::encode_rest;
use crate::error::{Error, Result};
use crate::io::{EventSchedule, NormalizedEvent, TimeSeries};
use crate::model::FlowModel;
use crate::prior::PriorDraw;
use crate::stats;
use crate::velocity::predict_velocity;

/// Power floor applied before taking logs.
pub const POWER_FLOOR: f64 = 1e-12;

/// Per-item loss components; `total = fm + lambda_fc*fc + lambda_psd*psd`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub fm: f64,
    pub fc: f64,
    pub psd: f64,
    pub total: f64,
}

/// Epoch means of the loss components (epochs are 1-based).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub fm: f64,
    pub fc: f64,
    pub psd: f64,
    pub total: f64,
}

/// Linear interpolant between prior and data samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolant {
    pub t: f64,
    pub x_t: Tensor,
    pub v_star: Tensor,
}

impl Interpolant {
    pub fn new(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Self> {
        if x0.shape() != x1.shape() {
            return Err(Error::shape("interpolant", format!("{:?} vs {:?}", x0.shape(), x1.shape())));
        }
        let x_t = Tensor::from_fn(x0.rows(), x0.cols(), |i, j| {
            (1.0 - t) * x0.get(i, j) + t * x1.get(i, j)
        });
        let v_star = Tensor::from_fn(x0.rows(), x0.cols(), |i, j| x1.get(i, j) - x0.get(i, j));
        Ok(Self { t, x_t, v_star })
    }
}

pub fn fm_loss_graph(g: &mut Graph, v_pred: Var, v_star: Var) -> Result<Var> {
    let d = g.sub(v_pred, v_star)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// Mean squared difference over all entries.
pub fn fm_loss(v_pred: &Tensor, v_star: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(v_pred.clone())?;
    let b = g.constant(v_star.clone())?;
    let l = fm_loss_graph(&mut g, a, b)?;
    Ok(g.value(l).item())
}

/// `x_t + (1 - t) v`, or `x_t` itself at `t >= 1`.
pub fn one_step_x1_graph(g: &mut Graph, x_t: Var, t: f64, v_pred: Var) -> Result<Var> {
    if t >= 1.0 {
        return Ok(x_t);
    }
    let step = g.scale(v_pred, 1.0 - t)?;
    g.add(x_t, step)
}

pub fn one_step_x1(x_t: &Tensor, t: f64, v_pred: &Tensor) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Validation(format!("t={t} outside [0, 1]")));
    }
    if x_t.shape() != v_pred.shape() {
        return Err(Error::shape("one_step_x1", format!("{:?} vs {:?}", x_t.shape(), v_pred.shape())));
    }
    if t >= 1.0 {
        return Ok(x_t.clone());
    }
    Ok(Tensor::from_fn(x_t.rows(), x_t.cols(), |i, j| {
        x_t.get(i, j) + (1.0 - t) * v_pred.get(i, j)
    }))
}

/// Weighted connectivity loss `sum_{i<j} R_ij(x1)^2 (R_ij(x_hat) - R_ij(x1))^2`
/// with Pearson `R` of `x_hat` built in the graph.
///
/// ROIs that are constant in either input contribute nothing; their indices
/// are returned so the caller can record a warning.
pub fn fc_loss_graph(g: &mut Graph, x_hat: Var, target: &Tensor) -> Result<(Var, Vec<usize>)> {
    let (t, v) = g.shape(x_hat);
    if target.shape() != (t, v) {
        return Err(Error::shape("fc_loss", format!("{:?} vs {:?}", (t, v), target.shape())));
    }
    if t < 3 {
        return Err(Error::Validation(format!("fc_loss needs T >= 3, got {t}")));
    }
    let mut skipped = stats::constant_columns(target);
    for j in stats::constant_columns(g.value(x_hat)) {
        if !skipped.contains(&j) {
            skipped.push(j);
        }
    }
    skipped.sort_unstable();
    let r_target = stats::correlation_matrix(target);

    let col_sum = g.sum_rows(x_hat)?;
    let col_mean = g.scale(col_sum, 1.0 / t as f64)?;
    let col_mean = g.broadcast_rows(col_mean, t)?;
    let centered = g.sub(x_hat, col_mean)?;
    let sq = g.square(centered)?;
    let ss = g.sum_rows(sq)?;
    // keep the sqrt/recip finite for skipped columns; their weights are zero
    let guard = Tensor::row((0..v).map(|j| if skipped.contains(&j) { 1.0 } else { 0.0 }).collect());
    let guard = g.constant(guard)?;
    let ss = g.add(ss, guard)?;
    let sd = g.sqrt(ss)?;
    let inv = g.recip(sd)?;
    let inv = g.broadcast_rows(inv, t)?;
    let z = g.mul(centered, inv)?;
    let zt = g.transpose(z)?;
    let r_hat = g.matmul(zt, z)?;

    let weights = Tensor::from_fn(v, v, |i, j| {
        if i < j && !skipped.contains(&i) && !skipped.contains(&j) {
            r_target.get(i, j).powi(2)
        } else {
            0.0
        }
    });
    let r_target = g.constant(r_target)?;
    let weights = g.constant(weights)?;
    let diff = g.sub(r_hat, r_target)?;
    let diff2 = g.square(diff)?;
    let weighted = g.mul(weights, diff2)?;
    Ok((g.sum(weighted)?, skipped))
}

pub fn fc_loss(x_hat1: &Tensor, x1: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(x_hat1.clone())?;
    let (l, _) = fc_loss_graph(&mut g, x, x1)?;
    Ok(g.value(l).item())
}

/// DFT bin indices `k` (1 <= k <= T/2) with `lo <= k/(T tr) <= hi`.
pub fn band_bins(t: usize, tr: f64, lo: f64, hi: f64) -> Vec<usize> {
    (1..=t / 2)
        .filter(|&k| {
            let f = k as f64 / (t as f64 * tr);
            f >= lo && f <= hi
        })
        .collect()
}

/// Real and imaginary DFT rows for the given bins: `|bins|×T` each.
fn dft_rows(t: usize, bins: &[usize]) -> (Tensor, Tensor) {
    let re = Tensor::from_fn(bins.len(), t, |r, n| (2.0 * PI * (bins[r] * n) as f64 / t as f64).cos());
    let im = Tensor::from_fn(bins.len(), t, |r, n| -(2.0 * PI * (bins[r] * n) as f64 / t as f64).sin());
    (re, im)
}

fn periodogram(x: &Tensor, re: &Tensor, im: &Tensor) -> Result<Tensor> {
    let a = re.matmul(x)?;
    let b = im.matmul(x)?;
    Ok(Tensor::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j).powi(2) + b.get(i, j).powi(2)))
}

/// `sum_i sum_{f in band} (ln P_hat - ln P)^2` with raw DFT power.
pub fn psd_loss_graph(g: &mut Graph, x_hat: Var, target: &Tensor, tr: f64, band: (f64, f64)) -> Result<Var> {
    let (t, v) = g.shape(x_hat);
    if target.shape() != (t, v) {
        return Err(Error::shape("psd_loss", format!("{:?} vs {:?}", (t, v), target.shape())));
    }
    if t < 8 {
        return Err(Error::Validation(format!("psd_loss needs T >= 8, got {t}")));
    }
    let bins = band_bins(t, tr, band.0, band.1);
    if bins.is_empty() {
        return Err(Error::Config(format!(
            "no DFT bins of a {t}-point series at tr={tr} fall in [{}, {}] Hz",
            band.0, band.1
        )));
    }
    let (re, im) = dft_rows(t, &bins);
    let log_target = periodogram(target, &re, &im)?.map(|p| p.max(POWER_FLOOR).ln());
    let re = g.constant(re)?;
    let im = g.constant(im)?;
    let a = g.matmul(re, x_hat)?;
    let b = g.matmul(im, x_hat)?;
    let a2 = g.square(a)?;
    let b2 = g.square(b)?;
    let p = g.add(a2, b2)?;
    let p = g.clamp_min(p, POWER_FLOOR)?;
    let lp = g.log(p)?;
    let lt = g.constant(log_target)?;
    let d = g.sub(lp, lt)?;
    let d2 = g.square(d)?;
    g.sum(d2)
}

pub fn psd_loss(x_hat1: &Tensor, x1: &Tensor, tr: f64, band: (f64, f64)) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(x_hat1.clone())?;
    let l = psd_loss_graph(&mut g, x, x1, tr, band)?;
    Ok(g.value(l).item())
}

/// Everything one training item needs, with events already normalized.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub rest: Tensor,
    pub task: Tensor,
    pub tr: f64,
    pub events: Vec<NormalizedEvent>,
}

impl TrainItem {
    pub fn from_pair(model: &FlowModel, pair: &SubjectPair) -> Result<Self> {
        Ok(Self {
            rest: pair.rest.data().clone(),
            task: pair.task.data().clone(),
            tr: pair.task.tr(),
            events: model.prepare_events(&pair.schedule)?,
        })
    }
}

/// Build the loss graph for one item; returns the total node and its parts.
pub fn item_loss(
    model: &FlowModel,
    g: &mut Graph,
    item: &TrainItem,
    draw: &PriorDraw,
    t: f64,
) -> Result<(Var, LossBreakdown, Vec<usize>)> {
    let cfg = &model.config;
    let rest = g.constant(item.rest.clone())?;
    let x1 = g.constant(item.task.clone())?;
    let nodes = model.item_graph(g, rest, x1, &item.events, draw, t)?;
    let fm = fm_loss_graph(g, nodes.v_pred, nodes.v_star)?;
    let (fc, skipped) = fc_loss_graph(g, nodes.x_hat1, &item.task)?;
    let psd = psd_loss_graph(g, nodes.x_hat1, &item.task, item.tr, (cfg.band_lo, cfg.band_hi))?;
    let fc_w = g.scale(fc, cfg.lambda_fc)?;
    let psd_w = g.scale(psd, cfg.lambda_psd)?;
    let total = g.add(fm, fc_w)?;
    let total = g.add(total, psd_w)?;
    let parts = LossBreakdown {
        fm: g.value(fm).item(),
        fc: g.value(fc).item(),
        psd: g.value(psd).item(),
        total: g.value(total).item(),
    };
    Ok((total, parts, skipped))
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    pub warnings: Vec<String>,
}

/// Train `model` in place on `data` for `model.config.epochs` epochs.
///
/// Per step and item: encode rest, draw prior noise and `t ~ U(0,1)`, build
/// the interpolant, predict velocity, evaluate the combined loss (auxiliary
/// terms on the one-step estimate of `x1`), and accumulate gradients; the
/// batch mean is applied with one Adam step.
pub fn train(model: &mut FlowModel, data: &[SubjectPair]) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let items = data
        .iter()
        .map(|p| {
            if p.task.n_rois() != model.meta.n_rois || p.rest.n_rois() != model.meta.n_rois {
                return Err(Error::Validation(format!(
                    "subject {} has {} ROIs, model expects {}",
                    p.subject_id,
                    p.task.n_rois(),
                    model.meta.n_rois
                )));
            }
            TrainItem::from_pair(model, p)
        })
        .collect::<Result<Vec<_>>>()?;
    train_items(model, &items)
}

pub fn train_items(model: &mut FlowModel, items: &[TrainItem]) -> Result<TrainReport> {
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut report = TrainReport::default();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let item = &items[idx];
                let t: f64 = rng.random_range(0.0..1.0);
                let draw = PriorDraw::sample(item.task.rows(), model.meta.n_rois, cfg.rank_k, &mut rng)?;
                let mut g = Graph::new();
                let (total, parts, skipped) = item_loss(model, &mut g, item, &draw, t).map_err(|e| match e {
                    Error::NonFinite { op } => Error::Numerical(format!(
                        "non-finite value in {op} at epoch {epoch}, step {step}"
                    )),
                    other => other,
                })?;
                for (name, val) in [("fm", parts.fm), ("fc", parts.fc), ("psd", parts.psd), ("total", parts.total)] {
                    if !val.is_finite() {
                        return Err(Error::Numerical(format!(
                            "{name} loss is {val} at epoch {epoch}, step {step}"
                        )));
                    }
                }
                if !skipped.is_empty() {
                    report.warnings.push(format!(
                        "epoch {epoch} step {step}: constant ROIs {skipped:?} excluded from fc loss"
                    ));
                }
                g.backward(total)?;
                model.store.accumulate_grads(&g, scale);
                sums.fm += parts.fm;
                sums.fc += parts.fc;
                sums.psd += parts.psd;
                sums.total += parts.total;
            }
            model.store.adam_step(&cfg.adam);
        }
        let n = items.len() as f64;
        report.history.push(EpochLoss {
            epoch,
            fm: sums.fm / n,
            fc: sums.fc / n,
            psd: sums.psd / n,
            total: sums.total / n,
        });
    }
    Ok(report)
}

/// Fixed-step explicit Euler from `t = 0` to `t = 1`.
///
/// Exact for fields that do not depend on the state or time. For a field
/// that is `L`-Lipschitz in `x`, with `|d^2x/dt^2| <= M` along the exact
/// path, the global error after `steps` steps is at most
/// `(M / 2L) (e^L - 1) / steps`.
pub fn euler_integrate(
    x0: Tensor,
    steps: usize,
    mut field: impl FnMut(f64, &Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Validation("Euler integration needs at least one step".into()));
    }
    let h = 1.0 / steps as f64;
    let mut x = x0;
    for n in 0..steps {
        let v = field(n as f64 * h, &x)?;
        if v.shape() != x.shape() {
            return Err(Error::shape("euler", format!("{:?} vs {:?}", v.shape(), x.shape())));
        }
        for (xi, vi) in x.data_mut().iter_mut().zip(v.data()) {
            *xi += h * vi;
        }
        if !x.is_finite() {
            return Err(Error::Numerical(format!("non-finite state at Euler step {n}")));
        }
    }
    Ok(x)
}

/// Synthesize a task series for `x_rest` under `schedule` by integrating the
/// learned field from a prior draw.
pub fn sample<R: Rng + ?Sized>(
    model: &FlowModel,
    x_rest: &TimeSeries,
    schedule: &EventSchedule,
    steps: usize,
    rng: &mut R,
) -> Result<TimeSeries> {
    let c = encode_rest(x_rest, &model.encoder, &model.store)?;
    let events = model.prepare_events(schedule)?;
    let tokens = match &model.events {
        Some(p) if !events.is_empty() => Some(crate::events::embed_events(&events, p, &model.store, events.len())?),
        _ => None,
    };
    let t_len = model.meta.task_len;
    let draw = PriorDraw::sample(t_len, model.meta.n_rois, model.config.rank_k, rng)?;
    let x0 = model.prior.heads(&c, &model.store)?.compose(&draw)?;
    let ct = c.as_tensor();
    let x1 = euler_integrate(x0, steps, |t, x| {
        predict_velocity(t, x, &ct, tokens.as_ref(), &model.velocity, &model.store)
    })?;
    TimeSeries::new(x1, x_rest.tr())
}
