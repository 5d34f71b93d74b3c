//! Checks on the geometry of prior samples.

use super::rng;
use evflow::autograd::Tensor;
use evflow::encoder::ContextEmbedding;
use evflow::io::RunConfig;
use evflow::metrics::welch_psd;
use evflow::model::{FlowModel, ModelMeta};
use evflow::prior::{colored_noise, PriorDraw, PriorHeads};
use nalgebra::DMatrix;

/// Least-squares slope of `ln P` against `ln f` over positive frequencies.
pub fn loglog_slope(freqs: &[f64], powers: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = freqs
        .iter()
        .zip(powers)
        .filter(|(f, _)| **f > 0.0)
        .map(|(f, p)| (f.ln(), p.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Slope of the column-pooled Welch spectrum of fresh colored noise.
pub fn colored_noise_slope(t: usize, cols: usize, seg: usize, seed: u64) -> f64 {
    let x = colored_noise(t, cols, &mut rng(seed)).unwrap();
    let mut pooled: Option<(Vec<f64>, Vec<f64>)> = None;
    for j in 0..cols {
        let s = welch_psd(&x.column(j), 1.0, seg, 0.5).unwrap();
        match pooled.as_mut() {
            None => pooled = Some((s.freqs, s.powers)),
            Some((_, acc)) => acc.iter_mut().zip(&s.powers).for_each(|(a, p)| *a += p),
        }
    }
    let (freqs, powers) = pooled.unwrap();
    loglog_slope(&freqs, &powers)
}

/// Heads of a freshly initialized default model at a random context.
pub fn model_heads(seed: u64) -> PriorHeads {
    let meta = ModelMeta {
        n_rois: 10,
        task_len: 128,
        tr: 0.72,
        vocab: Vec::new(),
    };
    let model = FlowModel::new(RunConfig::default(), meta, seed).unwrap();
    let c = Tensor::standard_normal(1, model.config.d_c, &mut rng(seed + 100));
    model.prior.heads(&ContextEmbedding(c.into_data()), &model.store).unwrap()
}

pub fn covariance_error(h: &PriorHeads, t: usize, seed: u64) -> f64 {
    let (v, k) = h.u.shape();
    let draw = PriorDraw::sample(t, v, k, &mut rng(seed)).unwrap();
    let x = h.compose(&draw).unwrap();
    let means: Vec<f64> = (0..v).map(|j| x.column(j).iter().sum::<f64>() / t as f64).collect();
    let mut emp = DMatrix::<f64>::zeros(v, v);
    for i in 0..t {
        let row = x.row_slice(i);
        for a in 0..v {
            for b in 0..v {
                emp[(a, b)] += (row[a] - means[a]) * (row[b] - means[b]);
            }
        }
    }
    emp /= (t - 1) as f64;
    let u = DMatrix::from_row_slice(v, k, h.u.data());
    let mut expected = &u * u.transpose();
    for j in 0..v {
        expected[(j, j)] += h.sigma[j].powi(2);
    }
    (&emp - &expected).norm() / expected.norm()
}
