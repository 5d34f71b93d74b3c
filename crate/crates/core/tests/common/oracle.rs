//! Brute-force reference implementations of the evaluation metrics and a
//! small paired toy set for checking them.

use std::f64::consts::PI;

use super::{pearson, rng};
use evflow::autograd::Tensor;
use evflow::io::TimeSeries;
use evflow::metrics::EvalConfig;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const TR: f64 = 0.72;
pub const BAND: (f64, f64) = (0.01, 0.05);
pub const SEG: usize = 64;

pub fn ref_welch(x: &[f64], tr: f64, seg: usize) -> (Vec<f64>, Vec<f64>) {
    let win: Vec<f64> = (0..seg).map(|n| (PI * n as f64 / seg as f64).sin().powi(2)).collect();
    let u: f64 = win.iter().map(|w| w * w).sum();
    let bins = seg / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut count = 0.0;
    let mut start = 0;
    while start + seg <= x.len() {
        let s = &x[start..start + seg];
        let m = s.iter().sum::<f64>() / seg as f64;
        for (k, a) in acc.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..seg {
                let ang = 2.0 * PI * (k * n) as f64 / seg as f64;
                let y = (s[n] - m) * win[n];
                re += y * ang.cos();
                im -= y * ang.sin();
            }
            let edge = k == 0 || 2 * k == seg;
            *a += (re * re + im * im) * if edge { 1.0 } else { 2.0 };
        }
        count += 1.0;
        start += seg / 2;
    }
    let freqs = (0..bins).map(|k| k as f64 / (seg as f64 * tr)).collect();
    let powers = acc.iter().map(|a| a * tr / (u * count)).collect();
    (freqs, powers)
}

pub fn ref_psd_disc(g: &Tensor, r: &Tensor) -> f64 {
    let seg = SEG.min(g.rows());
    let (mut total, mut n) = (0.0, 0.0);
    for j in 0..g.cols() {
        let (f, pg) = ref_welch(&g.column(j), TR, seg);
        let (_, pr) = ref_welch(&r.column(j), TR, seg);
        for k in 0..f.len() {
            if f[k] >= BAND.0 && f[k] <= BAND.1 {
                total += (pg[k].ln() - pr[k].ln()).abs();
                n += 1.0;
            }
        }
    }
    total / n
}

pub fn ref_fc(x: &Tensor) -> Vec<Vec<f64>> {
    let v = x.cols();
    (0..v)
        .map(|i| (0..v).map(|j| if i == j { 1.0 } else { pearson(&x.column(i), &x.column(j)) }).collect())
        .collect()
}

pub fn upper(r: &[Vec<f64>]) -> Vec<f64> {
    let v = r.len();
    (0..v).flat_map(|i| (i + 1..v).map(move |j| r[i][j])).collect()
}

/// Top `ceil(0.05 E)` edges by |R|: an edge is in the set when fewer than
/// that many edges strictly precede it in the (|R| desc, (i, j) asc) order.
pub fn ref_top(r: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let v = r.len();
    let edges: Vec<(usize, usize)> = (0..v).flat_map(|i| (i + 1..v).map(move |j| (i, j))).collect();
    let m = (0.05 * edges.len() as f64).ceil() as usize;
    edges
        .iter()
        .copied()
        .filter(|&(i, j)| {
            let before = edges
                .iter()
                .filter(|&&(a, b)| r[a][b].abs() > r[i][j].abs() || (r[a][b].abs() == r[i][j].abs() && (a, b) < (i, j)))
                .count();
            before < m
        })
        .collect()
}

pub fn ref_p5(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let ta = ref_top(a);
    let tb = ref_top(b);
    ta.iter().filter(|e| tb.contains(e)).count() as f64 / ta.len() as f64
}

pub fn gaussian(feats: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = feats.len();
    let d = feats[0].len();
    let mut mean = DVector::zeros(d);
    for f in feats {
        mean += DVector::from_column_slice(f);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in feats {
        let c = DVector::from_column_slice(f) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    cov += DMatrix::identity(d, d) * 1e-6;
    (mean, cov)
}

/// Matrix square root by the Denman–Beavers iteration.
pub fn sqrtm_db(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.norm() {
            break;
        }
    }
    y
}

/// Fréchet distance with the trace root taken from the eigenvalues of the
/// non-symmetric product `S_r S_g`.
pub fn ref_cfid(real: &[Vec<f64>], gen: &[Vec<f64>]) -> f64 {
    let (mr, cr) = gaussian(real);
    let (mg, cg) = gaussian(gen);
    let prod = &cr * &cg;
    let tr_root: f64 = prod.complex_eigenvalues().iter().map(|l| l.re.max(0.0).sqrt()).sum();
    (&mr - &mg).norm_squared() + cr.trace() + cg.trace() - 2.0 * tr_root
}

pub fn toy_pair(seed: u64, v: usize, t: usize) -> (TimeSeries, TimeSeries) {
    let mut r = rng(seed);
    let mix = Tensor::standard_normal(v, v, &mut r).map(|x| 0.5 * x);
    let base = Tensor::standard_normal(t, v, &mut r).matmul(&mix).unwrap();
    let real = Tensor::from_fn(t, v, |i, j| base.get(i, j) + (i as f64 * 0.1 * (j + 1) as f64).sin());
    let gain: f64 = r.random_range(0.6..1.6);
    let noise = Tensor::standard_normal(t, v, &mut r);
    let gen = Tensor::from_fn(t, v, |i, j| gain * real.get(i, j) + 0.7 * noise.get(i, j));
    (TimeSeries::new(real, TR).unwrap(), TimeSeries::new(gen, TR).unwrap())
}

pub fn toy_set(n: usize, v: usize, t: usize) -> (Vec<TimeSeries>, Vec<TimeSeries>) {
    (0..n).map(|s| toy_pair(100 + s as u64, v, t)).unzip()
}

pub fn eval_cfg() -> EvalConfig {
    EvalConfig {
        band: BAND,
        welch_seg_len: SEG,
    }
}

/// Per-pair mean of every metric, computed with the references above:
/// `(mae, psd_disc, fc_sim, p_at_5, cfid)`.
pub fn reference_report(real: &[TimeSeries], gen: &[TimeSeries]) -> (f64, f64, f64, f64, f64) {
    let n = real.len() as f64;
    let (mut mae, mut psd, mut sim, mut p5) = (0.0, 0.0, 0.0, 0.0);
    let (mut fr, mut fg) = (Vec::new(), Vec::new());
    for (r, g) in real.iter().zip(gen) {
        let (xr, xg) = (r.data(), g.data());
        let abs: f64 = xr.data().iter().zip(xg.data()).map(|(a, b)| (a - b).abs()).sum();
        mae += abs / xr.len() as f64;
        psd += ref_psd_disc(xg, xr);
        let (cr, cg) = (ref_fc(xr), ref_fc(xg));
        sim += pearson(&upper(&cr), &upper(&cg));
        p5 += ref_p5(&cr, &cg);
        fr.push(upper(&cr));
        fg.push(upper(&cg));
    }
    (mae / n, psd / n, sim / n, p5 / n, ref_cfid(&fr, &fg))
}
