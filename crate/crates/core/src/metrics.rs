//! Evaluation metrics for generated series: amplitude error, spectral
//! discrepancy, functional-connectivity agreement, top-edge recovery, and a
//! Fréchet distance between Gaussians fitted to connectivity features.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::flow::POWER_FLOOR;
use crate::io::TimeSeries;
use crate::stats;

const CFID_RIDGE: f64 = 1e-6;

/// Mean absolute entrywise difference.
pub fn mae(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape("mae", format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

/// One-sided Welch spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub powers: Vec<f64>,
}

struct WelchPlan {
    seg_len: usize,
    step: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl WelchPlan {
    fn new(seg_len: usize, overlap: f64) -> Result<Self> {
        if seg_len < 8 {
            return Err(Error::Validation(format!("Welch segment length must be >= 8, got {seg_len}")));
        }
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::Validation(format!("overlap {overlap} outside [0, 1)")));
        }
        let step = ((seg_len as f64 * (1.0 - overlap)).round() as usize).max(1);
        // periodic Hann
        let window = (0..seg_len)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / seg_len as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(seg_len);
        Ok(Self {
            seg_len,
            step,
            window,
            fft,
        })
    }

    fn estimate(&self, x: &[f64], tr: f64) -> Result<Spectrum> {
        let n = self.seg_len;
        if x.len() < n {
            return Err(Error::Validation(format!(
                "Welch segment length {n} exceeds series length {}",
                x.len()
            )));
        }
        let fs = 1.0 / tr;
        let n_bins = n / 2 + 1;
        let win_power: f64 = self.window.iter().map(|w| w * w).sum();
        let mut acc = vec![0.0; n_bins];
        let mut n_seg = 0;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut start = 0;
        while start + n <= x.len() {
            let seg = &x[start..start + n];
            let mean = seg.iter().sum::<f64>() / n as f64;
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new((s - mean) * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b.norm_sqr();
            }
            n_seg += 1;
            start += self.step;
        }
        let scale = 1.0 / (fs * win_power * n_seg as f64);
        let powers = acc
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
                p * scale * one_sided
            })
            .collect();
        let freqs = (0..n_bins).map(|k| k as f64 * fs / n as f64).collect();
        Ok(Spectrum { freqs, powers })
    }
}

/// Welch PSD with a periodic Hann window, segment-mean removal, and
/// density scaling (`1 / (fs * sum w^2)`).
pub fn welch_psd(x: &[f64], tr: f64, seg_len: usize, overlap: f64) -> Result<Spectrum> {
    WelchPlan::new(seg_len, overlap)?.estimate(x, tr)
}

/// Mean over ROIs and in-band Welch bins of `|ln P_gen - ln P_real|`.
pub fn psd_discrepancy(x_gen: &Tensor, x_real: &Tensor, tr: f64, band: (f64, f64), seg_len: usize) -> Result<f64> {
    if x_gen.shape() != x_real.shape() {
        return Err(Error::shape("psd_discrepancy", format!("{:?} vs {:?}", x_gen.shape(), x_real.shape())));
    }
    let seg = seg_len.min(x_gen.rows());
    let plan = WelchPlan::new(seg, 0.5)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for j in 0..x_gen.cols() {
        let pg = plan.estimate(&x_gen.column(j), tr)?;
        let pr = plan.estimate(&x_real.column(j), tr)?;
        for (k, &f) in pg.freqs.iter().enumerate() {
            if f >= band.0 && f <= band.1 {
                total += (pg.powers[k].max(POWER_FLOOR).ln() - pr.powers[k].max(POWER_FLOOR).ln()).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Config(format!(
            "no Welch bins (segment {seg}, tr {tr}) inside [{}, {}] Hz",
            band.0, band.1
        )));
    }
    Ok(total / count as f64)
}

/// Symmetric Pearson connectivity matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct FcMatrix(Tensor);

impl FcMatrix {
    pub fn n_rois(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    /// Upper triangle (`i < j`) in row-major order.
    pub fn features(&self) -> FcFeature {
        let v = self.n_rois();
        let mut out = Vec::with_capacity(v * (v - 1) / 2);
        for i in 0..v {
            for j in i + 1..v {
                out.push(self.get(i, j));
            }
        }
        FcFeature(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcFeature(pub Vec<f64>);

/// Pearson connectivity; pairs touching a constant ROI are 0.
pub fn fc_matrix(x: &Tensor) -> Result<FcMatrix> {
    if x.rows() < 3 {
        return Err(Error::Validation(format!("fc_matrix needs T >= 3, got {}", x.rows())));
    }
    Ok(FcMatrix(stats::correlation_matrix(x)))
}

/// Pearson correlation between the upper triangles of two FC matrices.
pub fn fc_similarity(a: &FcMatrix, b: &FcMatrix) -> Result<f64> {
    if a.n_rois() != b.n_rois() {
        return Err(Error::shape("fc_similarity", format!("{} vs {} ROIs", a.n_rois(), b.n_rois())));
    }
    stats::pearson(&a.features().0, &b.features().0)
        .ok_or_else(|| Error::Validation("fc_similarity undefined for a constant FC feature vector".into()))
}

/// The `ceil(0.05 E)` upper-triangle edges with largest `|R|`, ties broken
/// lexicographically by `(i, j)`.
pub fn top_edges(a: &FcMatrix, fraction: f64) -> Vec<(usize, usize)> {
    let v = a.n_rois();
    let mut edges: Vec<(usize, usize)> = (0..v).flat_map(|i| (i + 1..v).map(move |j| (i, j))).collect();
    let m = (fraction * edges.len() as f64).ceil() as usize;
    edges.sort_by(|&(i1, j1), &(i2, j2)| {
        a.get(i2, j2)
            .abs()
            .total_cmp(&a.get(i1, j1).abs())
            .then((i1, j1).cmp(&(i2, j2)))
    });
    edges.truncate(m);
    edges
}

/// Fraction of `A`'s top-5% edges that are also among `B`'s.
pub fn p_at_top5(a: &FcMatrix, b: &FcMatrix) -> Result<f64> {
    if a.n_rois() != b.n_rois() {
        return Err(Error::shape("p_at_top5", format!("{} vs {} ROIs", a.n_rois(), b.n_rois())));
    }
    let v = a.n_rois();
    if 0.05 * ((v * (v - 1) / 2) as f64) < 1.0 {
        return Err(Error::Validation(format!("P@5% needs V >= 7, got {v}")));
    }
    let sa = top_edges(a, 0.05);
    let sb = top_edges(b, 0.05);
    let hits = sa.iter().filter(|e| sb.contains(e)).count();
    Ok(hits as f64 / sa.len() as f64)
}

fn fit_gaussian(samples: &[FcFeature]) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.len();
    let d = samples[0].0.len();
    let data = DMatrix::from_fn(n, d, |i, j| samples[i].0[j]);
    let mean = DVector::from_fn(d, |j, _| data.column(j).mean());
    let mut centered = data;
    for j in 0..d {
        let m = mean[j];
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    for j in 0..d {
        cov[(j, j)] += CFID_RIDGE;
    }
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let sq = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sq) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature populations:
/// `|mu_r - mu_g|^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2})`, with covariances
/// ridged by `1e-6 I` and the trace root taken through the symmetric form
/// `S_r^{1/2} S_g S_r^{1/2}`.
pub fn cfid(real: &[FcFeature], gen: &[FcFeature]) -> Result<f64> {
    if real.len() < 2 || gen.len() < 2 {
        return Err(Error::Validation(format!(
            "cfid needs at least 2 samples per set, got {} and {}",
            real.len(),
            gen.len()
        )));
    }
    let d = real[0].0.len();
    if real.iter().chain(gen).any(|f| f.0.len() != d) {
        return Err(Error::shape("cfid", "feature dimensions differ"));
    }
    let (mu_r, cov_r) = fit_gaussian(real);
    let (mu_g, cov_g) = fit_gaussian(gen);
    let root_r = sym_sqrt(&cov_r);
    let inner = &root_r * &cov_g * &root_r;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_root: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let mean_term = (&mu_r - &mu_g).norm_squared();
    Ok(mean_term + cov_r.trace() + cov_g.trace() - 2.0 * tr_root)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub band: (f64, f64),
    pub welch_seg_len: usize,
}

impl From<&crate::io::RunConfig> for EvalConfig {
    fn from(c: &crate::io::RunConfig) -> Self {
        Self {
            band: (c.band_lo, c.band_hi),
            welch_seg_len: c.welch_seg_len,
        }
    }
}

/// Subject-averaged metrics plus pooled cFID.
///
/// Metrics that are undefined for the inputs (P@5% below 7 ROIs, cFID with
/// fewer than two pairs, FC similarity on a constant map) are `None` or
/// averaged over the pairs where they exist; `notes` says why.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub n_subjects: usize,
    pub mae: f64,
    pub psd_disc: f64,
    pub fc_sim: Option<f64>,
    pub p_at_5: Option<f64>,
    pub cfid: Option<f64>,
    pub notes: Vec<String>,
}

pub const REPORT_HEADER: &str = "task,n,mae,psd,fc_sim,p_at_5,cfid";

impl MetricReport {
    pub fn csv_row(&self, task: &str) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "nan".to_string(), |v| format!("{v:?}"));
        format!(
            "{task},{},{:?},{:?},{},{},{}",
            self.n_subjects,
            self.mae,
            self.psd_disc,
            opt(self.fc_sim),
            opt(self.p_at_5),
            opt(self.cfid)
        )
    }
}

pub fn report_csv(rows: &[(String, MetricReport)]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for (task, r) in rows {
        let _ = writeln!(out, "{}", r.csv_row(task));
    }
    out
}

pub fn evaluate(real: &[TimeSeries], gen: &[TimeSeries], cfg: &EvalConfig) -> Result<MetricReport> {
    if real.is_empty() || gen.is_empty() {
        return Err(Error::Validation("evaluation sets are empty".into()));
    }
    if real.len() != gen.len() {
        return Err(Error::Validation(format!("{} real vs {} generated series", real.len(), gen.len())));
    }
    let n = real.len();
    let mut notes = Vec::new();
    let (mut mae_sum, mut psd_sum) = (0.0, 0.0);
    let (mut sim_sum, mut sim_n) = (0.0, 0usize);
    let (mut p5_sum, mut p5_n) = (0.0, 0usize);
    let mut feats_r = Vec::with_capacity(n);
    let mut feats_g = Vec::with_capacity(n);
    for (idx, (r, g)) in real.iter().zip(gen).enumerate() {
        let (xr, xg) = (r.data(), g.data());
        mae_sum += mae(xg, xr)?;
        psd_sum += psd_discrepancy(xg, xr, r.tr(), cfg.band, cfg.welch_seg_len)?;
        let (fr, fg) = (fc_matrix(xr)?, fc_matrix(xg)?);
        match fc_similarity(&fr, &fg) {
            Ok(s) => {
                sim_sum += s;
                sim_n += 1;
            }
            Err(e) => notes.push(format!("pair {idx}: {e}")),
        }
        match p_at_top5(&fr, &fg) {
            Ok(p) => {
                p5_sum += p;
                p5_n += 1;
            }
            Err(e) => {
                if p5_n == 0 && idx == 0 {
                    notes.push(format!("p_at_5: {e}"));
                }
            }
        }
        feats_r.push(fr.features());
        feats_g.push(fg.features());
    }
    let cfid = match cfid(&feats_r, &feats_g) {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("cfid: {e}"));
            None
        }
    };
    Ok(MetricReport {
        n_subjects: n,
        mae: mae_sum / n as f64,
        psd_disc: psd_sum / n as f64,
        fc_sim: (sim_n > 0).then(|| sim_sum / sim_n as f64),
        p_at_5: (p5_n > 0).then(|| p5_sum / p5_n as f64),
        cfid,
        notes,
    })
}
