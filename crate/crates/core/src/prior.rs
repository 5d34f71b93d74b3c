//! Rest-conditioned structured prior
//! `x0 = mu(c) + sigma(c) * eps_colored + U(c) z_t`, `z_t ~ N(0, I_K)` per timepoint.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::autograd::{Graph, ParamStore, Tensor, Var};
use crate::encoder::ContextEmbedding;
use crate::error::{Error, Result};
use crate::io::RunConfig;
use crate::nn::Dense;

/// `T×V` noise whose columns have power spectral density `∝ 1/f`.
///
/// Each column is shaped independently in the frequency domain: complex
/// Gaussian coefficients at positive frequencies scaled by `1/sqrt(f)`, zero
/// DC, Hermitian completion, inverse FFT, then standardized to mean 0 and
/// unit (population) variance.
pub fn colored_noise<R: Rng + ?Sized>(t: usize, v: usize, rng: &mut R) -> Result<Tensor> {
    if t < 4 {
        return Err(Error::Validation(format!("colored noise needs T >= 4, got {t}")));
    }
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(t);
    let half = t / 2;
    let mut out = Tensor::zeros(t, v);
    let mut spec = vec![Complex64::new(0.0, 0.0); t];
    for col in 0..v {
        spec.fill(Complex64::new(0.0, 0.0));
        for k in 1..=half {
            let amp = 1.0 / (k as f64 / t as f64).sqrt();
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            // the Nyquist bin of an even-length signal must be real
            let im = if 2 * k == t { 0.0 } else { im };
            spec[k] = Complex64::new(re, im) * amp;
            if 2 * k != t {
                spec[t - k] = spec[k].conj();
            }
        }
        ifft.process(&mut spec);
        let col_vals: Vec<f64> = spec.iter().map(|c| c.re).collect();
        let mean = col_vals.iter().sum::<f64>() / t as f64;
        let var = col_vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64;
        let inv = 1.0 / var.sqrt();
        for (i, x) in col_vals.iter().enumerate() {
            out.set(i, col, (x - mean) * inv);
        }
    }
    Ok(out)
}

/// Noise draws consumed by one prior sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorDraw {
    /// `T×V` colored noise.
    pub eps: Tensor,
    /// `T×K` standard normal factor scores.
    pub z: Tensor,
}

impl PriorDraw {
    pub fn sample<R: Rng + ?Sized>(t: usize, v: usize, k: usize, rng: &mut R) -> Result<Self> {
        let eps = colored_noise(t, v, rng)?;
        let z = Tensor::standard_normal(t, k, rng);
        Ok(Self { eps, z })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorSample {
    pub x0: Tensor,
    pub draw: PriorDraw,
}

/// Evaluated prior heads for one context.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorHeads {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `V×K`.
    pub u: Tensor,
}

impl PriorHeads {
    /// Assemble `x0` from fixed heads and draws (no graph).
    pub fn compose(&self, draw: &PriorDraw) -> Result<Tensor> {
        let (t, v) = draw.eps.shape();
        if v != self.mu.len() || self.u.shape() != (v, draw.z.cols()) || draw.z.rows() != t {
            return Err(Error::shape(
                "sample_prior",
                format!(
                    "eps {:?}, z {:?}, mu {}, U {:?}",
                    draw.eps.shape(),
                    draw.z.shape(),
                    self.mu.len(),
                    self.u.shape()
                ),
            ));
        }
        let low_rank = draw.z.matmul(&self.u.transpose())?;
        Ok(Tensor::from_fn(t, v, |i, j| {
            self.mu[j] + self.sigma[j] * draw.eps.get(i, j) + low_rank.get(i, j)
        }))
    }
}

/// Heads mapping the context to `mu` (V), `sigma` (V, softplus) and `U` (V×K).
#[derive(Clone, Debug)]
pub struct PriorParams {
    mean: Dense,
    scale: Dense,
    factor: Dense,
    n_rois: usize,
    rank: usize,
}

/// Graph nodes of the evaluated heads.
#[derive(Clone, Copy, Debug)]
pub struct PriorHeadVars {
    pub mu: Var,
    pub sigma: Var,
    pub u: Var,
}

impl PriorParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &RunConfig, n_rois: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            mean: Dense::new(store, "prior.mean", cfg.d_c, n_rois, rng)?,
            scale: Dense::new(store, "prior.scale", cfg.d_c, n_rois, rng)?,
            factor: Dense::new(store, "prior.factor", cfg.d_c, n_rois * cfg.rank_k, rng)?,
            n_rois,
            rank: cfg.rank_k,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_rois(&self) -> usize {
        self.n_rois
    }

    pub fn heads_graph(&self, g: &mut Graph, store: &ParamStore, c: Var) -> Result<PriorHeadVars> {
        let mu = self.mean.forward(g, store, c)?;
        let pre = self.scale.forward(g, store, c)?;
        let sigma = g.softplus(pre)?;
        let flat = self.factor.forward(g, store, c)?;
        let u = g.reshape(flat, self.n_rois, self.rank)?;
        Ok(PriorHeadVars { mu, sigma, u })
    }

    /// Reparameterized `x0` in the graph; the draws are constants.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, c: Var, draw: &PriorDraw) -> Result<Var> {
        let heads = self.heads_graph(g, store, c)?;
        compose_graph(g, heads, draw)
    }

    pub fn heads(&self, c: &ContextEmbedding, store: &ParamStore) -> Result<PriorHeads> {
        let mut g = Graph::new();
        let cv = g.constant(c.as_tensor())?;
        let h = self.heads_graph(&mut g, store, cv)?;
        Ok(PriorHeads {
            mu: g.value(h.mu).data().to_vec(),
            sigma: g.value(h.sigma).data().to_vec(),
            u: g.value(h.u).clone(),
        })
    }
}

pub(crate) fn compose_graph(g: &mut Graph, heads: PriorHeadVars, draw: &PriorDraw) -> Result<Var> {
    let t = draw.eps.rows();
    let eps = g.constant(draw.eps.clone())?;
    let z = g.constant(draw.z.clone())?;
    let mu = g.broadcast_rows(heads.mu, t)?;
    let sigma = g.broadcast_rows(heads.sigma, t)?;
    let scaled = g.mul(sigma, eps)?;
    let ut = g.transpose(heads.u)?;
    let low_rank = g.matmul(z, ut)?;
    let x = g.add(mu, scaled)?;
    g.add(x, low_rank)
}

/// Draw `x0` for a `T`-timepoint series from the prior at context `c`.
pub fn sample_prior<R: Rng + ?Sized>(
    c: &ContextEmbedding,
    params: &PriorParams,
    store: &ParamStore,
    t: usize,
    rng: &mut R,
) -> Result<PriorSample> {
    let draw = PriorDraw::sample(t, params.n_rois, params.rank, rng)?;
    let x0 = params.heads(c, store)?.compose(&draw)?;
    Ok(PriorSample { x0, draw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn columns_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = colored_noise(257, 4, &mut rng).unwrap();
        for j in 0..4 {
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / 257.0;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 257.0;
            assert!(m.abs() <= 1e-9);
            assert!((var - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn too_short_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(colored_noise(3, 2, &mut rng).is_err());
    }

    #[test]
    fn seeded_noise_is_bit_identical() {
        let a = colored_noise(64, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = colored_noise(64, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_heads_give_mean_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draw = PriorDraw::sample(16, 3, 2, &mut rng).unwrap();
        let heads = PriorHeads {
            mu: vec![1.0, -2.0, 0.5],
            sigma: vec![0.0; 3],
            u: Tensor::zeros(3, 2),
        };
        let x0 = heads.compose(&draw).unwrap();
        for i in 0..16 {
            assert_eq!(x0.row_slice(i), &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn graph_and_plain_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = RunConfig {
            d_c: 6,
            rank_k: 2,
            ..RunConfig::default()
        };
        let mut store = ParamStore::new();
        let p = PriorParams::new(&mut store, &cfg, 3, &mut rng).unwrap();
        let c = ContextEmbedding(vec![0.3, -0.1, 0.8, 0.0, 0.5, -0.7]);
        let draw = PriorDraw::sample(8, 3, 2, &mut rng).unwrap();
        let plain = p.heads(&c, &store).unwrap().compose(&draw).unwrap();
        let mut g = Graph::new();
        let cv = g.constant(c.as_tensor()).unwrap();
        let x = p.forward(&mut g, &store, cv, &draw).unwrap();
        assert!(g.value(x).max_abs_diff(&plain) < 1e-14);
        assert!(p.heads(&c, &store).unwrap().sigma.iter().all(|s| *s > 0.0));
    }
}
