#![allow(dead_code)]

use evflow::autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use evflow::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub mod geometry;
pub mod oracle;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - n|_2 / max(|a|_2, |n|_2)`, zero when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d = na.max(nn);
    if d == 0.0 {
        0.0
    } else {
        diff / d
    }
}

fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(out);
    let w = Tensor::standard_normal(r, c, &mut rng(seed));
    let w = g.constant(w)?;
    let p = g.mul(out, w)?;
    g.sum(p)
}

/// Scalar `sum(W ⊙ f(inputs))` with a fixed random `W`; returns the worst
/// normwise relative error over inputs between backward and central
/// differences.
pub fn check_fn(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone()).unwrap()).collect();
        let out = build(&mut g, &vars).unwrap();
        let loss = project(&mut g, out, 99).unwrap();
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone()).unwrap()).collect();
    let out = build(&mut g, &vars).unwrap();
    let loss = project(&mut g, out, 99).unwrap();
    g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v);
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += H;
            let up = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * H;
            let down = eval(&xs);
            *n = (up - down) / (2.0 * H);
        }
        worst = worst.max(rel_err(analytic.data(), &numeric));
    }
    worst
}

/// Central-difference gradient of a plain scalar function.
pub fn fd_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + H;
            let up = f(&xs);
            xs[i] = orig - H;
            let down = f(&xs);
            xs[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Pearson correlation written out directly.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Analytic and central-difference gradients of `sum(W ⊙ build(store))`
/// with respect to each parameter in `ids`.
pub fn param_grads_fd(
    store: &mut ParamStore,
    ids: &[ParamId],
    build: impl Fn(&mut Graph, &ParamStore) -> Result<Var>,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let eval = |s: &ParamStore| -> f64 {
        let mut g = Graph::new();
        let out = build(&mut g, s).unwrap();
        let loss = project(&mut g, out, 99).unwrap();
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let out = build(&mut g, store).unwrap();
    let loss = project(&mut g, out, 99).unwrap();
    g.backward(loss).unwrap();
    let grads = g.param_grads();
    let mut out = Vec::new();
    for &id in ids {
        let n = store.value(id).len();
        let analytic = grads
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, t)| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let mut numeric = vec![0.0; n];
        for (i, num) in numeric.iter_mut().enumerate() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + H;
            let up = eval(store);
            store.value_mut(id).data_mut()[i] = orig - H;
            let down = eval(store);
            store.value_mut(id).data_mut()[i] = orig;
            *num = (up - down) / (2.0 * H);
        }
        out.push((analytic, numeric));
    }
    out
}

/// Worst per-parameter relative error of [`param_grads_fd`].
pub fn check_params(
    store: &mut ParamStore,
    ids: &[ParamId],
    build: impl Fn(&mut Graph, &ParamStore) -> Result<Var>,
) -> f64 {
    param_grads_fd(store, ids, build)
        .iter()
        .map(|(a, n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Relative error of [`param_grads_fd`] over all of `ids` as one vector.
pub fn check_params_joint(
    store: &mut ParamStore,
    ids: &[ParamId],
    build: impl Fn(&mut Graph, &ParamStore) -> Result<Var>,
) -> f64 {
    let (a, n): (Vec<Vec<f64>>, Vec<Vec<f64>>) = param_grads_fd(store, ids, build).into_iter().unzip();
    rel_err(&a.concat(), &n.concat())
}
