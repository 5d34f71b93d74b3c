//! Small numeric helpers shared by losses, metrics and data generation.

use crate::autograd::Tensor;

/// Column is treated as constant when its std falls below this (relative) level.
const ZERO_VAR_REL: f64 = 1e-12;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

pub fn is_constant(x: &[f64]) -> bool {
    let m = mean(x);
    variance(x).sqrt() <= ZERO_VAR_REL * m.abs().max(1.0)
}

/// Pearson correlation; `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if is_constant(x) || is_constant(y) {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-column Pearson correlation of a `T×V` matrix. Pairs touching a
/// constant column are 0; the diagonal is 1.
pub fn correlation_matrix(x: &Tensor) -> Tensor {
    let v = x.cols();
    let cols: Vec<Vec<f64>> = (0..v).map(|j| x.column(j)).collect();
    let mut r = Tensor::zeros(v, v);
    for i in 0..v {
        r.set(i, i, 1.0);
        for j in i + 1..v {
            let c = pearson(&cols[i], &cols[j]).unwrap_or(0.0);
            r.set(i, j, c);
            r.set(j, i, c);
        }
    }
    r
}

/// Indices of constant columns.
pub fn constant_columns(x: &Tensor) -> Vec<usize> {
    (0..x.cols()).filter(|&j| is_constant(&x.column(j))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_pearson() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[3.0, 2.0, 1.0]), None);
    }
}
