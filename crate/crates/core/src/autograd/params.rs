//! Named trainable parameters, Adam state, and the text checkpoint format.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::graph::Graph;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Adam hyperparameters. Weight decay is decoupled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Validation(format!("duplicate parameter {name}")));
        }
        let (r, c) = value.shape();
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.clone(),
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Add `scale ·` the graph's parameter gradients into the stored grads.
    pub fn accumulate_grads(&mut self, graph: &Graph, scale: f64) {
        for (id, g) in graph.param_grads() {
            let acc = self.params[id.0].grad.data_mut();
            for (a, x) in acc.iter_mut().zip(g.data()) {
                *a += scale * x;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// One Adam step with bias correction. Decay `p ← p − lr·wd·p` is applied
    /// before the moment update; grads are zeroed afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            let n = p.value.len();
            let (value, grad) = (p.value.data_mut(), p.grad.data());
            let (m, v) = (p.m.data_mut(), p.v.data_mut());
            for i in 0..n {
                let g = grad[i];
                value[i] -= cfg.lr * cfg.weight_decay * value[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Text serialization: one `param <name> <rows> <cols>` line per
    /// parameter followed by a line of its values (shortest round-trip
    /// decimal form).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# evflow params v1");
        let _ = writeln!(out, "step {}", self.step);
        for p in &self.params {
            let _ = writeln!(out, "param {} {} {}", p.name, p.value.rows(), p.value.cols());
            let vals: Vec<String> = p.value.data().iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        while let Some((lineno, line)) = lines.next() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["step", n] => {
                    store.step = n.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad step count {n}"),
                    })?;
                }
                ["param", name, r, c] => {
                    let parse_dim = |s: &str| {
                        s.parse::<usize>().map_err(|_| Error::Parse {
                            line: lineno,
                            msg: format!("bad dimension {s}"),
                        })
                    };
                    let (rows, cols) = (parse_dim(r)?, parse_dim(c)?);
                    let (vline, values) = lines.next().ok_or_else(|| Error::Parse {
                        line: lineno,
                        msg: format!("missing values for {name}"),
                    })?;
                    let data = values
                        .split_whitespace()
                        .map(|s| {
                            s.parse::<f64>().map_err(|_| Error::Parse {
                                line: vline,
                                msg: format!("bad value {s}"),
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    let t = Tensor::new(rows, cols, data).map_err(|_| Error::Parse {
                        line: vline,
                        msg: format!("{name}: value count does not match {rows}x{cols}"),
                    })?;
                    store.insert(*name, t)?;
                }
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unexpected line {line:?}"),
                    })
                }
            }
        }
        Ok(store)
    }

    /// Copy values from `other` for every parameter with a matching name and shape.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let id = other
                .id(&p.name)
                .ok_or_else(|| Error::Validation(format!("checkpoint lacks parameter {}", p.name)))?;
            let src = other.value(id);
            if src.shape() != p.value.shape() {
                return Err(Error::Validation(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.value.shape(),
                    src.shape()
                )));
            }
            p.value = src.clone();
        }
        self.step = other.step;
        Ok(())
    }
}
