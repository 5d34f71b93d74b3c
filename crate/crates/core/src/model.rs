//! The full conditional model and its on-disk checkpoint.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamStore, Tensor, Var};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::events::EventEmbedParams;
use crate::io::{for_each_assignment, normalize_events, EventSchedule, NormalizedEvent, RunConfig};
use crate::prior::{PriorDraw, PriorParams};
use crate::velocity::{TokenInput, VelocityParams};

/// Data-dependent facts the network shapes depend on.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMeta {
    pub n_rois: usize,
    pub task_len: usize,
    pub tr: f64,
    pub vocab: Vec<String>,
}

impl ModelMeta {
    fn to_text(&self) -> String {
        format!(
            "n_rois = {}\ntask_len = {}\ntr = {:?}\nvocab = {}\n",
            self.n_rois,
            self.task_len,
            self.tr,
            self.vocab.join(",")
        )
    }

    fn from_text(text: &str) -> Result<Self> {
        let (mut n_rois, mut task_len, mut tr, mut vocab) = (None, None, None, Vec::new());
        for_each_assignment(text, |line, k, v| {
            let bad = || Error::Parse {
                line,
                msg: format!("bad value {v:?} for {k}"),
            };
            match k {
                "n_rois" => n_rois = Some(v.parse().map_err(|_| bad())?),
                "task_len" => task_len = Some(v.parse().map_err(|_| bad())?),
                "tr" => tr = Some(v.parse().map_err(|_| bad())?),
                "vocab" => {
                    vocab = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect()
                }
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown key {k:?}"),
                    })
                }
            }
            Ok(())
        })?;
        let missing = |k: &str| Error::Validation(format!("model metadata lacks {k}"));
        Ok(Self {
            n_rois: n_rois.ok_or_else(|| missing("n_rois"))?,
            task_len: task_len.ok_or_else(|| missing("task_len"))?,
            tr: tr.ok_or_else(|| missing("tr"))?,
            vocab,
        })
    }
}

/// Graph nodes produced by one training item.
#[derive(Clone, Copy, Debug)]
pub struct ItemNodes {
    pub context: Var,
    pub x0: Var,
    pub x_t: Var,
    pub v_pred: Var,
    pub v_star: Var,
    pub x_hat1: Var,
}

#[derive(Clone, Debug)]
pub struct FlowModel {
    pub config: RunConfig,
    pub meta: ModelMeta,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub prior: PriorParams,
    pub events: Option<EventEmbedParams>,
    pub velocity: VelocityParams,
}

impl FlowModel {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: RunConfig, meta: ModelMeta, seed: u64) -> Result<Self> {
        config.validate()?;
        if meta.n_rois < 2 {
            return Err(Error::Validation(format!("need at least 2 ROIs, got {}", meta.n_rois)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, &config, meta.n_rois, &mut rng)?;
        let prior = PriorParams::new(&mut store, &config, meta.n_rois, &mut rng)?;
        let events = if config.use_events && !meta.vocab.is_empty() {
            Some(EventEmbedParams::new(&mut store, &config, meta.vocab.len(), &mut rng)?)
        } else {
            None
        };
        let velocity = VelocityParams::new(&mut store, &config, meta.n_rois, &mut rng)?;
        Ok(Self {
            config,
            meta,
            store,
            encoder,
            prior,
            events,
            velocity,
        })
    }

    /// Normalized events for a schedule, checked against the model vocabulary.
    /// Returns an empty list when the model ignores events.
    pub fn prepare_events(&self, schedule: &EventSchedule) -> Result<Vec<NormalizedEvent>> {
        if schedule.is_empty() || self.events.is_none() {
            return Ok(Vec::new());
        }
        if schedule.vocab() != self.meta.vocab.as_slice() {
            for label in schedule.vocab() {
                if !self.meta.vocab.contains(label) {
                    return Err(Error::Validation(format!("unknown condition label {label:?}")));
                }
            }
        }
        let mut normalized = normalize_events(schedule)?;
        for (ev, raw) in normalized.iter_mut().zip(schedule.events()) {
            ev.condition_id = self
                .meta
                .vocab
                .iter()
                .position(|v| *v == raw.condition)
                .ok_or_else(|| Error::Validation(format!("unknown condition label {:?}", raw.condition)))?;
        }
        Ok(normalized)
    }

    /// Event tokens in the graph, or `None` for the event-free path.
    pub fn tokens(&self, g: &mut Graph, events: &[NormalizedEvent]) -> Result<Option<(Var, Vec<bool>)>> {
        match &self.events {
            Some(p) if !events.is_empty() => Ok(Some(p.forward(g, &self.store, events, events.len())?)),
            _ => Ok(None),
        }
    }

    /// Velocity prediction at `(t, x)` given precomputed context and tokens.
    pub fn velocity_graph(
        &self,
        g: &mut Graph,
        t: Var,
        x: Var,
        c: Var,
        tokens: Option<&(Var, Vec<bool>)>,
    ) -> Result<Var> {
        let tok = tokens.map(|(v, m)| TokenInput { tokens: *v, mask: m });
        self.velocity.forward(g, &self.store, t, x, c, tok)
    }

    /// Forward pass of one training item at interpolation time `t`.
    pub fn item_graph(
        &self,
        g: &mut Graph,
        rest: Var,
        x1: Var,
        events: &[NormalizedEvent],
        draw: &PriorDraw,
        t: f64,
    ) -> Result<ItemNodes> {
        let context = self.encoder.forward(g, &self.store, rest)?;
        let x0 = self.prior.forward(g, &self.store, context, draw)?;
        let a = g.scale(x0, 1.0 - t)?;
        let b = g.scale(x1, t)?;
        let x_t = g.add(a, b)?;
        let v_star = g.sub(x1, x0)?;
        let tokens = self.tokens(g, events)?;
        let tv = g.constant(Tensor::scalar(t))?;
        let v_pred = self.velocity_graph(g, tv, x_t, context, tokens.as_ref())?;
        let x_hat1 = crate::flow::one_step_x1_graph(g, x_t, t, v_pred)?;
        Ok(ItemNodes {
            context,
            x0,
            x_t,
            v_pred,
            v_star,
            x_hat1,
        })
    }

    /// Write `params.txt`, `config.txt` and `meta.txt` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("params.txt", self.store.to_text())?;
        write("config.txt", self.config.to_text())?;
        write("meta.txt", self.meta.to_text())?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let config = RunConfig::from_text(&read("config.txt")?)?;
        let meta = ModelMeta::from_text(&read("meta.txt")?)?;
        let stored = ParamStore::from_text(&read("params.txt")?)?;
        let mut model = FlowModel::new(config, meta, 0)?;
        if stored.len() != model.store.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} parameters, model expects {}",
                stored.len(),
                model.store.len()
            )));
        }
        model.store.load_values(&stored)?;
        Ok(model)
    }
}

/// Loss history as CSV with header `epoch,fm,fc,psd,total`.
pub fn loss_history_csv(history: &[crate::flow::EpochLoss]) -> String {
    let mut out = String::from("epoch,fm,fc,psd,total\n");
    for h in history {
        let _ = writeln!(out, "{},{:?},{:?},{:?},{:?}", h.epoch, h.fm, h.fc, h.psd, h.total);
    }
    out
}
