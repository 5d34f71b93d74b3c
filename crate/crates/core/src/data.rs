//! Synthetic paired (rest, task, schedule) data with a known, learnable
//! rest-to-task mapping, and the on-disk dataset layout
//! `<root>/<subject>/{rest.ts, task.ts, events/<condition>.ev}`.
//!
//! Each subject owns a spatial mixing matrix (shared base plus a subject
//! perturbation). Rest is 1/f noise mixed through it; the task baseline is
//! an independent 1/f draw through the same mixing, to which each event adds
//! its condition's spatial pattern times a boxcar smoothed by a truncated
//! Gaussian kernel, plus white observation noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::io::{for_each_assignment, load_event_dir, load_timeseries, save_event_dir, save_timeseries, EventSchedule, RawEvent, TimeSeries};
use crate::prior::colored_noise;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_rois: usize,
    pub t_rest: usize,
    pub t_task: usize,
    pub tr: f64,
    pub n_subjects: usize,
    pub n_conditions: usize,
    pub events_per_run: usize,
    /// Event duration in TRs.
    pub event_duration: usize,
    /// Seed for the shared mixing base and condition patterns.
    pub mixing_seed: u64,
    /// Scale of the per-subject mixing perturbation.
    pub subject_variability: f64,
    /// Std of white observation noise.
    pub noise: f64,
    /// Gaussian kernel std in TRs.
    pub kernel_width: f64,
    /// Scale of the condition response patterns.
    pub response_gain: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_rois: 10,
            t_rest: 128,
            t_task: 128,
            tr: 0.72,
            n_subjects: 20,
            n_conditions: 2,
            events_per_run: 4,
            event_duration: 8,
            mixing_seed: 7,
            subject_variability: 0.3,
            noise: 0.1,
            kernel_width: 2.0,
            response_gain: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_rois < 2 || self.t_rest < 4 || self.t_task < 4 || self.n_subjects == 0 || self.n_conditions == 0 {
            return Err(Error::Validation(format!(
                "synthetic spec needs n_rois>=2, t_rest>=4, t_task>=4, n_subjects>=1, n_conditions>=1: {self:?}"
            )));
        }
        if !(self.tr > 0.0) || self.noise < 0.0 || self.subject_variability < 0.0 || !(self.kernel_width > 0.0) {
            return Err(Error::Validation(format!("invalid synthetic spec {self:?}")));
        }
        if self.events_per_run > 0 && self.event_duration == 0 {
            return Err(Error::Validation("event_duration must be positive".into()));
        }
        if self.events_per_run > 0 && self.slot_len() < self.event_duration + 1 {
            return Err(Error::Validation(format!(
                "{} events of {} TRs do not fit in {} timepoints",
                self.events_per_run, self.event_duration, self.t_task
            )));
        }
        Ok(())
    }

    fn slot_len(&self) -> usize {
        self.t_task / self.events_per_run.max(1)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = SynthSpec::default();
        for_each_assignment(text, |line, k, v| {
            let bad = || Error::Config(format!("line {line}: bad value {v:?} for {k}"));
            match k {
                "n_rois" => s.n_rois = v.parse().map_err(|_| bad())?,
                "t_rest" => s.t_rest = v.parse().map_err(|_| bad())?,
                "t_task" => s.t_task = v.parse().map_err(|_| bad())?,
                "tr" => s.tr = v.parse().map_err(|_| bad())?,
                "n_subjects" => s.n_subjects = v.parse().map_err(|_| bad())?,
                "n_conditions" => s.n_conditions = v.parse().map_err(|_| bad())?,
                "events_per_run" => s.events_per_run = v.parse().map_err(|_| bad())?,
                "event_duration" => s.event_duration = v.parse().map_err(|_| bad())?,
                "mixing_seed" => s.mixing_seed = v.parse().map_err(|_| bad())?,
                "subject_variability" => s.subject_variability = v.parse().map_err(|_| bad())?,
                "noise" => s.noise = v.parse().map_err(|_| bad())?,
                "kernel_width" => s.kernel_width = v.parse().map_err(|_| bad())?,
                "response_gain" => s.response_gain = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("line {line}: unknown key {k:?}"))),
            }
            Ok(())
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn condition_labels(&self) -> Vec<String> {
        (0..self.n_conditions).map(|c| format!("cond{c}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectPair {
    pub subject_id: String,
    pub rest: TimeSeries,
    pub task: TimeSeries,
    pub schedule: EventSchedule,
}

/// Ground-truth pieces behind one generated subject.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectParts {
    pub mixing: Tensor,
    pub baseline: Tensor,
    pub response: Tensor,
}

/// Shared structure drawn from `mixing_seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthBase {
    /// `V×V` base mixing.
    pub mixing: Tensor,
    /// `n_conditions×V` response patterns.
    pub patterns: Tensor,
}

impl SynthBase {
    pub fn new(spec: &SynthSpec) -> Self {
        let v = spec.n_rois;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.mixing_seed);
        // identity plus a rank-2 component gives a few strong network blocks
        let loadings = Tensor::standard_normal(v, 2, &mut rng);
        let mixing = Tensor::from_fn(v, v, |i, j| {
            let block = loadings.get(i, 0) * loadings.get(j, 0) + loadings.get(i, 1) * loadings.get(j, 1);
            let diag = if i == j { 1.0 } else { 0.0 };
            diag + 0.6 * block
        });
        let patterns = Tensor::standard_normal(spec.n_conditions, v, &mut rng).map(|x| x * spec.response_gain);
        Self { mixing, patterns }
    }

    /// Subject mixing: base plus `subject_variability`-scaled Gaussian noise.
    pub fn subject_mixing<R: Rng + ?Sized>(&self, spec: &SynthSpec, rng: &mut R) -> Tensor {
        let v = spec.n_rois;
        let scale = spec.subject_variability / (v as f64).sqrt();
        let mut m = self.mixing.clone();
        for x in m.data_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *x += scale * e;
        }
        m
    }
}

/// Unit-area truncated (±3 sigma) Gaussian.
fn gaussian_kernel(width: f64) -> Vec<f64> {
    let half = (3.0 * width).ceil() as isize;
    let raw: Vec<f64> = (-half..=half).map(|i| (-0.5 * (i as f64 / width).powi(2)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Boxcar of `duration` TRs starting at `onset`, smoothed by the kernel, on a
/// length-`t` grid.
pub fn event_waveform(t: usize, onset: usize, duration: usize, kernel_width: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(kernel_width);
    let half = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; t];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let src = i as isize + k as isize - half;
            if src >= onset as isize && src < (onset + duration) as isize {
                acc += w;
            }
        }
        *o = acc;
    }
    out
}

/// Generate one subject given its mixing matrix.
pub fn gen_subject<R: Rng + ?Sized>(
    spec: &SynthSpec,
    base: &SynthBase,
    mixing: &Tensor,
    subject_id: &str,
    rng: &mut R,
) -> Result<(SubjectPair, SubjectParts)> {
    spec.validate()?;
    let (v, t) = (spec.n_rois, spec.t_task);
    let mt = mixing.transpose();
    let rest = colored_noise(spec.t_rest, v, rng)?.matmul(&mt)?;
    let baseline = colored_noise(t, v, rng)?.matmul(&mt)?;

    let labels = spec.condition_labels();
    let mut events = Vec::with_capacity(spec.events_per_run);
    let mut response = Tensor::zeros(t, v);
    let slot = spec.slot_len();
    for e in 0..spec.events_per_run {
        let cond = rng.random_range(0..spec.n_conditions);
        let latest = slot - spec.event_duration;
        let onset = e * slot + rng.random_range(0..=latest);
        let amplitude: f64 = rng.random_range(0.5..1.5);
        events.push(RawEvent::new(
            onset as f64 * spec.tr,
            spec.event_duration as f64 * spec.tr,
            amplitude,
            labels[cond].clone(),
        )?);
        let wave = event_waveform(t, onset, spec.event_duration, spec.kernel_width);
        for (i, w) in wave.iter().enumerate() {
            for j in 0..v {
                let r = response.get(i, j) + amplitude * w * base.patterns.get(cond, j);
                response.set(i, j, r);
            }
        }
    }
    let task = Tensor::from_fn(t, v, |i, j| {
        let noise = if spec.noise > 0.0 {
            let n: f64 = StandardNormal.sample(rng);
            spec.noise * n
        } else {
            0.0
        };
        baseline.get(i, j) + response.get(i, j) + noise
    });
    let pair = SubjectPair {
        subject_id: subject_id.to_string(),
        rest: TimeSeries::new(rest, spec.tr)?,
        task: TimeSeries::new(task, spec.tr)?,
        schedule: EventSchedule::new(events, labels, spec.tr)?,
    };
    Ok((
        pair,
        SubjectParts {
            mixing: mixing.clone(),
            baseline,
            response,
        },
    ))
}

/// All subjects with their ground-truth parts. Subject `s` draws from stream
/// `s` of a ChaCha generator seeded with `seed`.
pub fn gen_dataset_with_parts(spec: &SynthSpec, seed: u64) -> Result<Vec<(SubjectPair, SubjectParts)>> {
    spec.validate()?;
    let base = SynthBase::new(spec);
    (0..spec.n_subjects)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let mixing = base.subject_mixing(spec, &mut rng);
            gen_subject(spec, &base, &mixing, &format!("sub{s:03}"), &mut rng)
        })
        .collect()
}

pub fn gen_dataset(spec: &SynthSpec, seed: u64) -> Result<Vec<SubjectPair>> {
    Ok(gen_dataset_with_parts(spec, seed)?.into_iter().map(|(p, _)| p).collect())
}

pub fn save_subject(pair: &SubjectPair, root: impl AsRef<Path>) -> Result<()> {
    let dir = root.as_ref().join(&pair.subject_id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    save_timeseries(&pair.rest, dir.join("rest.ts"))?;
    save_timeseries(&pair.task, dir.join("task.ts"))?;
    let ev_dir = dir.join("events");
    std::fs::create_dir_all(&ev_dir).map_err(|e| Error::io(&ev_dir, e))?;
    save_event_dir(&pair.schedule, ev_dir)
}

pub fn save_dataset(pairs: &[SubjectPair], root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for p in pairs {
        save_subject(p, root)?;
    }
    Ok(())
}

/// Subject directory names under `root`, sorted.
pub fn subject_dirs(root: impl AsRef<Path>) -> Result<Vec<String>> {
    let root = root.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                out.push(name.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Load a dataset; the condition vocabulary is the sorted union of event file
/// stems over all subjects.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<SubjectPair>> {
    let root = root.as_ref();
    let ids = subject_dirs(root)?;
    let mut vocab: Vec<String> = Vec::new();
    for id in &ids {
        let ev_dir = root.join(id).join("events");
        if ev_dir.is_dir() {
            for entry in std::fs::read_dir(&ev_dir).map_err(|e| Error::io(&ev_dir, e))? {
                let path = entry.map_err(|e| Error::io(&ev_dir, e))?.path();
                if path.extension().is_some_and(|e| e == "ev") {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        if !vocab.iter().any(|v| v == stem) {
                            vocab.push(stem.to_string());
                        }
                    }
                }
            }
        }
    }
    vocab.sort();
    ids.iter()
        .map(|id| {
            let dir = root.join(id);
            let rest = load_timeseries(dir.join("rest.ts"))?;
            let task = load_timeseries(dir.join("task.ts"))?;
            let schedule = load_event_dir(dir.join("events"), task.tr(), Some(&vocab))?;
            Ok(SubjectPair {
                subject_id: id.clone(),
                rest,
                task,
                schedule,
            })
        })
        .collect()
}
