//! File formats and run configuration.
//!
//! * event files: FSL-style three-column text (`onset duration amplitude`),
//!   one condition per file.
//! * time series: header `tr=<s> t=<T> v=<V>` followed by `T` rows of `V` values.
//! * config: flat `key = value` lines with `#` comments.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{AdamConfig, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RawEvent {
    pub onset: f64,
    pub duration: f64,
    pub amplitude: f64,
    pub condition: String,
}

impl RawEvent {
    pub fn new(onset: f64, duration: f64, amplitude: f64, condition: impl Into<String>) -> Result<Self> {
        let condition = condition.into();
        if !(onset.is_finite() && duration.is_finite() && amplitude.is_finite()) {
            return Err(Error::Validation("event fields must be finite".into()));
        }
        if onset < 0.0 {
            return Err(Error::Validation(format!("negative onset {onset}")));
        }
        if duration < 0.0 {
            return Err(Error::Validation(format!("negative duration {duration}")));
        }
        if condition.is_empty() {
            return Err(Error::Validation("empty condition label".into()));
        }
        Ok(Self {
            onset,
            duration,
            amplitude,
            condition,
        })
    }
}

/// Events of one run together with the condition vocabulary they index into.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSchedule {
    events: Vec<RawEvent>,
    vocab: Vec<String>,
    tr: f64,
}

impl EventSchedule {
    /// `vocab[i]` is the label with id `i`.
    pub fn new(events: Vec<RawEvent>, vocab: Vec<String>, tr: f64) -> Result<Self> {
        if !(tr > 0.0 && tr.is_finite()) {
            return Err(Error::Validation(format!("tr must be positive, got {tr}")));
        }
        let mut seen = HashSet::new();
        for label in &vocab {
            if !seen.insert(label.as_str()) {
                return Err(Error::Validation(format!("duplicate condition {label} in vocabulary")));
            }
        }
        for ev in &events {
            if !seen.contains(ev.condition.as_str()) {
                return Err(Error::Validation(format!(
                    "unknown condition {:?}",
                    ev.condition
                )));
            }
        }
        Ok(Self { events, vocab, tr })
    }

    pub fn events(&self) -> &[RawEvent] {
        &self.events
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn tr(&self) -> f64 {
        self.tr
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn condition_id(&self, label: &str) -> Option<usize> {
        self.vocab.iter().position(|v| v == label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizedEvent {
    pub onset_tr: f64,
    pub duration_tr: f64,
    pub amplitude_z: f64,
    pub condition_id: usize,
}

/// Parse one FSL three-column file; every row is tagged with `condition`.
pub fn parse_event_file(text: &str, condition: &str, _tr: f64) -> Result<Vec<RawEvent>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 3 columns, found {}", cols.len()),
            });
        }
        let mut vals = [0.0; 3];
        for (v, s) in vals.iter_mut().zip(&cols) {
            *v = s.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-numeric value {s:?}"),
            })?;
        }
        let ev = RawEvent::new(vals[0], vals[1], vals[2], condition).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("line {lineno}: {msg}")),
            other => other,
        })?;
        out.push(ev);
    }
    Ok(out)
}

/// Inverse of [`parse_event_file`] for the events of a single condition.
pub fn serialize_events(events: &[RawEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        let _ = writeln!(out, "{:?}\t{:?}\t{:?}", ev.onset, ev.duration, ev.amplitude);
    }
    out
}

/// Onsets and durations in TR units; amplitudes z-scored over the whole
/// schedule with population std (all zeros when the std vanishes).
pub fn normalize_events(schedule: &EventSchedule) -> Result<Vec<NormalizedEvent>> {
    let events = schedule.events();
    if events.is_empty() {
        return Err(Error::Validation("cannot normalize an empty schedule".into()));
    }
    let tr = schedule.tr();
    let n = events.len() as f64;
    let mean = events.iter().map(|e| e.amplitude).sum::<f64>() / n;
    let var = events.iter().map(|e| (e.amplitude - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    events
        .iter()
        .map(|e| {
            let condition_id = schedule
                .condition_id(&e.condition)
                .ok_or_else(|| Error::Validation(format!("unknown condition {:?}", e.condition)))?;
            let amplitude_z = if std > 1e-12 * mean.abs().max(1.0) {
                (e.amplitude - mean) / std
            } else {
                0.0
            };
            Ok(NormalizedEvent {
                onset_tr: e.onset / tr,
                duration_tr: e.duration / tr,
                amplitude_z,
                condition_id,
            })
        })
        .collect()
}

/// `T×V` ROI signals sampled every `tr` seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    data: Tensor,
    tr: f64,
    roi_names: Option<Vec<String>>,
}

impl TimeSeries {
    pub fn new(data: Tensor, tr: f64) -> Result<Self> {
        let (t, v) = data.shape();
        if t < 2 || v < 2 {
            return Err(Error::Validation(format!("time series needs T>=2 and V>=2, got {t}x{v}")));
        }
        if !data.is_finite() {
            return Err(Error::Validation("time series contains non-finite values".into()));
        }
        if !(tr > 0.0 && tr.is_finite()) {
            return Err(Error::Validation(format!("tr must be positive, got {tr}")));
        }
        Ok(Self {
            data,
            tr,
            roi_names: None,
        })
    }

    pub fn with_roi_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_rois() {
            return Err(Error::Validation(format!(
                "{} roi names for {} rois",
                names.len(),
                self.n_rois()
            )));
        }
        self.roi_names = Some(names);
        Ok(self)
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    pub fn tr(&self) -> f64 {
        self.tr
    }

    pub fn roi_names(&self) -> Option<&[String]> {
        self.roi_names.as_deref()
    }

    pub fn n_timepoints(&self) -> usize {
        self.data.rows()
    }

    pub fn n_rois(&self) -> usize {
        self.data.cols()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("tr={:?} t={} v={}", self.tr, self.n_timepoints(), self.n_rois());
        if let Some(names) = &self.roi_names {
            let _ = write!(out, " rois={}", names.join(","));
        }
        out.push('\n');
        for i in 0..self.n_timepoints() {
            let row: Vec<String> = self.data.row_slice(i).iter().map(|x| format!("{x:?}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let (mut tr, mut t, mut v, mut rois) = (None, None, None, None);
        for tok in header.split_whitespace() {
            let bad = || Error::Parse {
                line: hline,
                msg: format!("bad header token {tok:?}"),
            };
            let (k, val) = tok.split_once('=').ok_or_else(bad)?;
            match k {
                "tr" => tr = Some(val.parse::<f64>().map_err(|_| bad())?),
                "t" => t = Some(val.parse::<usize>().map_err(|_| bad())?),
                "v" => v = Some(val.parse::<usize>().map_err(|_| bad())?),
                "rois" => rois = Some(val.split(',').map(str::to_string).collect::<Vec<_>>()),
                _ => return Err(bad()),
            }
        }
        let missing = |what: &str| Error::Parse {
            line: hline,
            msg: format!("header lacks {what}="),
        };
        let tr = tr.ok_or_else(|| missing("tr"))?;
        let t = t.ok_or_else(|| missing("t"))?;
        let v = v.ok_or_else(|| missing("v"))?;
        let mut data = Vec::with_capacity(t * v);
        let mut nrows = 0;
        for (lineno, line) in lines {
            let row = line
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("non-numeric value {s:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != v {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {v} values, found {}", row.len()),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "non-finite value".into(),
                });
            }
            data.extend(row);
            nrows += 1;
        }
        if nrows != t {
            return Err(Error::Validation(format!("header says t={t} but body has {nrows} rows")));
        }
        let ts = TimeSeries::new(Tensor::new(t, v, data)?, tr)?;
        match rois {
            Some(names) => ts.with_roi_names(names),
            None => Ok(ts),
        }
    }
}

pub fn load_timeseries(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TimeSeries::from_text(&text)
}

pub fn save_timeseries(ts: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ts.to_text()).map_err(|e| Error::io(path, e))
}

/// Load every `<condition>.ev` file in `dir` into one schedule, sorted by onset.
/// When `vocab` is given, labels outside it are rejected; otherwise the
/// vocabulary is the sorted set of file stems.
pub fn load_event_dir(dir: impl AsRef<Path>, tr: f64, vocab: Option<&[String]>) -> Result<EventSchedule> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    if dir.exists() {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|e| e == "ev") {
                files.push(path);
            }
        }
    }
    files.sort();
    let mut events = Vec::new();
    let mut labels = Vec::new();
    for path in &files {
        let label = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Validation(format!("bad event file name {}", path.display())))?
            .to_string();
        if let Some(v) = vocab {
            if !v.contains(&label) {
                return Err(Error::Validation(format!("unknown condition label {label:?}")));
            }
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = parse_event_file(&text, &label, tr).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })?;
        events.extend(parsed);
        labels.push(label);
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let vocab = match vocab {
        Some(v) => v.to_vec(),
        None => labels,
    };
    EventSchedule::new(events, vocab, tr)
}

/// Write one `<condition>.ev` file per vocabulary entry that has events.
pub fn save_event_dir(schedule: &EventSchedule, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for label in schedule.vocab() {
        let evs: Vec<RawEvent> = schedule
            .events()
            .iter()
            .filter(|e| &e.condition == label)
            .cloned()
            .collect();
        if evs.is_empty() {
            continue;
        }
        let path = dir.join(format!("{label}.ev"));
        std::fs::write(&path, serialize_events(&evs)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Hyperparameters for model, losses, optimizer, and sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub d_c: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub enc_mlp_hidden: usize,
    pub patch_len: usize,
    pub max_patches: usize,
    pub rank_k: usize,
    pub d_ev: usize,
    pub ev_hidden: usize,
    pub d_t: usize,
    pub time_freqs: usize,
    pub vel_hidden: usize,
    pub vel_layers: usize,
    pub use_events: bool,
    pub lambda_fc: f64,
    pub lambda_psd: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub tr: f64,
    pub welch_seg_len: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub euler_steps: usize,
    pub seed: u64,
    pub split: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d_c: 64,
            enc_layers: 2,
            enc_heads: 4,
            enc_mlp_hidden: 128,
            patch_len: 16,
            max_patches: 64,
            rank_k: 8,
            d_ev: 32,
            ev_hidden: 64,
            d_t: 16,
            time_freqs: 8,
            vel_hidden: 128,
            vel_layers: 2,
            use_events: true,
            lambda_fc: 1.0,
            lambda_psd: 0.1,
            band_lo: 0.01,
            band_hi: 0.05,
            tr: 0.72,
            welch_seg_len: 64,
            adam: AdamConfig::default(),
            epochs: 50,
            batch_size: 16,
            euler_steps: 50,
            seed: 0,
            split: [0.7, 0.15, 0.15],
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_c", self.d_c),
            ("enc_layers", self.enc_layers),
            ("enc_heads", self.enc_heads),
            ("enc_mlp_hidden", self.enc_mlp_hidden),
            ("patch_len", self.patch_len),
            ("max_patches", self.max_patches),
            ("rank_k", self.rank_k),
            ("d_ev", self.d_ev),
            ("ev_hidden", self.ev_hidden),
            ("d_t", self.d_t),
            ("time_freqs", self.time_freqs),
            ("vel_hidden", self.vel_hidden),
            ("vel_layers", self.vel_layers),
            ("batch_size", self.batch_size),
            ("euler_steps", self.euler_steps),
            ("welch_seg_len", self.welch_seg_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_c % self.enc_heads != 0 {
            return Err(Error::Config(format!(
                "d_c={} not divisible by enc_heads={}",
                self.d_c, self.enc_heads
            )));
        }
        if !(self.tr > 0.0) {
            return Err(Error::Config("tr must be positive".into()));
        }
        let nyquist = 1.0 / (2.0 * self.tr);
        if !(0.0 < self.band_lo && self.band_lo < self.band_hi && self.band_hi < nyquist) {
            return Err(Error::Config(format!(
                "band must satisfy 0 < band_lo < band_hi < {nyquist}, got [{}, {}]",
                self.band_lo, self.band_hi
            )));
        }
        if self.lambda_fc < 0.0 || self.lambda_psd < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0 && a.weight_decay >= 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {a:?}")));
        }
        if self.split.iter().any(|f| *f < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {:?} must be nonnegative and sum to 1", self.split)));
        }
        Ok(())
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "d_c" => self.d_c = num(key, value)?,
            "enc_layers" => self.enc_layers = num(key, value)?,
            "enc_heads" => self.enc_heads = num(key, value)?,
            "enc_mlp_hidden" => self.enc_mlp_hidden = num(key, value)?,
            "patch_len" => self.patch_len = num(key, value)?,
            "max_patches" => self.max_patches = num(key, value)?,
            "rank_k" => self.rank_k = num(key, value)?,
            "d_ev" => self.d_ev = num(key, value)?,
            "ev_hidden" => self.ev_hidden = num(key, value)?,
            "d_t" => self.d_t = num(key, value)?,
            "time_freqs" => self.time_freqs = num(key, value)?,
            "vel_hidden" => self.vel_hidden = num(key, value)?,
            "vel_layers" => self.vel_layers = num(key, value)?,
            "use_events" => self.use_events = num(key, value)?,
            "lambda_fc" => self.lambda_fc = num(key, value)?,
            "lambda_psd" => self.lambda_psd = num(key, value)?,
            "band_lo" => self.band_lo = num(key, value)?,
            "band_hi" => self.band_hi = num(key, value)?,
            "tr" => self.tr = num(key, value)?,
            "welch_seg_len" => self.welch_seg_len = num(key, value)?,
            "lr" => self.adam.lr = num(key, value)?,
            "weight_decay" => self.adam.weight_decay = num(key, value)?,
            "beta1" => self.adam.beta1 = num(key, value)?,
            "beta2" => self.adam.beta2 = num(key, value)?,
            "adam_eps" => self.adam.eps = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "euler_steps" => self.euler_steps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "split_train" => self.split[0] = num(key, value)?,
            "split_val" => self.split[1] = num(key, value)?,
            "split_test" => self.split[2] = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for_each_assignment(text, |lineno, key, value| {
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its current value, in `from_text` syntax.
    pub fn to_text(&self) -> String {
        let a = &self.adam;
        let entries: Vec<(&str, String)> = vec![
            ("d_c", self.d_c.to_string()),
            ("enc_layers", self.enc_layers.to_string()),
            ("enc_heads", self.enc_heads.to_string()),
            ("enc_mlp_hidden", self.enc_mlp_hidden.to_string()),
            ("patch_len", self.patch_len.to_string()),
            ("max_patches", self.max_patches.to_string()),
            ("rank_k", self.rank_k.to_string()),
            ("d_ev", self.d_ev.to_string()),
            ("ev_hidden", self.ev_hidden.to_string()),
            ("d_t", self.d_t.to_string()),
            ("time_freqs", self.time_freqs.to_string()),
            ("vel_hidden", self.vel_hidden.to_string()),
            ("vel_layers", self.vel_layers.to_string()),
            ("use_events", self.use_events.to_string()),
            ("lambda_fc", format!("{:?}", self.lambda_fc)),
            ("lambda_psd", format!("{:?}", self.lambda_psd)),
            ("band_lo", format!("{:?}", self.band_lo)),
            ("band_hi", format!("{:?}", self.band_hi)),
            ("tr", format!("{:?}", self.tr)),
            ("welch_seg_len", self.welch_seg_len.to_string()),
            ("lr", format!("{:?}", a.lr)),
            ("weight_decay", format!("{:?}", a.weight_decay)),
            ("beta1", format!("{:?}", a.beta1)),
            ("beta2", format!("{:?}", a.beta2)),
            ("adam_eps", format!("{:?}", a.eps)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("euler_steps", self.euler_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("split_train", format!("{:?}", self.split[0])),
            ("split_val", format!("{:?}", self.split[1])),
            ("split_test", format!("{:?}", self.split[2])),
        ];
        entries
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Walk `key = value` lines, skipping blanks and `#` comments.
pub(crate) fn for_each_assignment(
    text: &str,
    mut f: impl FnMut(usize, &str, &str) -> Result<()>,
) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected key = value, found {line:?}"),
        })?;
        f(i + 1, k.trim(), v.trim())?;
    }
    Ok(())
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_text(&text)
}

/// Subject-disjoint (train, val, test) partition. Validation and test sizes
/// are rounded; train takes the remainder.
pub fn split_subjects(
    ids: &[String],
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    if fractions.iter().any(|f| *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("fractions {fractions:?} must sum to 1")));
    }
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Validation(format!("duplicate subject id {id}")));
        }
    }
    let n = ids.len();
    let n_val = (n as f64 * fractions[1]).round() as usize;
    let n_test = ((n as f64 * fractions[2]).round() as usize).min(n - n_val.min(n));
    let n_val = n_val.min(n);
    let mut shuffled = ids.to_vec();
    // canonical order first so the result does not depend on input order
    shuffled.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let test = shuffled.split_off(n - n_test);
    let val = shuffled.split_off(n - n_test - n_val);
    Ok((shuffled, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("sub{i:03}")).collect()
    }

    #[test]
    fn parses_single_row() {
        let evs = parse_event_file("10.0 2.0 1.0\n", "faces", 0.72).unwrap();
        assert_eq!(evs, vec![RawEvent::new(10.0, 2.0, 1.0, "faces").unwrap()]);
    }

    #[test]
    fn empty_file_is_empty() {
        assert!(parse_event_file("", "x", 1.0).unwrap().is_empty());
        assert!(parse_event_file("# only comment\n\n", "x", 1.0).unwrap().is_empty());
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let err = parse_event_file("1 2\n", "x", 1.0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_event_file("# hdr\n1 2 3\n1 2 z\n", "x", 1.0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn negative_timing_rejected() {
        assert!(matches!(parse_event_file("-1 2 3\n", "x", 1.0), Err(Error::Validation(_))));
        assert!(matches!(parse_event_file("1 -2 3\n", "x", 1.0), Err(Error::Validation(_))));
    }

    fn sched(amps: &[f64], onsets: &[f64], tr: f64) -> EventSchedule {
        let evs = amps
            .iter()
            .zip(onsets)
            .map(|(&a, &o)| RawEvent::new(o, 1.0, a, "c").unwrap())
            .collect();
        EventSchedule::new(evs, vec!["c".into()], tr).unwrap()
    }

    #[test]
    fn normalize_divides_by_tr() {
        let n = normalize_events(&sched(&[1.0], &[10.0], 0.72)).unwrap();
        assert!((n[0].onset_tr - 13.888_888_888_888_89).abs() < 1e-9);
        assert_eq!(n[0].onset_tr, 10.0 / 0.72);
    }

    #[test]
    fn constant_amplitudes_z_to_zero() {
        let n = normalize_events(&sched(&[1.0, 1.0, 1.0], &[0.0, 5.0, 9.0], 1.0)).unwrap();
        assert!(n.iter().all(|e| e.amplitude_z == 0.0));
    }

    #[test]
    fn two_amplitudes_z_score_to_unit() {
        let n = normalize_events(&sched(&[1.0, 3.0], &[0.0, 5.0], 1.0)).unwrap();
        assert_eq!(n[0].amplitude_z, -1.0);
        assert_eq!(n[1].amplitude_z, 1.0);
    }

    #[test]
    fn empty_schedule_rejected() {
        let s = EventSchedule::new(vec![], vec!["c".into()], 1.0).unwrap();
        assert!(normalize_events(&s).is_err());
    }

    #[test]
    fn timeseries_dimension_mismatch() {
        let err = TimeSeries::from_text("tr=1 t=4 v=2\n1 2\n3 4\n5 6\n").unwrap_err();
        assert!(err.to_string().contains("t=4"), "{err}");
        assert!(TimeSeries::from_text("1 2\n3 4\n").is_err());
        assert!(TimeSeries::from_text("tr=1 t=2 v=2\n1 2\n3 NaN\n").is_err());
    }

    #[test]
    fn timeseries_round_trip_and_tr() {
        let data = Tensor::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let ts = TimeSeries::new(data, 0.72).unwrap();
        let back = TimeSeries::from_text(&ts.to_text()).unwrap();
        assert_eq!(back, ts);
        assert_eq!(back.tr(), 0.72);
    }

    #[test]
    fn config_defaults() {
        let c = RunConfig::from_text("").unwrap();
        assert_eq!(c.adam.lr, 1e-3);
        assert_eq!(c.adam.weight_decay, 1e-5);
        assert_eq!(c.epochs, 50);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.rank_k, 8);
        assert_eq!((c.band_lo, c.band_hi), (0.01, 0.05));
    }

    #[test]
    fn config_overrides_and_errors() {
        let c = RunConfig::from_text("rank_k = 4 # low rank\n").unwrap();
        assert_eq!(c.rank_k, 4);
        assert_eq!(c.d_c, RunConfig::default().d_c);
        assert!(matches!(RunConfig::from_text("band_hi = 0.005"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("bogus = 1"), Err(Error::Config(_))));
        assert!(RunConfig::from_text("band_hi = 0.9").is_err());
        assert!(RunConfig::from_text("split_train = 0.5").is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let mut c = RunConfig::default();
        c.lambda_psd = 0.37;
        c.use_events = false;
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn split_sizes() {
        let (a, b, c) = split_subjects(&ids(20), [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (14, 3, 3));
        let (a, b, c) = split_subjects(&ids(100), [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 15, 15));
    }

    #[test]
    fn split_deterministic_and_rejects_duplicates() {
        let x = split_subjects(&ids(30), [0.7, 0.15, 0.15], 9).unwrap();
        let y = split_subjects(&ids(30), [0.7, 0.15, 0.15], 9).unwrap();
        assert_eq!(x, y);
        let mut dup = ids(5);
        dup.push("sub000".into());
        assert!(split_subjects(&dup, [0.7, 0.15, 0.15], 0).is_err());
    }
}
