use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use evflow::data::{gen_dataset, load_dataset, save_dataset, subject_dirs, SynthSpec};
use evflow::flow::{sample, train};
use evflow::io::{load_config, load_event_dir, load_timeseries, save_timeseries, split_subjects, RunConfig};
use evflow::metrics::{evaluate, report_csv, EvalConfig};
use evflow::model::{loss_history_csv, FlowModel, ModelMeta};
use evflow::{gradcheck, Error};

#[derive(Parser, Debug)]
#[command(name = "evflow", version, about = "Event-conditioned flow matching for rest-to-task time-series synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired dataset.
    SynthData {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on the training split of a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Synthesize a task series from a rest series and an event directory.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        rest: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Euler steps; defaults to the checkpoint's configured count.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare generated task series with real ones, paired by subject id.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Label written in the task column.
        #[arg(long, default_value = "task")]
        task: String,
    },
    /// Check analytic gradients of a micro model against finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Lib(Error),
    Gradcheck(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) | Error::NonFinite { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
        Err(Failure::Gradcheck(msg)) => {
            eprintln!("gradcheck failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn config_or_default(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::SynthData { spec, out, seed } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                    SynthSpec::from_text(&text)?
                }
                None => SynthSpec::default(),
            };
            let pairs = gen_dataset(&spec, seed)?;
            save_dataset(&pairs, &out)?;
            println!("wrote {} subjects to {}", pairs.len(), out.display());
        }
        Command::Train { data, config, out, epochs } => {
            let mut cfg = config_or_default(config.as_deref())?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let pairs = load_dataset(&data)?;
            if pairs.is_empty() {
                return Err(Error::Validation(format!("no subjects under {}", data.display())).into());
            }
            let ids: Vec<String> = pairs.iter().map(|p| p.subject_id.clone()).collect();
            let (train_ids, val_ids, test_ids) = split_subjects(&ids, cfg.split, cfg.seed)?;
            let train_set: Vec<_> = pairs.iter().filter(|p| train_ids.contains(&p.subject_id)).cloned().collect();
            let first = &pairs[0];
            let meta = ModelMeta {
                n_rois: first.task.n_rois(),
                task_len: first.task.n_timepoints(),
                tr: first.task.tr(),
                vocab: first.schedule.vocab().to_vec(),
            };
            let mut model = FlowModel::new(cfg.clone(), meta, cfg.seed)?;
            let report = if cfg.epochs == 0 { Default::default() } else { train(&mut model, &train_set)? };
            for h in &report.history {
                println!(
                    "epoch {:>3}  fm {:.6}  fc {:.6}  psd {:.6}  total {:.6}",
                    h.epoch, h.fm, h.fc, h.psd, h.total
                );
            }
            if let Some(w) = report.warnings.first() {
                eprintln!("warning: {w} ({} such warnings)", report.warnings.len());
            }
            model.save(&out)?;
            let write = |name: &str, body: String| {
                let p = out.join(name);
                std::fs::write(&p, body).map_err(|e| Error::Io { path: p, source: e })
            };
            write("loss.csv", loss_history_csv(&report.history))?;
            let split = format!(
                "train = {}\nval = {}\ntest = {}\n",
                train_ids.join(","),
                val_ids.join(","),
                test_ids.join(",")
            );
            write("split.txt", split)?;
            println!("checkpoint written to {}", out.display());
        }
        Command::Generate { ckpt, rest, events, steps, seed, out } => {
            let model = FlowModel::load(&ckpt)?;
            let x_rest = load_timeseries(&rest)?;
            let schedule = load_event_dir(&events, model.meta.tr, Some(&model.meta.vocab))?;
            let steps = steps.unwrap_or(model.config.euler_steps);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = sample(&model, &x_rest, &schedule, steps, &mut rng)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
            }
            save_timeseries(&x, &out)?;
        }
        Command::Evaluate { real, gen, config, out, task } => {
            let cfg = config_or_default(config.as_deref())?;
            let real_ids = series_ids(&real)?;
            let gen_ids = series_ids(&gen)?;
            let mut real_set = Vec::new();
            let mut gen_set = Vec::new();
            for (id, path) in &real_ids {
                match gen_ids.iter().find(|(g, _)| g == id) {
                    Some((_, gpath)) => {
                        real_set.push(load_timeseries(path)?);
                        gen_set.push(load_timeseries(gpath)?);
                    }
                    None => eprintln!("warning: subject {id} has no generated series; skipped"),
                }
            }
            for (id, _) in &gen_ids {
                if !real_ids.iter().any(|(r, _)| r == id) {
                    eprintln!("warning: generated subject {id} has no real series; skipped");
                }
            }
            if real_set.is_empty() {
                return Err(Error::Validation("no subjects are present in both real and generated sets".into()).into());
            }
            let report = evaluate(&real_set, &gen_set, &EvalConfig::from(&cfg))?;
            for note in &report.notes {
                eprintln!("note: {note}");
            }
            let csv = report_csv(&[(task, report)]);
            std::fs::write(&out, &csv).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            print!("{csv}");
        }
        Command::Gradcheck { config, seed } => {
            let cfg = config_or_default(config.as_deref())?;
            let report = gradcheck::run(&cfg, seed, None)?;
            report_gradcheck(&report)?;
        }
    }
    Ok(())
}

fn report_gradcheck(report: &gradcheck::GradcheckReport) -> Result<(), Failure> {
    println!("loss {:.12}", report.loss);
    for p in &report.params {
        println!(
            "{:<24} {:<16} n={:<5} |grad| {:.3e}  rel_err {:.3e}",
            p.name, p.group, p.numel, p.grad_norm, p.rel_error
        );
    }
    for (group, err) in report.groups() {
        println!("group {group:<16} max rel_err {err:.3e}");
    }
    println!("max relative error {:.3e} (tolerance {:.0e})", report.max_rel_error(), gradcheck::TOLERANCE);
    if report.passed() {
        Ok(())
    } else {
        let worst = report.worst().map(|p| p.name.clone()).unwrap_or_default();
        Err(Failure::Gradcheck(format!(
            "parameter {worst} has relative error {:.3e}",
            report.max_rel_error()
        )))
    }
}

/// Task series under `root` keyed by subject id: `<id>/task.ts` directories
/// or flat `<id>.ts` files.
fn series_ids(root: &Path) -> Result<Vec<(String, PathBuf)>, Error> {
    let mut out = Vec::new();
    for id in subject_dirs(root)? {
        let p = root.join(&id).join("task.ts");
        if p.is_file() {
            out.push((id, p));
        }
    }
    for entry in std::fs::read_dir(root).map_err(|e| Error::Io { path: root.to_path_buf(), source: e })? {
        let path = entry.map_err(|e| Error::Io { path: root.to_path_buf(), source: e })?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "ts") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if !out.iter().any(|(id, _)| id == stem) {
                    out.push((stem.to_string(), path));
                }
            }
        }
    }
    out.sort();
    Ok(out)
}
