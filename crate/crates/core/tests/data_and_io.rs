mod common;

use common::{pearson, rng};
use evflow::autograd::Tensor;
use evflow::data::{
    event_waveform, gen_dataset, gen_dataset_with_parts, gen_subject, load_dataset, save_dataset, SynthBase,
    SynthSpec,
};
use evflow::io::{
    load_config, load_event_dir, load_timeseries, parse_event_file, save_event_dir, save_timeseries,
    serialize_events, split_subjects, EventSchedule, RawEvent, RunConfig, TimeSeries,
};
use evflow::metrics::{fc_matrix, fc_similarity};
use evflow::Error;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

#[test]
fn event_locked_average_recovers_kernel() {
    let spec = SynthSpec {
        n_subjects: 20,
        noise: 0.1,
        ..SynthSpec::default()
    };
    let base = SynthBase::new(&spec);
    let pre = 6usize;
    let len = spec.event_duration + 2 * pre;
    let mut acc = vec![0.0; len];
    let mut count = 0.0;
    let mut template = vec![0.0; len];
    for (pair, parts) in gen_dataset_with_parts(&spec, 1).unwrap() {
        let diff = Tensor::from_fn(spec.t_task, spec.n_rois, |i, j| {
            pair.task.data().get(i, j) - parts.baseline.get(i, j)
        });
        for ev in pair.schedule.events() {
            let onset = (ev.onset / spec.tr).round() as usize;
            if onset < pre || onset + spec.event_duration + pre > spec.t_task {
                continue;
            }
            let cond = pair.schedule.condition_id(&ev.condition).unwrap();
            let pattern: Vec<f64> = (0..spec.n_rois).map(|j| base.patterns.get(cond, j)).collect();
            let norm2: f64 = pattern.iter().map(|p| p * p).sum();
            for (k, a) in acc.iter_mut().enumerate() {
                let i = onset - pre + k;
                let proj: f64 = (0..spec.n_rois).map(|j| diff.get(i, j) * pattern[j]).sum();
                *a += proj / norm2 / ev.amplitude;
            }
            count += 1.0;
            if template.iter().all(|&x| x == 0.0) {
                let wave = event_waveform(spec.t_task, onset, spec.event_duration, spec.kernel_width);
                template = wave[onset - pre..onset - pre + len].to_vec();
            }
        }
    }
    assert!(count >= 40.0);
    let mean: Vec<f64> = acc.iter().map(|a| a / count).collect();
    let r = pearson(&mean, &template);
    assert!(r >= 0.95, "correlation {r}");
}

#[test]
fn shared_latents_give_more_similar_connectivity() {
    let spec = SynthSpec {
        events_per_run: 0,
        t_task: 256,
        ..SynthSpec::default()
    };
    let base = SynthBase::new(&spec);
    let mut same = 0.0;
    let mut indep = 0.0;
    for s in 0..20u64 {
        let mut r = ChaCha8Rng::seed_from_u64(500 + s);
        let m1 = base.subject_mixing(&spec, &mut r);
        let m2 = base.subject_mixing(&spec, &mut r);
        let (a, _) = gen_subject(&spec, &base, &m1, "a", &mut r).unwrap();
        let (b, _) = gen_subject(&spec, &base, &m1, "b", &mut r).unwrap();
        let (c, _) = gen_subject(&spec, &base, &m2, "c", &mut r).unwrap();
        let fa = fc_matrix(a.task.data()).unwrap();
        same += fc_similarity(&fa, &fc_matrix(b.task.data()).unwrap()).unwrap();
        indep += fc_similarity(&fa, &fc_matrix(c.task.data()).unwrap()).unwrap();
    }
    assert!(same / 20.0 >= indep / 20.0, "same {} vs independent {}", same / 20.0, indep / 20.0);
}

#[test]
fn dataset_round_trips_through_files() {
    let spec = SynthSpec {
        n_subjects: 3,
        ..SynthSpec::default()
    };
    let pairs = gen_dataset(&spec, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&pairs, dir.path()).unwrap();
    for p in &pairs {
        let d = dir.path().join(&p.subject_id);
        assert!(d.join("rest.ts").is_file() && d.join("task.ts").is_file() && d.join("events").is_dir());
    }
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, pairs);
}

#[test]
fn same_seed_same_dataset_different_seed_differs() {
    let spec = SynthSpec {
        n_subjects: 2,
        ..SynthSpec::default()
    };
    assert_eq!(gen_dataset(&spec, 9).unwrap(), gen_dataset(&spec, 9).unwrap());
    assert_ne!(gen_dataset(&spec, 9).unwrap(), gen_dataset(&spec, 10).unwrap());
}

#[test]
fn subjects_are_independent_streams() {
    let spec = SynthSpec {
        n_subjects: 4,
        ..SynthSpec::default()
    };
    let four = gen_dataset(&spec, 2).unwrap();
    let two = gen_dataset(&SynthSpec { n_subjects: 2, ..spec }, 2).unwrap();
    assert_eq!(&four[..2], &two[..]);
}

#[test]
fn infeasible_schedule_is_rejected() {
    let spec = SynthSpec {
        t_task: 20,
        events_per_run: 4,
        event_duration: 8,
        ..SynthSpec::default()
    };
    assert!(matches!(gen_dataset(&spec, 0), Err(Error::Validation(_))));
}

#[test]
fn timeseries_round_trip_is_lossless() {
    let mut r = rng(5);
    let x = Tensor::from_fn(37, 5, |_, _| r.random_range(-1e3..1e3) * 10f64.powi(r.random_range(-8..8)));
    let ts = TimeSeries::new(x, 0.72).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ts");
    save_timeseries(&ts, &path).unwrap();
    let back = load_timeseries(&path).unwrap();
    assert_eq!(back, ts);
    assert_eq!(back.tr(), 0.72);
}

#[test]
fn integer_matrix_round_trip() {
    let x = Tensor::from_fn(4, 3, |i, j| (i * 3 + j) as f64 - 5.0);
    let ts = TimeSeries::new(x.clone(), 2.0).unwrap();
    let back = TimeSeries::from_text(&ts.to_text()).unwrap();
    assert_eq!(back.data(), &x);
}

#[test]
fn timeseries_header_row_count_mismatch() {
    let text = "tr=0.72 t=4 v=2\n1 2\n3 4\n5 6\n";
    assert!(TimeSeries::from_text(text).is_err());
}

#[test]
fn event_file_round_trip_is_lossless() {
    let mut r = rng(6);
    let events: Vec<RawEvent> = (0..20)
        .map(|_| {
            RawEvent::new(
                r.random_range(0.0..500.0),
                r.random_range(0.0..30.0),
                r.random_range(-3.0..3.0),
                "faces",
            )
            .unwrap()
        })
        .collect();
    let back = parse_event_file(&serialize_events(&events), "faces", 0.72).unwrap();
    assert_eq!(back.len(), events.len());
    for (a, b) in events.iter().zip(&back) {
        for (x, y) in [(a.onset, b.onset), (a.duration, b.duration), (a.amplitude, b.amplitude)] {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }
}

#[test]
fn malformed_event_rows_report_line_numbers() {
    for (text, line) in [
        ("1 2\n", 1),
        ("1 2 3\n4 5\n", 2),
        ("1 2 3\n\n4 x 1\n", 3),
        ("1 2 3\n4 5 6 7\n", 2),
    ] {
        match parse_event_file(text, "c", 0.72) {
            Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: expected parse error, got {other:?}"),
        }
    }
}

#[test]
fn event_dir_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("faces.ev"), "1 2 1\n3 4\n").unwrap();
    let err = load_event_dir(dir.path(), 0.72, None).unwrap_err();
    match &err {
        Error::Parse { line, msg } => {
            assert_eq!(*line, 2);
            assert!(msg.contains("faces.ev"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn event_dir_round_trip_and_vocab_check() {
    let events = vec![
        RawEvent::new(3.0, 2.0, 1.0, "tools").unwrap(),
        RawEvent::new(1.0, 2.0, 0.5, "faces").unwrap(),
    ];
    let vocab = vec!["faces".to_string(), "tools".to_string()];
    let sched = EventSchedule::new(events, vocab.clone(), 0.72).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_event_dir(&sched, dir.path()).unwrap();
    let back = load_event_dir(dir.path(), 0.72, Some(&vocab)).unwrap();
    assert_eq!(back.events().len(), 2);
    assert_eq!(back.events()[0].condition, "faces");
    let narrow = vec!["faces".to_string()];
    let err = load_event_dir(dir.path(), 0.72, Some(&narrow)).unwrap_err();
    assert!(err.to_string().contains("tools"));
}

#[test]
fn config_file_examples() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "").unwrap();
    assert_eq!(load_config(&path).unwrap(), RunConfig::default());
    let d = RunConfig::default();
    assert_eq!((d.epochs, d.batch_size, d.rank_k), (50, 16, 8));
    assert_eq!((d.band_lo, d.band_hi), (0.01, 0.05));
    std::fs::write(&path, "rank_k = 4\n").unwrap();
    let c = load_config(&path).unwrap();
    assert_eq!(c.rank_k, 4);
    assert_eq!(RunConfig { rank_k: 8, ..c }, RunConfig::default());
    std::fs::write(&path, "band_hi = 0.005\n").unwrap();
    assert!(load_config(&path).is_err());
    std::fs::write(&path, "# comment\nrank_k = 4\nbogus\n").unwrap();
    match load_config(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn split_fractions() {
    let ids = |n: usize| (0..n).map(|i| format!("s{i}")).collect::<Vec<_>>();
    let (a, b, c) = split_subjects(&ids(20), [0.7, 0.15, 0.15], 0).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (14, 3, 3));
    let (a, b, c) = split_subjects(&ids(100), [0.7, 0.15, 0.15], 0).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (70, 15, 15));
    let mut all: Vec<_> = a.iter().chain(&b).chain(&c).cloned().collect();
    all.sort();
    let mut want = ids(100);
    want.sort();
    assert_eq!(all, want);
    assert_eq!(split_subjects(&ids(100), [0.7, 0.15, 0.15], 0).unwrap().0, a);
}
