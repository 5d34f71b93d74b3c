use evflow::autograd::{Graph, ParamStore, Tensor, MASK_NEG};
use evflow::events::{embed_events, EventEmbedParams};
use evflow::gradcheck::micro_config;
use evflow::io::{split_subjects, NormalizedEvent, RunConfig, TimeSeries};
use evflow::metrics::{cfid, fc_matrix, fc_similarity, p_at_top5, psd_discrepancy, FcFeature};
use evflow::prior::colored_noise;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0..5.0f64, rows * cols).prop_map(move |d| Tensor::new(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fc_matrix_is_a_correlation_matrix(x in (3usize..20, 2usize..9).prop_flat_map(|(t, v)| matrix(t, v))) {
        let f = fc_matrix(&x).unwrap();
        let v = f.n_rois();
        for i in 0..v {
            prop_assert!((f.get(i, i) - 1.0).abs() <= 1e-12);
            for j in 0..v {
                prop_assert_eq!(f.get(i, j), f.get(j, i));
                prop_assert!(f.get(i, j).abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn p_at_top5_is_a_fraction(a in matrix(30, 8), b in matrix(30, 8)) {
        let (fa, fb) = (fc_matrix(&a).unwrap(), fc_matrix(&b).unwrap());
        let p = p_at_top5(&fa, &fb).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p_at_top5(&fa, &fa).unwrap(), 1.0);
    }

    #[test]
    fn cfid_bounds(
        a in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 2..12),
        b in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 2..12),
    ) {
        let fa: Vec<FcFeature> = a.into_iter().map(FcFeature).collect();
        let fb: Vec<FcFeature> = b.into_iter().map(FcFeature).collect();
        let self_dist = cfid(&fa, &fa).unwrap();
        prop_assert!(self_dist <= 1e-6 && self_dist >= -1e-9, "{}", self_dist);
        prop_assert!(cfid(&fa, &fb).unwrap() >= -1e-9);
    }

    #[test]
    fn shift_invariance(
        x in matrix(64, 3),
        y in matrix(64, 3),
        offsets in prop::collection::vec(-100.0..100.0f64, 3),
    ) {
        let shift = |m: &Tensor| Tensor::from_fn(64, 3, |i, j| m.get(i, j) + offsets[j]);
        let d0 = psd_discrepancy(&x, &y, 2.0, (0.01, 0.1), 32).unwrap();
        let d1 = psd_discrepancy(&shift(&x), &shift(&y), 2.0, (0.01, 0.1), 32).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-6 * d0.max(1.0));
        let s0 = fc_similarity(&fc_matrix(&x).unwrap(), &fc_matrix(&y).unwrap()).unwrap();
        let s1 = fc_similarity(&fc_matrix(&shift(&x)).unwrap(), &fc_matrix(&shift(&y)).unwrap()).unwrap();
        prop_assert!((s0 - s1).abs() <= 1e-9);
    }

    #[test]
    fn masked_softmax_rows_are_distributions(
        x in matrix(4, 6),
        mask_bits in prop::collection::vec(any::<bool>(), 6).prop_filter("one kept", |m| m.iter().any(|&b| b)),
    ) {
        let mask: Vec<f64> = mask_bits.iter().map(|&b| if b { 0.0 } else { MASK_NEG }).collect();
        let mut g = Graph::new();
        let v = g.leaf(x).unwrap();
        let s = g.softmax(v, Some(&mask)).unwrap();
        let out = g.value(s);
        for i in 0..4 {
            let row = out.row_slice(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (p, &keep) in row.iter().zip(&mask_bits) {
                if !keep {
                    prop_assert!(*p <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn event_tokens_do_not_mix(
        onsets in prop::collection::vec(0.0..50.0f64, 3),
        other_onset in 0.0..50.0f64,
        other_amp in -2.0..2.0f64,
    ) {
        let cfg = micro_config(&RunConfig::default());
        let mut store = ParamStore::new();
        let params = EventEmbedParams::new(&mut store, &cfg, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ev = |onset: f64, amp: f64, c: usize| NormalizedEvent {
            onset_tr: onset,
            duration_tr: 2.0,
            amplitude_z: amp,
            condition_id: c,
        };
        let a = vec![ev(onsets[0], 1.0, 0), ev(onsets[1], -1.0, 1), ev(onsets[2], 0.0, 0)];
        let mut b = a.clone();
        b[1] = ev(other_onset, other_amp, 0);
        let ta = embed_events(&a, &params, &store, 4).unwrap();
        let tb = embed_events(&b, &params, &store, 4).unwrap();
        for k in [0, 2] {
            prop_assert_eq!(ta.tokens.row_slice(k), tb.tokens.row_slice(k));
        }
        prop_assert!(ta.tokens.row_slice(3).iter().all(|&x| x == 0.0));
        prop_assert_eq!(ta.mask, vec![true, true, true, false]);
    }

    #[test]
    fn colored_noise_is_standardized(t in 8usize..300, v in 1usize..4, seed in any::<u64>()) {
        let x = colored_noise(t, v, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for j in 0..v {
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / t as f64;
            let var = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / t as f64;
            prop_assert!(m.abs() <= 1e-9);
            prop_assert!((var - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn split_is_a_partition(n in 1usize..200, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let (a, b, c) = split_subjects(&ids, [0.7, 0.15, 0.15], seed).unwrap();
        prop_assert_eq!(a.len() + b.len() + c.len(), n);
        let mut all: Vec<_> = a.into_iter().chain(b).chain(c).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
    }

    #[test]
    fn timeseries_text_round_trip(x in (2usize..12, 2usize..6).prop_flat_map(|(t, v)| matrix(t, v)), tr in 0.1..3.0f64) {
        let ts = TimeSeries::new(x, tr).unwrap();
        prop_assert_eq!(TimeSeries::from_text(&ts.to_text()).unwrap(), ts);
    }
}
