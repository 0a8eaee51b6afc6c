use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::nn::{Model, ModelSpec};
use crate::tensor::{no_grad, StftParams, Tensor, Var};
use crate::train::{stft_loss, LossConfig};

fn noise(len: usize, seed: u64, amp: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-amp..amp)).collect()
}

fn row(model: &str, params: usize, l1: f64, mrstft: f64) -> SummaryRow {
    SummaryRow { model: model.into(), params, l1, mrstft, best_flag: false }
}

#[test]
fn identity_model_passes_audio_through() {
    let model = Model::zeros(ModelSpec::lstm(8)).unwrap();
    let input = AudioBuffer::new(noise(5000, 1, 0.5), SAMPLE_RATE);
    let out = process_offline(&model, &input).unwrap();
    assert_eq!(out, input);
}

#[test]
fn offline_processing_is_deterministic_and_length_preserving() {
    let model = Model::new(ModelSpec::preset("gcntf-1").unwrap(), 3).unwrap();
    let input = AudioBuffer::new(noise(3001, 2, 0.5), SAMPLE_RATE);
    let a = process_offline(&model, &input).unwrap();
    let b = process_offline(&model, &input).unwrap();
    assert_eq!(a.samples.len(), input.samples.len());
    assert_eq!(
        a.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn wrong_rate_is_rejected() {
    let model = Model::zeros(ModelSpec::lstm(4)).unwrap();
    let err = process_offline(&model, &AudioBuffer::new(vec![0.0; 100], 48_000)).unwrap_err();
    assert!(matches!(err, EvalError::SampleRate { found: 48_000, expected: 44_100 }), "{err}");
}

#[test]
fn stft_distance_matches_the_training_loss() {
    let p = noise(6000, 3, 0.5);
    let t = noise(6000, 4, 0.5);
    for params in LossConfig::default().stft_resolutions {
        let graph = no_grad(|| {
            let pv = Var::constant(Tensor::new(vec![1, p.len()], p.iter().map(|&v| v as f64).collect()).unwrap());
            let tv = Var::constant(Tensor::new(vec![1, t.len()], t.iter().map(|&v| v as f64).collect()).unwrap());
            stft_loss(&pv, &tv, &params).unwrap().value().item()
        });
        let direct = stft_distance(&p, &t, &params).unwrap();
        assert!((graph - direct).abs() <= 1e-10 * graph.abs(), "{params:?}: {graph} vs {direct}");
    }
}

#[test]
fn identical_signals_give_zero_series() {
    let y = noise(WINDOW * 3 + 500, 5, 0.3);
    let series = windowed_errors(&y, &y, WINDOW, &WINDOW_STFT).unwrap();
    assert_eq!(series.len(), 3);
    assert!(series.iter().all(|w| w.l1 == 0.0 && w.stft == 0.0));
    assert_eq!(series.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, WINDOW, 2 * WINDOW]);
}

#[test]
fn local_error_stays_in_its_window() {
    let y = noise(WINDOW * 4, 6, 0.3);
    let mut p = y.clone();
    for v in &mut p[2 * WINDOW + 100..2 * WINDOW + 400] {
        *v += 0.1;
    }
    let series = windowed_errors(&p, &y, WINDOW, &WINDOW_STFT).unwrap();
    let nonzero: Vec<usize> = series.iter().filter(|w| w.l1 != 0.0).map(|w| w.index).collect();
    assert_eq!(nonzero, vec![2]);
}

#[test]
fn length_mismatch_is_an_error() {
    let err = windowed_errors(&[0.0; 9000], &[0.0; 9001], WINDOW, &WINDOW_STFT).unwrap_err();
    assert!(matches!(err, EvalError::LengthMismatch { pred: 9000, target: 9001 }));
    assert!(windowed_errors(&[0.0; 9000], &[0.0; 9000], 1024, &WINDOW_STFT).is_err());
}

#[test]
fn windowed_sums_bound_the_total() {
    for len in [WINDOW * 3, WINDOW * 3 + 1234] {
        let p = noise(len, 7, 0.5);
        let t = noise(len, 8, 0.5);
        let series = windowed_errors(&p, &t, WINDOW, &WINDOW_STFT).unwrap();
        let windowed: f64 = series.iter().map(|w| w.l1 * WINDOW as f64).sum();
        let total: f64 = p.iter().zip(&t).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
        if len % WINDOW == 0 {
            assert!((windowed - total).abs() <= 1e-9 * total);
        } else {
            assert!(windowed < total);
        }
    }
}

#[test]
fn aggregate_l1_is_the_all_sample_mean() {
    // An identity model: the error is the input minus the target.
    let model = Model::zeros(ModelSpec::lstm(2)).unwrap();
    let len = WINDOW + 4000;
    let input = vec![0.0f32; len];
    let mut target = vec![0.0f32; len];
    target[..WINDOW].iter_mut().for_each(|v| *v = 0.1);
    target[WINDOW..].iter_mut().for_each(|v| *v = 0.5);
    let files =
        vec![("a".to_string(), AudioBuffer::new(input, SAMPLE_RATE), AudioBuffer::new(target.clone(), SAMPLE_RATE))];
    let report = evaluate(&model, "identity", None, &files, &LossConfig::default()).unwrap();
    let expected = (WINDOW as f64 * 0.1f32 as f64 + 4000.0 * 0.5) / len as f64;
    assert!((report.l1 - expected).abs() < 1e-12);
    assert_eq!(report.windows.len(), 1);
    assert!((report.windows[0].l1 - 0.1f32 as f64).abs() < 1e-12);
}

#[test]
fn multi_file_reports_are_sample_weighted() {
    let model = Model::new(ModelSpec::gcn(1, 3, 3, 2, 4), 1).unwrap();
    let files: Vec<_> = [(WINDOW * 2, 1u64), (WINDOW + 3000, 2)]
        .iter()
        .map(|&(len, seed)| {
            (
                format!("f{seed}"),
                AudioBuffer::new(noise(len, seed, 0.5), SAMPLE_RATE),
                AudioBuffer::new(noise(len, seed + 10, 0.5), SAMPLE_RATE),
            )
        })
        .collect();
    let report = evaluate(&model, "m", Some("x.ckpt".into()), &files, &LossConfig::default()).unwrap();
    let n: Vec<f64> = report.files.iter().map(|f| f.samples as f64).collect();
    let l1 = (report.files[0].l1 * n[0] + report.files[1].l1 * n[1]) / (n[0] + n[1]);
    assert!((report.l1 - l1).abs() < 1e-12);
    assert_eq!(report.windows.len(), 3);
    assert_eq!(report.windows[2].start, 2 * WINDOW);
    assert_eq!(report.params, model.num_params());
    assert_eq!(report, evaluate(&model, "m", Some("x.ckpt".into()), &files, &LossConfig::default()).unwrap());
}

#[test]
fn percentiles_match_a_sorted_reference() {
    let v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
    assert_eq!(percentile(&v, 50.0), Some(50.5));
    assert!((percentile(&v, 95.0).unwrap() - 95.05).abs() < 1e-12);
    assert_eq!(percentile(&v, 0.0), Some(1.0));
    assert_eq!(percentile(&v, 100.0), Some(100.0));
    assert_eq!(percentile(&[], 50.0), None);
    assert_eq!(percentile(&[3.0, f64::NAN], 50.0), Some(3.0));
}

#[test]
fn histogram_counts_every_value() {
    let v = [0.0, 0.05, 0.1, 0.5, 0.99, 1.0, 7.0, -1.0];
    let h = histogram(&v, 0.0, 1.0, 10).unwrap();
    assert_eq!(h.edges.len(), 11);
    assert_eq!(h.counts.iter().sum::<usize>(), v.len());
    assert_eq!(h.counts[0], 3);
    assert_eq!(h.counts[9], 3);
    assert!(histogram(&v, 1.0, 1.0, 4).is_err());
}

/// Two models whose per-window L1 follows known distributions: the second
/// has a higher median and a heavier tail. The statistics recovered from the
/// written CSV equal the closed-form values.
#[test]
fn window_statistics_survive_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let windows = 40;
    let target = noise(WINDOW * windows, 9, 0.4);
    let level = |model: usize, i: usize| -> f64 {
        let base = 0.01 * (i + 1) as f64 / windows as f64;
        if model == 0 {
            base
        } else if i >= windows - 4 {
            base * 2.0 + 0.05
        } else {
            base * 2.0
        }
    };
    let mut stats = Vec::new();
    for model in 0..2 {
        // Constant offsets make each window's L1 equal to its level.
        let pred: Vec<f32> =
            target.iter().enumerate().map(|(n, &y)| (y as f64 + level(model, n / WINDOW)) as f32).collect();
        let series = windowed_errors(&pred, &target, WINDOW, &WINDOW_STFT).unwrap();
        let path = dir.path().join(format!("m{model}/windowed.csv"));
        write_windowed_csv(&series, &path).unwrap();
        let back = read_windowed_csv(&path).unwrap();
        assert_eq!(back, series);
        let l1s: Vec<f64> = back.iter().map(|w| w.l1).collect();
        let expected: Vec<f64> = (0..windows).map(|i| level(model, i)).collect();
        let got = SeriesStats::of(&l1s).unwrap();
        let want = SeriesStats::of(&expected).unwrap();
        assert!((got.median - want.median).abs() < 1e-6, "{got:?} vs {want:?}");
        assert!((got.p95 - want.p95).abs() < 1e-6, "{got:?} vs {want:?}");
        stats.push(got);
    }
    assert!(stats[1].median > stats[0].median);
    assert!(stats[1].p95 - stats[1].median > stats[0].p95 - stats[0].median);
}

#[test]
fn single_report_is_best() {
    let rows = compare([row("gcn-3", 31969, 0.1, 0.5)]);
    assert!(rows[0].best_flag);
}

#[test]
fn ties_go_to_lower_mrstft() {
    let rows = compare([row("a", 1, 0.25, 0.5), row("b", 1, 0.5, 0.25), row("c", 1, 0.4, 0.6)]);
    let best: Vec<&str> = rows.iter().filter(|r| r.best_flag).map(|r| r.model.as_str()).collect();
    assert_eq!(best, vec!["b"]);
}

#[test]
fn non_finite_rows_are_never_best() {
    let rows = compare([row("a", 1, f64::NAN, 0.1), row("b", 1, 0.3, 0.3)]);
    assert!(!rows[0].best_flag && rows[1].best_flag);
}

#[test]
fn summary_csv_has_the_table_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.csv");
    write_summary_csv(&compare([row("gcntf-3", 71137, 0.05, 0.279), row("gcn-3", 31969, 0.07, 0.502)]), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("model,params,l1,mrstft,best_flag"));
    assert_eq!(lines.next(), Some("gcn-3,31969,0.07,0.502,false"));
    assert_eq!(lines.next(), Some("gcntf-3,71137,0.05,0.279,true"));
}

proptest! {
    #[test]
    fn compare_ignores_input_order(
        values in prop::collection::vec((0u8..6, 0u8..4, 0u8..4), 1..8),
        seed in any::<u64>(),
    ) {
        let rows: Vec<SummaryRow> = values
            .iter()
            .map(|&(m, a, b)| row(&format!("m{m}"), m as usize, a as f64 / 4.0, b as f64 / 4.0))
            .collect();
        let mut shuffled = rows.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        prop_assert_eq!(compare(rows), compare(shuffled));
    }

    #[test]
    fn stft_distance_is_zero_only_for_equal_signals(seed in 0u64..100, gain in 0.5f32..2.0) {
        let t = noise(4096, seed, 0.5);
        let p: Vec<f32> = t.iter().map(|v| v * gain).collect();
        let params = StftParams::new(1024, 256, 1024).unwrap();
        prop_assert_eq!(stft_distance(&t, &t, &params).unwrap(), 0.0);
        if (gain - 1.0).abs() > 1e-3 {
            prop_assert!(stft_distance(&p, &t, &params).unwrap() > 0.0);
        }
    }
}
