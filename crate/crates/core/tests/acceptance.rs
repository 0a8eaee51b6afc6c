//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! The two desk-scale training experiments take hours and only run when
//! `--include-ignored` (or `--ignored`) is passed:
//!
//! ```text
//! cargo test --release -p tfilm-fx --test acceptance -- --include-ignored
//! ```
//!
//! Any other non-flag argument filters criteria by name.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfilm_fx::effects::{
    compressor_gain_trace, db_to_gain, fuzz_envelope_trace, render, synthesize_corpus, time_to_63, CompressorParams,
    EffectParams, FuzzParams, SignalPlan, Split, COMPRESSOR_GRID, FUZZ_GRID,
};
use tfilm_fx::eval::{
    compare, evaluate_manifest, read_windowed_csv, windowed_errors, write_summary_csv, write_windowed_csv, SeriesStats,
    WINDOW, WINDOW_STFT,
};
use tfilm_fx::nn::{Model, ModelSpec, PRESETS};
use tfilm_fx::stream::Streamer;
use tfilm_fx::tensor::gradcheck::{check_gradients, DEFAULT_STEP};
use tfilm_fx::tensor::{lstm_sequence, StftParams, Tensor, Var};
use tfilm_fx::train::{composite_loss, mr_stft, train, LossConfig, TrainConfig, TrainData, TrainOptions};

const FS: f64 = 44_100.0;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);
type DeskCriterion = (&'static str, fn(&DeskRuns) -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

// ---------------------------------------------------------------- counts

fn parameter_counts() -> Check {
    // (preset, closed form, rounded reference count)
    let table = [
        ("gcn-1", 17121, 17.1e3),
        ("gcn-3", 31969, 31.97e3),
        ("gcn-250", 65569, 65.6e3),
        ("gcn-2500", 26401, 26.4e3),
        ("lstm-32", 4513, 4.5e3),
        ("lstm-96", 38113, 38.1e3),
        ("gcntf-1", 38881, 38.9e3),
        ("gcntf-3", 71137, 71.14e3),
        ("gcntf-250", 74273, 74.3e3),
        ("gcntf-2500", 48161, 48.2e3),
    ];
    let mut bad = Vec::new();
    let mut worst = 0.0f64;
    for (name, exact, rounded) in table {
        let spec = ModelSpec::preset(name).unwrap();
        let counted = spec.param_count();
        let enumerated = Model::zeros(spec).unwrap().num_params();
        let rel = (counted as f64 - rounded).abs() / rounded;
        worst = worst.max(rel);
        if counted != exact || enumerated != exact || rel > 0.005 {
            bad.push(format!("{name}: {counted}/{enumerated} vs {exact}"));
        }
    }
    ensure(
        bad.is_empty(),
        if bad.is_empty() {
            format!("10 presets exact; worst deviation from rounded counts {:.3}%", worst * 100.0)
        } else {
            bad.join("; ")
        },
    )
}

// ----------------------------------------------------- receptive fields

/// First and last input index whose gradient reaches output sample `t`.
fn gradient_support(model: &Model, len: usize, t: usize) -> (usize, usize) {
    let params = model.vars::<f64>(false);
    let x = Var::leaf(random(&[1, len], 5), true);
    let y = model.forward(&params, &x).unwrap();
    y.narrow(1, t, 1).unwrap().sum().backward().unwrap();
    let g = x.grad().unwrap();
    let support: Vec<usize> = (0..len).filter(|&i| g.data()[i] != 0.0).collect();
    (support[0], *support.last().unwrap())
}

fn receptive_fields() -> Check {
    let expected = [("gcn-1", 2047), ("gcn-3", 2045), ("gcn-250", 10361), ("gcn-2500", 118097)];
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, want) in expected {
        let spec = ModelSpec::preset(name).unwrap();
        let analytic = spec.receptive_field().unwrap();
        let model = Model::new(spec, 3).unwrap();
        let t = analytic + 10;
        let (first, last) = gradient_support(&model, t + 10, t);
        let empirical = last - first + 1;
        ok &= analytic == want && empirical == want && last == t;
        lines.push(format!("{name} {analytic}/{empirical}"));
    }
    ensure(ok, format!("analytic/empirical: {}", lines.join(", ")))
}

// ------------------------------------------------------------- gradients

fn gradients() -> Check {
    let mut worst_primitive = 0.0f64;
    let mut worst_composite = 0.0f64;
    let mut record = |check: tfilm_fx::tensor::gradcheck::GradCheck, composite: bool| {
        let e = check.max_relative_error();
        let slot = if composite { &mut worst_composite } else { &mut worst_primitive };
        *slot = slot.max(e);
    };

    let w = random(&[3, 2], 9);
    record(
        check_gradients(
            &[random(&[3, 4], 1), random(&[4, 2], 2)],
            |x| Ok(x[0].matmul(&x[1])?.mul(&Var::constant(w.clone()))?.sum()),
            DEFAULT_STEP,
            None,
        )
        .unwrap(),
        false,
    );

    let w = random(&[3, 16], 7);
    record(
        check_gradients(
            &[random(&[2, 16], 3), random(&[3, 2, 3], 4), random(&[3], 5)],
            |x| Ok(x[0].conv1d_causal(&x[1], &x[2], 2)?.tanh().mul(&Var::constant(w.clone()))?.sum()),
            DEFAULT_STEP,
            None,
        )
        .unwrap(),
        false,
    );

    let x = random(&[12], 11);
    let positive = Tensor::new(vec![12], x.data().iter().map(|v| v.abs() + 0.1).collect()).unwrap();
    record(
        check_gradients(
            &[x, positive],
            |x| {
                let a = x[0].sigmoid().add(&x[0].tanh())?.add(&x[0].abs())?;
                let b = x[1].log().add(&x[1].sqrt())?.add(&x[1].square())?;
                Ok(a.mul(&b)?.div(&x[1])?.mean())
            },
            DEFAULT_STEP,
            None,
        )
        .unwrap(),
        false,
    );

    let w = random(&[3, 10], 21);
    record(
        check_gradients(
            &[random(&[3, 6], 12), random(&[3, 3], 13)],
            |x| {
                let cat = Var::concat(&[x[0].clone(), x[1].clone()], 1)?;
                let blocks = cat.narrow(1, 2, 4)?.maxpool1d(2)?;
                let expanded = blocks.expand_blocks(4, 7)?;
                let rows = Var::concat(&[expanded, cat.narrow(1, 6, 3)?], 1)?;
                Ok(rows.mul(&Var::constant(w.clone()))?.reshape(vec![30])?.sum())
            },
            DEFAULT_STEP,
            None,
        )
        .unwrap(),
        false,
    );

    let w = random(&[6, 9], 40);
    record(
        check_gradients(
            &[random(&[2, 9], 41), random(&[12, 2], 42), random(&[12, 3], 43), random(&[12], 44), random(&[12], 45)],
            |x| Ok(lstm_sequence(&x[0], &x[1], &x[2], &x[3], &x[4])?.mul(&Var::constant(w.clone()))?.sum()),
            DEFAULT_STEP,
            None,
        )
        .unwrap(),
        false,
    );

    let params = StftParams::new(64, 16, 48).unwrap();
    record(
        check_gradients(
            &[random(&[1, 200], 32)],
            |x| Ok(x[0].stft_magnitude(&params)?.log().mean()),
            DEFAULT_STEP,
            None,
        )
        .unwrap(),
        true,
    );

    let loss = LossConfig {
        alpha: 1.0,
        stft_resolutions: vec![StftParams::new(32, 8, 32).unwrap(), StftParams::new(64, 16, 64).unwrap()],
    };
    let target = Var::constant(random(&[1, 160], 50));
    record(
        check_gradients(&[random(&[1, 160], 51)], |x| mr_stft(&x[0], &target, &loss), DEFAULT_STEP, Some(64)).unwrap(),
        true,
    );

    // Full GCNTF-3 topology (2 blocks of 9 dilated layers, TFiLM after each)
    // at reduced width and block size, through the composite loss.
    let spec = ModelSpec::preset("gcntf-3").unwrap().with_channels(2).with_tfilm(8);
    let model = Model::new(spec, 4).unwrap();
    let inputs: Vec<Tensor<f64>> = model.params().iter().map(|t| t.cast::<f64>()).collect();
    let x = Var::constant(random(&[1, 96], 60).cast::<f64>());
    let y = Var::constant(random(&[1, 96], 61));
    record(
        check_gradients(
            &inputs,
            |p| {
                let out = model.forward(p, &x).expect("forward");
                Ok(composite_loss(&out, &y, &loss)?.0)
            },
            DEFAULT_STEP,
            Some(6),
        )
        .unwrap(),
        true,
    );

    ensure(
        worst_primitive < 1e-4 && worst_composite < 1e-3,
        format!(
            "max relative error {worst_primitive:.2e} primitives, {worst_composite:.2e} STFT/composite incl. GCNTF-3"
        ),
    )
}

// ------------------------------------------------------------ ballistics

fn dc_step(lead: usize, loud: usize, quiet: usize, level: f32) -> Vec<f32> {
    let mut x = vec![0.0; lead];
    x.resize(lead + loud, level);
    x.resize(lead + loud + quiet, 0.0);
    x
}

fn ballistics() -> Check {
    let lead = 100;
    let mut lines = Vec::new();
    let mut ok = true;
    let within = |m: f64, e: f64| (m - e).abs() <= 0.05 * e;
    for (attack, release) in FUZZ_GRID {
        let p = FuzzParams { attack_ms: attack, release_ms: release, ..FuzzParams::default() };
        let loud = (FS * attack * 20.0 / 1000.0) as usize + lead;
        let x = dc_step(lead, loud, (FS * release * 4.0 / 1000.0) as usize, 0.5);
        let env = fuzz_envelope_trace(&x, &p, FS).unwrap();
        let a = time_to_63(&env, lead, 0.5, FS).unwrap_or(f64::NAN);
        let r = time_to_63(&env, lead + loud, 0.0, FS).unwrap_or(f64::NAN);
        ok &= within(a, attack) && within(r, release);
        lines.push(format!("fuzz {attack}/{release}: {a:.2}/{r:.1}"));
    }
    for (attack, release) in COMPRESSOR_GRID {
        let p = CompressorParams { attack_ms: attack, release_ms: release, ..CompressorParams::default() };
        let loud = (FS * attack * 20.0 / 1000.0) as usize + lead;
        let x = dc_step(lead, loud, (FS * release * 4.0 / 1000.0) as usize, 1.0);
        let g = compressor_gain_trace(&x, &p, FS).unwrap();
        let floor = db_to_gain(p.static_curve_db(0.0));
        let a = time_to_63(&g, lead, floor, FS).unwrap_or(f64::NAN);
        let r = time_to_63(&g, lead + loud, 1.0, FS).unwrap_or(f64::NAN);
        ok &= within(a, attack) && within(r, release);
        lines.push(format!("comp {attack}/{release}: {a:.2}/{r:.1}"));
    }
    ensure(ok, format!("measured ms {}", lines.join(", ")))
}

// ------------------------------------------------------------- streaming

fn streaming() -> Check {
    let plan = SignalPlan { duration_s: 1.0, amplitude_segment_s: 0.25, ..SignalPlan::default() };
    let x = render(&plan, 12).unwrap();
    let mut worst = 0.0f32;
    let mut bad = Vec::new();
    for (i, name) in PRESETS.iter().enumerate() {
        let model = Model::new(ModelSpec::preset(name).unwrap(), 100 + i as u64).unwrap();
        let offline = model.infer(&x).unwrap();
        for chunk in [1, 7, 128, 4096] {
            let mut s = Streamer::new(model.clone());
            let mut out = Vec::with_capacity(x.len());
            for c in x.chunks(chunk) {
                out.extend(s.process(c));
            }
            let err = if out.len() == offline.len() {
                out.iter().zip(&offline).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max)
            } else {
                f32::INFINITY
            };
            worst = worst.max(err);
            if err.is_nan() || err > 1e-5 {
                bad.push(format!("{name}@{chunk}: {err:e}"));
            }
        }
    }
    ensure(
        bad.is_empty(),
        if bad.is_empty() {
            format!("10 presets x chunks {{1,7,128,4096}} over 1 s, max |diff| {worst:e}")
        } else {
            bad.join("; ")
        },
    )
}

// ------------------------------------------------------ windowed errors

fn windowed_tooling() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let windows = 60;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let target: Vec<f32> = (0..WINDOW * windows).map(|_| rng.gen_range(-0.4f32..0.4)).collect();
    // Per-window L1 levels: A uniform on [0.01, 0.02]; B doubled with a
    // heavy tail in the last 5 windows.
    let level = |m: usize, i: usize| -> f64 {
        let base = 0.01 + 0.01 * i as f64 / (windows - 1) as f64;
        match m {
            0 => base,
            _ if i >= windows - 5 => 2.0 * base + 0.1,
            _ => 2.0 * base,
        }
    };
    let mut stats = Vec::new();
    let mut detail = Vec::new();
    let mut ok = true;
    for m in 0..2 {
        let pred: Vec<f32> =
            target.iter().enumerate().map(|(n, &y)| (y as f64 + level(m, n / WINDOW)) as f32).collect();
        let series = windowed_errors(&pred, &target, WINDOW, &WINDOW_STFT).unwrap();
        let path = dir.path().join(format!("model{m}/windowed.csv"));
        write_windowed_csv(&series, &path).unwrap();
        let back = read_windowed_csv(&path).unwrap();
        let l1: Vec<f64> = back.iter().map(|w| w.l1).collect();
        let got = SeriesStats::of(&l1).unwrap();
        let want = SeriesStats::of(&(0..windows).map(|i| level(m, i)).collect::<Vec<_>>()).unwrap();
        ok &= back.len() == windows && (got.median - want.median).abs() < 1e-6 && (got.p95 - want.p95).abs() < 1e-6;
        detail.push(format!("median {:.5} p95 {:.5}", got.median, got.p95));
        stats.push(got);
    }
    ok &= stats[1].median > stats[0].median && stats[1].p95 - stats[1].median > stats[0].p95 - stats[0].median;
    ensure(ok, format!("A {}; B {}; B higher median and heavier tail", detail[0], detail[1]))
}

// ----------------------------------------------------------- determinism

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let plan = SignalPlan { duration_s: 12.0, amplitude_segment_s: 1.0, ..SignalPlan::default() };
    let effect = EffectParams::with_times("fuzz", 1.0, 2500.0).unwrap();
    let mut corpora = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(format!("data-{run}"));
        synthesize_corpus(&plan, &effect, 21, &out).unwrap();
        corpora.push(read_dir_bytes(&out));
    }
    let datagen_same = corpora[0] == corpora[1];
    let other = dir.path().join("data-c");
    synthesize_corpus(&plan, &effect, 22, &other).unwrap();
    let seed_matters = read_dir_bytes(&other) != corpora[0];

    let manifest = tfilm_fx::effects::DatasetManifest::load(dir.path().join("data-a/manifest.json")).unwrap();
    let loss = LossConfig::default();
    let cfg = TrainConfig {
        max_epochs: 2,
        segment_length: 16384,
        batch_size: 2,
        seed: 9,
        threads: 1,
        ..TrainConfig::default()
    };
    let data = TrainData::from_manifest(&manifest, cfg.segment_length, loss.min_length()).unwrap();
    let spec = ModelSpec::preset("gcntf-1").unwrap().with_channels(4).with_tfilm(64);
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(format!("train-{run}"));
        let model = Model::new(spec.clone(), cfg.seed).unwrap();
        train(model, &data, &cfg, &loss, TrainOptions { out_dir: Some(out.clone()), ..TrainOptions::default() })
            .unwrap();
        runs.push(read_dir_bytes(&out));
    }
    let train_same = runs[0] == runs[1];

    let ck = tfilm_fx::train::Checkpoint::load(dir.path().join("train-a/best.ckpt")).unwrap();
    let mut evals = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(format!("eval-{run}"));
        let report = evaluate_manifest(&ck.model, "m", None, &manifest, Split::Test, &loss).unwrap();
        write_summary_csv(&compare([&report]), out.join("summary.csv")).unwrap();
        write_windowed_csv(&report.windows, out.join("windowed.csv")).unwrap();
        evals.push(read_dir_bytes(&out));
    }
    let eval_same = evals[0] == evals[1];
    ensure(
        datagen_same && seed_matters && train_same && eval_same,
        format!(
            "datagen identical: {datagen_same} (other seed differs: {seed_matters}), train identical: {train_same}, eval identical: {eval_same}"
        ),
    )
}

// ------------------------------------------------------------ desk scale

/// Validation MR-STFT at the best epoch of each run, per seed.
struct DeskRuns {
    gcn_c8: Vec<f64>,
    gcntf_c8: Vec<f64>,
    gcn_c12: Vec<f64>,
}

const DESK_SEEDS: u64 = 5;

fn desk_runs() -> DeskRuns {
    let dir = tempfile::tempdir().unwrap();
    // 8 minutes split 50/25/25: 4 min train, 2 min val.
    let plan = SignalPlan { duration_s: 480.0, ..SignalPlan::default() };
    let effect = EffectParams::with_times("fuzz", 1.0, 2500.0).unwrap();
    let manifest = synthesize_corpus(&plan, &effect, 2024, dir.path()).unwrap();
    let loss = LossConfig::default();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let base = TrainConfig { max_epochs: 150, threads, ..TrainConfig::default() };
    let data = TrainData::from_manifest(&manifest, base.segment_length, loss.min_length()).unwrap();
    let gcn3 = ModelSpec::preset("gcn-3").unwrap();
    let run = |spec: ModelSpec, seed: u64| -> f64 {
        let cfg = TrainConfig { seed, ..base.clone() };
        let started = Instant::now();
        let out = train(Model::new(spec.clone(), seed).unwrap(), &data, &cfg, &loss, TrainOptions::default()).unwrap();
        let best = out.history.iter().min_by(|a, b| a.val_loss.total_cmp(&b.val_loss)).unwrap();
        eprintln!(
            "  {} C={} seed {seed}: val MR-STFT {:.4} at epoch {} ({:.0} s)",
            if spec.has_tfilm() { "gcntf-3" } else { "gcn-3" },
            spec.channels,
            best.val_mrstft,
            best.epoch,
            started.elapsed().as_secs_f64()
        );
        best.val_mrstft
    };
    let mut runs = DeskRuns { gcn_c8: Vec::new(), gcntf_c8: Vec::new(), gcn_c12: Vec::new() };
    for seed in 0..DESK_SEEDS {
        runs.gcn_c8.push(run(gcn3.clone().with_channels(8), seed));
        runs.gcntf_c8.push(run(gcn3.clone().with_channels(8).with_tfilm(128), seed));
        runs.gcn_c12.push(run(gcn3.clone().with_channels(12), seed));
    }
    runs
}

fn wins(tfilm: &[f64], plain: &[f64]) -> usize {
    tfilm.iter().zip(plain).filter(|(a, b)| a < b).count()
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/")
}

fn desk_ordering(runs: &DeskRuns) -> Check {
    let w = wins(&runs.gcntf_c8, &runs.gcn_c8);
    ensure(
        w >= 4,
        format!("GCNTF-3 beats GCN-3 (C=8) in {w}/5 seeds: {} vs {}", fmt(&runs.gcntf_c8), fmt(&runs.gcn_c8)),
    )
}

fn channel_width(runs: &DeskRuns) -> Check {
    let w = wins(&runs.gcntf_c8, &runs.gcn_c12);
    let (a, b) = (
        ModelSpec::preset("gcntf-3").unwrap().with_channels(8).param_count(),
        ModelSpec::preset("gcn-3").unwrap().with_channels(12).param_count(),
    );
    ensure(
        w >= 4,
        format!(
            "GCNTF-3 C=8 ({a}) beats widened GCN-3 C=12 ({b}) in {w}/5 seeds: {} vs {}",
            fmt(&runs.gcntf_c8),
            fmt(&runs.gcn_c12)
        ),
    )
}

// ------------------------------------------------------------------ main

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let long = args.iter().any(|a| a == "--include-ignored" || a == "--ignored");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));

    let criteria: [Criterion; 6] = [
        ("parameter_counts", parameter_counts),
        ("receptive_field", receptive_fields),
        ("gradient_check", gradients),
        ("oracle_ballistics", ballistics),
        ("streaming_equivalence", streaming),
        ("windowed_error_tooling", windowed_tooling),
    ];
    let mut failed = 0;
    let mut report = |name: &str, started: Instant, result: std::thread::Result<Check>| {
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(Ok(d)) => println!("PASS {name}: {d} [{secs:.1} s]"),
            Ok(Err(d)) => {
                failed += 1;
                println!("FAIL {name}: {d} [{secs:.1} s]");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked [{secs:.1} s]");
            }
        }
    };
    for (name, f) in criteria {
        if selected(name) {
            let started = Instant::now();
            report(name, started, catch_unwind(f));
        }
    }
    if selected("determinism") {
        let started = Instant::now();
        report("determinism", started, catch_unwind(determinism));
    }

    let desk: [DeskCriterion; 2] = [("desk_scale_ordering", desk_ordering), ("channel_width_control", channel_width)];
    let wanted: Vec<_> = desk.iter().filter(|(n, _)| selected(n)).collect();
    if !wanted.is_empty() {
        if long {
            let started = Instant::now();
            match catch_unwind(desk_runs) {
                Ok(runs) => {
                    for (name, f) in wanted {
                        report(name, started, catch_unwind(AssertUnwindSafe(|| f(&runs))));
                    }
                }
                Err(e) => {
                    for (name, _) in wanted {
                        report(name, started, Err(Box::new(format!("{e:?}"))));
                    }
                }
            }
        } else {
            for (name, _) in wanted {
                println!("IGNORED {name}: long-running training experiment, run with --include-ignored");
            }
        }
    }

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
