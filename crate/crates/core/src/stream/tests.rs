use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{ModelSpec, PRESETS};

fn noise(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-0.8f32..0.8)).collect()
}

fn chunked(model: &Model, x: &[f32], sizes: &[usize]) -> (Vec<f32>, Streamer) {
    let mut s = stream_init(model);
    let mut out = Vec::with_capacity(x.len());
    let mut pos = 0;
    let mut i = 0;
    while pos < x.len() {
        let n = sizes[i % sizes.len()].max(1).min(x.len() - pos);
        let y = stream_process(&mut s, &x[pos..pos + n]);
        assert_eq!(y.len(), n);
        out.extend(y);
        pos += n;
        i += 1;
    }
    (out, s)
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn small_models() -> Vec<Model> {
    vec![
        Model::new(ModelSpec::gcn(1, 4, 3, 2, 4), 1).unwrap(),
        Model::new(ModelSpec::gcn(2, 4, 3, 3, 3).with_tfilm(4), 2).unwrap(),
        Model::new(ModelSpec::gcn(1, 3, 5, 2, 3).with_tfilm(16).with_variant(crate::nn::TfilmVariant::Projected), 3)
            .unwrap(),
        Model::new(ModelSpec::lstm(6), 4).unwrap(),
    ]
}

#[test]
fn whole_signal_chunk_matches_offline_exactly() {
    let x = noise(3000, 9);
    for model in small_models() {
        let (y, _) = chunked(&model, &x, &[x.len()]);
        assert_eq!(y, model.infer(&x).unwrap(), "{:?}", model.spec());
    }
}

#[test]
fn every_preset_streams_like_offline() {
    let x = noise(6000, 11);
    for name in PRESETS {
        let model = Model::new(ModelSpec::preset(name).unwrap(), 5).unwrap();
        let offline = model.infer(&x).unwrap();
        for size in [1, 7, 128, 4096] {
            let (y, _) = chunked(&model, &x, &[size]);
            let err = max_abs_diff(&y, &offline);
            assert!(err <= 1e-5, "{name} chunk {size}: {err}");
        }
    }
}

#[test]
fn context_and_state_shapes() {
    let gcn1 = stream_init(&Model::new(ModelSpec::preset("gcn-1").unwrap(), 0).unwrap());
    assert_eq!(gcn1.state().context_samples(), 2046);
    assert!(gcn1.state().tfilm_states().is_empty());

    let spec = ModelSpec::preset("gcntf-3").unwrap();
    let s = stream_init(&Model::new(spec.clone(), 0).unwrap());
    let states = s.state().tfilm_states();
    assert_eq!(states.len(), spec.layers);
    for st in states {
        assert_eq!(st.h.len(), spec.channels);
        assert_eq!(st.c.len(), spec.channels);
        assert_eq!(st.samples_into_block, 0);
    }

    let lstm = stream_init(&Model::new(ModelSpec::lstm(32), 0).unwrap());
    let (h, c) = lstm.state().lstm_state().unwrap();
    assert_eq!((h.len(), c.len()), (32, 32));
}

#[test]
fn state_size_does_not_grow() {
    let model = Model::new(ModelSpec::gcn(1, 4, 3, 2, 4).with_tfilm(8), 3).unwrap();
    let mut s = stream_init(&model);
    let before = s.state().len_floats();
    for seed in 0..20 {
        s.process(&noise(997, seed));
        assert_eq!(s.state().len_floats(), before);
    }
    assert_eq!(s.state().samples_consumed(), 20 * 997);
}

#[test]
fn silence_in_silence_out() {
    for spec in [ModelSpec::preset("gcn-3").unwrap(), ModelSpec::preset("gcntf-1").unwrap(), ModelSpec::lstm(8)] {
        let model = Model::zeros(spec).unwrap();
        let (y, _) = chunked(&model, &vec![0.0; 1000], &[7]);
        assert!(y.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn recurrent_state_matches_offline_final_state() {
    let model = Model::new(ModelSpec::lstm(5), 8).unwrap();
    let x = noise(500, 2);
    let (_, s) = chunked(&model, &x, &[13, 1, 64]);
    let params = model.vars::<f32>(false);
    let xv = crate::tensor::Var::constant(crate::tensor::Tensor::new(vec![1, x.len()], x.clone()).unwrap());
    let vars = crate::nn::LstmVars { w_ih: &params[0], w_hh: &params[1], b_ih: &params[2], b_hh: &params[3] };
    let (_, state) = crate::nn::lstm_forward(&xv, &vars).unwrap();
    let (h, c) = s.state().lstm_state().unwrap();
    assert_eq!((h, c), (state.h.as_slice(), state.c.as_slice()));
}

#[test]
fn reset_restores_the_fresh_state() {
    let model = small_models().swap_remove(1);
    let x = noise(700, 4);
    let mut s = stream_init(&model);
    let first = s.process(&x);
    s.reset();
    assert_eq!(s.state(), stream_init(&model).state());
    assert_eq!(s.process(&x), first);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_partition_matches_offline(
        sizes in prop::collection::vec(1usize..300, 1..8),
        which in 0usize..4,
        seed in 0u64..1000,
    ) {
        let model = &small_models()[which];
        let x = noise(1500, seed);
        let (y, _) = chunked(model, &x, &sizes);
        prop_assert!(max_abs_diff(&y, &model.infer(&x).unwrap()) <= 1e-5);
    }

    #[test]
    fn controller_steps_follow_samples_consumed(
        sizes in prop::collection::vec(1usize..50, 1..6),
        len in 0usize..400,
    ) {
        let block = 8;
        let model = Model::new(ModelSpec::gcn(1, 3, 3, 2, 3).with_tfilm(block), 0).unwrap();
        let x = noise(len, 1);
        let (_, s) = chunked(&model, &x, &sizes);
        let expected = (len / block) as u64;
        prop_assert!(s.state().controller_steps().iter().all(|&n| n == expected));
        prop_assert!(s.state().tfilm_states().iter().all(|st| st.samples_into_block == len % block));
    }
}
