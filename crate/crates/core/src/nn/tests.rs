use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{Tensor, Var};

fn signal(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
}

fn input<T: crate::tensor::Real>(x: &[f32]) -> Var<T> {
    Var::constant(Tensor::new(vec![1, x.len()], x.to_vec()).unwrap().cast())
}

#[test]
fn preset_counts_match_closed_form_and_enumeration() {
    let expected = [
        ("gcn-1", 17121),
        ("gcn-3", 31969),
        ("gcn-250", 65569),
        ("gcn-2500", 26401),
        ("lstm-32", 4513),
        ("lstm-96", 38113),
        ("gcntf-1", 38881),
        ("gcntf-3", 71137),
        ("gcntf-250", 74273),
        ("gcntf-2500", 48161),
    ];
    for (name, count) in expected {
        let spec = ModelSpec::preset(name).unwrap();
        assert_eq!(spec.param_count(), count, "{name}");
        assert_eq!(Model::zeros(spec).unwrap().num_params(), count, "{name}");
    }
    let wide = ModelSpec::preset("gcn-3").unwrap().with_channels(24);
    assert_eq!(wide.param_count(), 70993);
}

#[test]
fn projected_variant_adds_projection_per_layer() {
    let spec = ModelSpec::preset("gcntf-3").unwrap().with_variant(TfilmVariant::Projected);
    assert_eq!(spec.param_count(), 71137 + 18 * 544);
    assert_eq!(Model::new(spec.clone(), 1).unwrap().num_params(), spec.param_count());
}

#[test]
fn receptive_fields() {
    let rf = |n: &str| ModelSpec::preset(n).unwrap().receptive_field().unwrap();
    assert_eq!(rf("gcn-1"), 2047);
    assert_eq!(rf("gcn-3"), 2045);
    assert_eq!(rf("gcn-250"), 10361);
    assert_eq!(rf("gcn-2500"), 118097);
    assert_eq!(rf("gcntf-3"), 2045);
    assert_eq!(ModelSpec::gcn(3, 12, 1, 4, 8).receptive_field().unwrap(), 1);
    assert!(matches!(
        ModelSpec::preset("lstm-32").unwrap().receptive_field(),
        Err(ModelError::UnboundedReceptiveField)
    ));
}

#[test]
fn dilations_reset_per_block() {
    for name in ["gcn-1", "gcn-3", "gcn-250", "gcn-2500"] {
        let spec = ModelSpec::preset(name).unwrap();
        let per_block = spec.layers_per_block();
        for (i, d) in spec.dilations().into_iter().enumerate() {
            assert_eq!(d, spec.dilation_growth.pow((i % per_block) as u32));
        }
        let Some(model::Layout::Gcn { layers, .. }) = Model::zeros(spec.clone()).ok().map(|m| m.layout().clone())
        else {
            panic!("not a convolutional model");
        };
        assert_eq!(layers.iter().map(|l| l.dilation).collect::<Vec<_>>(), spec.dilations());
    }
    assert_eq!(ModelSpec::preset("gcn-3").unwrap().dilations()[9], 1);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(ModelSpec::gcn(4, 10, 3, 2, 16).validate().is_err());
    assert!(ModelSpec::gcn(1, 10, 3, 2, 16).with_tfilm(100).validate().is_err());
    assert!(ModelSpec::gcn(1, 10, 0, 2, 16).validate().is_err());
    assert!(Model::new(ModelSpec::gcn(1, 10, 3, 0, 16), 0).is_err());
    assert!(matches!(ModelSpec::preset("gcn-7"), Err(ModelError::UnknownPreset(_))));
}

#[test]
fn zero_model_maps_zero_to_zero() {
    let model = Model::zeros(ModelSpec::preset("gcntf-1").unwrap()).unwrap();
    assert!(model.infer(&[0.0; 300]).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn single_layer_sees_two_past_samples() {
    let model = Model::new(ModelSpec::gcn(1, 1, 3, 1, 4), 3).unwrap();
    let x = signal(32, 1);
    let base = model.infer(&x).unwrap();
    for t in 0..32 {
        let mut x2 = x.clone();
        x2[t] += 0.25;
        let out = model.infer(&x2).unwrap();
        let changed: Vec<usize> = (0..32).filter(|&i| out[i] != base[i]).collect();
        let expected: Vec<usize> = (t..(t + 3).min(32)).collect();
        assert_eq!(changed, expected);
    }
}

/// Support of the input gradient of output sample `t`: the first and last
/// input index that influences it.
fn gradient_support(model: &Model, len: usize, t: usize) -> (usize, usize) {
    let params = model.vars::<f64>(false);
    let x = Var::leaf(Tensor::new(vec![1, len], signal(len, 9)).unwrap().cast::<f64>(), true);
    let y = model.forward(&params, &x).unwrap();
    y.narrow(1, t, 1).unwrap().sum().backward().unwrap();
    let g = x.grad().unwrap();
    let support: Vec<usize> = (0..len).filter(|&i| g.data()[i] != 0.0).collect();
    (support[0], *support.last().unwrap())
}

#[test]
fn empirical_receptive_field_matches_closed_form() {
    for name in ["gcn-1", "gcn-3", "gcn-250", "gcn-2500"] {
        let spec = ModelSpec::preset(name).unwrap();
        let rf = spec.receptive_field().unwrap();
        let model = Model::new(spec, 11).unwrap();
        let t = rf + 20;
        let (first, last) = gradient_support(&model, t + 30, t);
        assert_eq!((last, last - first + 1), (t, rf), "{name}");
    }
}

fn tfilm_weights(c: usize, variant: TfilmVariant, seed: u64) -> Vec<Var<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Var::constant(Tensor::new(shape, (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect()).unwrap())
    };
    let mut v = vec![t(vec![4 * c, c]), t(vec![4 * c, c]), t(vec![4 * c]), t(vec![4 * c])];
    if variant == TfilmVariant::Projected {
        v.push(t(vec![2 * c, c]));
        v.push(t(vec![2 * c]));
    }
    v
}

fn tfilm_layer(w: &[Var<f64>], block: usize, variant: TfilmVariant) -> TfilmLayer<'_, f64> {
    TfilmLayer {
        block_size: block,
        variant,
        w_ih: &w[0],
        w_hh: &w[1],
        b_ih: &w[2],
        b_hh: &w[3],
        projection: (variant == TfilmVariant::Projected).then(|| (&w[4], &w[5])),
    }
}

#[test]
fn identity_modulation_passes_activations_through() {
    let c = 3;
    let zeros = |s: Vec<usize>| Var::constant(Tensor::<f64>::zeros(s));
    let mut bias = vec![1.0; c];
    bias.extend(vec![0.0; c]);
    let w = vec![
        zeros(vec![4 * c, c]),
        zeros(vec![4 * c, c]),
        zeros(vec![4 * c]),
        zeros(vec![4 * c]),
        zeros(vec![2 * c, c]),
        Var::constant(Tensor::vector(bias)),
    ];
    let z = Var::constant(Tensor::new(vec![c, 21], (0..63).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
    let (y, _) = tfilm_forward(&z, &tfilm_layer(&w, 4, TfilmVariant::Projected)).unwrap();
    assert_eq!(y.data(), z.data());
}

#[test]
fn block_geometry_three_channels_block_four() {
    let (c, len, b) = (3, 16, 4);
    let w = tfilm_weights(c, TfilmVariant::Projected, 2);
    let z = Var::constant(Tensor::full(vec![c, len], 1.0f64));
    let (y, state) = tfilm_forward(&z, &tfilm_layer(&w, b, TfilmVariant::Projected)).unwrap();
    assert_eq!(y.shape(), &[3, 16]);
    assert_eq!(state.samples_into_block, 0);
    for ch in 0..c {
        let row = &y.data()[ch * len..(ch + 1) * len];
        let per_block: Vec<f64> = row.chunks(b).map(|blk| blk[0]).collect();
        assert_eq!(per_block.len(), 4);
        for blk in row.chunks(b) {
            assert!(blk.iter().all(|&v| v == blk[0]));
        }
        // Constant input drives the controller, so consecutive blocks differ.
        assert!(per_block.windows(2).all(|p| p[0] != p[1]));
    }
}

#[test]
fn hidden_cell_first_block_uses_zero_state() {
    let w = tfilm_weights(2, TfilmVariant::HiddenCell, 4);
    let z = Var::constant(Tensor::full(vec![2, 10], 0.7f64));
    let (y, state) = tfilm_forward(&z, &tfilm_layer(&w, 4, TfilmVariant::HiddenCell)).unwrap();
    for ch in 0..2 {
        assert!(y.data()[ch * 10..ch * 10 + 4].iter().all(|&v| v == 0.0));
        assert!(y.data()[ch * 10 + 4..ch * 10 + 10].iter().all(|&v| v != 0.0));
    }
    assert_eq!(state.samples_into_block, 2);
    assert_eq!(state.block_max, vec![0.7f32, 0.7]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn controller_is_block_causal(seed in 0u64..10_000, k in 0usize..5, hidden_cell in any::<bool>()) {
        let variant = if hidden_cell { TfilmVariant::HiddenCell } else { TfilmVariant::Projected };
        let (c, b, len) = (3usize, 4usize, 24usize);
        let w = tfilm_weights(c, variant, seed);
        let layer = tfilm_layer(&w, b, variant);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let a: Vec<f64> = (0..c * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut other = a.clone();
        for ch in 0..c {
            for t in (k + 1) * b..len {
                other[ch * len + t] = rng.gen_range(-1.0..1.0);
            }
        }
        let run = |d: &[f64]| tfilm_forward(&Var::constant(Tensor::new(vec![c, len], d.to_vec()).unwrap()), &layer).unwrap().0;
        let (ya, yb) = (run(&a), run(&other));
        for ch in 0..c {
            for t in 0..(k + 1) * b {
                prop_assert_eq!(ya.data()[ch * len + t], yb.data()[ch * len + t]);
            }
        }
    }

    #[test]
    fn gcntf_is_sample_causal(seed in 0u64..1000, t in 0usize..200) {
        let spec = ModelSpec::gcn(2, 4, 3, 2, 4).with_tfilm(8);
        let model = Model::new(spec, seed).unwrap();
        let x = signal(256, seed);
        let base = model.infer(&x).unwrap();
        let mut x2 = x;
        x2[t] -= 0.3;
        let out = model.infer(&x2).unwrap();
        for i in 0..t {
            prop_assert_eq!(base[i], out[i]);
        }
    }
}

#[test]
fn gcntf_with_identity_modulation_equals_gcn() {
    for name in ["gcn-1", "gcn-3"] {
        let gcn_spec = ModelSpec::preset(name).unwrap();
        let tf_spec = gcn_spec.clone().with_tfilm(64).with_variant(TfilmVariant::Projected);
        let mut tf = Model::new(tf_spec, 5).unwrap();
        let c = gcn_spec.channels;
        let names: Vec<String> = tf.names().to_vec();
        for name in names.iter().filter(|n| n.contains(".tfilm.")) {
            let p = tf.param_mut(name).unwrap();
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
            if name.ends_with("proj.bias") {
                p.data_mut()[..c].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        let named =
            tf.named().filter(|(n, _)| !n.contains(".tfilm.")).map(|(n, t)| (n.to_string(), t.clone())).collect();
        let gcn = Model::from_named(gcn_spec, named).unwrap();
        let x = signal(3000, 8);
        assert_eq!(tf.infer(&x).unwrap(), gcn.infer(&x).unwrap(), "{name}");
    }
}

#[test]
fn recurrent_baseline() {
    let spec = ModelSpec::preset("lstm-32").unwrap();
    let zero = Model::zeros(spec.clone()).unwrap();
    let x = signal(100, 3);
    assert_eq!(zero.infer(&x).unwrap(), x);

    let params = zero.vars::<f32>(false);
    let Some(model::Layout::Lstm { w_ih, w_hh, b_ih, b_hh, .. }) = Some(zero.layout().clone()) else { unreachable!() };
    let vars = LstmVars { w_ih: &params[w_ih], w_hh: &params[w_hh], b_ih: &params[b_ih], b_hh: &params[b_hh] };
    let (h, state) = lstm_forward(&input::<f32>(&[0.0; 50]), &vars).unwrap();
    assert_eq!(h.shape(), &[32, 50]);
    assert!(h.data().iter().all(|&v| v == 0.0));
    assert!(state.h.iter().chain(&state.c).all(|&v| v == 0.0));

    let trained = Model::new(spec, 1).unwrap();
    assert_ne!(trained.infer(&x).unwrap(), x);
}

#[test]
fn full_gcntf3_backward_gives_finite_grads_everywhere() {
    let model = Model::new(ModelSpec::preset("gcntf-3").unwrap(), 17).unwrap();
    let params = model.vars::<f32>(true);
    let x = input::<f32>(&signal(4096, 2));
    let y = model.forward(&params, &x).unwrap();
    y.square().mean().backward().unwrap();
    for (name, p) in model.names().iter().zip(&params) {
        let g = p.grad().unwrap_or_else(|| panic!("{name} has no gradient"));
        assert!(g.data().iter().all(|v| v.is_finite()), "{name}");
    }
}

#[test]
fn from_named_validates() {
    let spec = ModelSpec::gcn(1, 2, 3, 2, 2);
    let model = Model::new(spec.clone(), 0).unwrap();
    let mut named: Vec<(String, Tensor<f32>)> = model.named().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let again = Model::from_named(spec.clone(), named.clone()).unwrap();
    assert_eq!(again.params(), model.params());

    named[0].1 = Tensor::zeros(vec![1]);
    assert!(matches!(Model::from_named(spec.clone(), named.clone()), Err(ModelError::ParamShape { .. })));
    named.remove(0);
    assert!(matches!(Model::from_named(spec, named), Err(ModelError::MissingParam(_))));
}
