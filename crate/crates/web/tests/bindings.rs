use serde_json::Value;
use tfilm_fx_web::{compressor_curve_json, effect_defaults_json, model_info_json, step_response_json};

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn model_info_matches_the_presets() {
    let v = parse(model_info_json("gcn-1", 0, 0).unwrap());
    assert_eq!(v["params"], 17121);
    assert_eq!(v["receptive_field"], 2047);
    assert_eq!(v["dilations"].as_array().unwrap().len(), 10);
    let v = parse(model_info_json("gcn-3", 0, 128).unwrap());
    assert_eq!(v["params"], 71137);
    let v = parse(model_info_json("lstm-32", 0, 0).unwrap());
    assert_eq!(v["params"], 4513);
    assert!(v["receptive_field"].is_null());
    assert!(model_info_json("gcn-9", 0, 0).is_err());
    assert!(model_info_json("gcntf-1", 0, 100).is_err());
}

#[test]
fn step_response_recovers_the_ballistics() {
    for (effect, attack, release) in [("fuzz", 10.0, 250.0), ("compressor", 5.0, 250.0)] {
        let v = parse(step_response_json(effect, attack, release).unwrap());
        let a = v["measured_attack_ms"].as_f64().unwrap();
        let r = v["measured_release_ms"].as_f64().unwrap();
        assert!((a - attack).abs() <= 0.05 * attack, "{effect} attack {a}");
        assert!((r - release).abs() <= 0.05 * release, "{effect} release {r}");
        assert!(v["control"].as_array().unwrap().len() <= 1000);
    }
    let v = parse(step_response_json("compressor", 1.0, 50.0).unwrap());
    assert!(v["output"].is_null());
    assert!(step_response_json("wah", 1.0, 1.0).is_err());
    assert!(step_response_json("fuzz", 0.0, 1.0).is_err());
}

#[test]
fn compressor_curve_is_monotone_with_knee() {
    let v = parse(compressor_curve_json(-24.0, 4.0, 6.0).unwrap());
    let inp: Vec<f64> = v["input_db"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let out: Vec<f64> = v["output_db"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(inp.len(), out.len());
    assert!(out.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(out[0], -60.0);
    assert!((out.last().unwrap() - (-24.0 + 24.0 / 4.0)).abs() < 1e-12);
    assert!(compressor_curve_json(-24.0, 0.5, 6.0).is_err());
}

#[test]
fn defaults_list_both_effects() {
    let v = parse(effect_defaults_json());
    assert_eq!(v["fuzz"]["attack_ms"], 10.0);
    assert_eq!(v["compressor"]["ratio"], 4.0);
}
