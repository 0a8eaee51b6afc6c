//! Browser bindings: architecture inspection, reference-effect step
//! responses and the compressor's static curve. Every call returns JSON.

use serde_json::{json, Value};
use tfilm_fx::effects::{
    compressor_gain_trace, db_to_gain, fuzz, fuzz_envelope_trace, time_to_63, CompressorParams, EffectParams,
    FuzzParams,
};
use tfilm_fx::nn::ModelSpec;
use wasm_bindgen::prelude::*;

pub const SAMPLE_RATE: f64 = 44_100.0;

/// Points kept when a trace is sent to the page.
const PLOT_POINTS: usize = 800;

/// Parameter count, receptive field and layer layout of a preset,
/// optionally with a different width or TFiLM block size (0 keeps the
/// preset value).
pub fn model_info_json(preset: &str, channels: usize, tfilm_block: usize) -> Result<String, String> {
    let mut spec = ModelSpec::preset(preset).map_err(|e| e.to_string())?;
    if channels > 0 {
        spec = spec.with_channels(channels);
    }
    if tfilm_block > 0 {
        spec = spec.with_tfilm(tfilm_block);
    }
    spec.validate().map_err(|e| e.to_string())?;
    let rf = spec.receptive_field().ok();
    let info = json!({
        "spec": spec,
        "params": spec.param_count(),
        "receptive_field": rf,
        "receptive_field_ms": rf.map(|r| r as f64 * 1000.0 / SAMPLE_RATE),
        "tfilm_state": spec.has_tfilm(),
        "dilations": spec.dilations(),
    });
    Ok(info.to_string())
}

/// DC-step response of a reference effect: a constant input held for
/// twenty attack times, then silence for four release times. Returns the control trace (fuzz envelope or compressor
/// gain), the audio output for fuzz, and measured 63% times.
pub fn step_response_json(effect: &str, attack_ms: f64, release_ms: f64) -> Result<String, String> {
    let params = EffectParams::with_times(effect, attack_ms, release_ms).map_err(|e| e.to_string())?;
    let lead = 100;
    let loud = (SAMPLE_RATE * attack_ms * 20.0 / 1000.0) as usize + lead;
    let quiet = (SAMPLE_RATE * release_ms * 4.0 / 1000.0) as usize;
    let level = match params {
        EffectParams::Fuzz(_) => 0.5,
        EffectParams::Compressor(_) => 1.0,
    };
    let mut x = vec![0.0f32; lead];
    x.resize(lead + loud, level);
    x.resize(lead + loud + quiet, 0.0);

    let (trace, loud_target, quiet_target, output) = match &params {
        EffectParams::Fuzz(p) => (
            fuzz_envelope_trace(&x, p, SAMPLE_RATE).map_err(|e| e.to_string())?,
            level as f64,
            0.0,
            Some(fuzz(&x, p, SAMPLE_RATE).map_err(|e| e.to_string())?),
        ),
        EffectParams::Compressor(p) => (
            compressor_gain_trace(&x, p, SAMPLE_RATE).map_err(|e| e.to_string())?,
            db_to_gain(p.static_curve_db(0.0)),
            1.0,
            None,
        ),
    };
    let attack = time_to_63(&trace, lead, loud_target, SAMPLE_RATE);
    let release = time_to_63(&trace, lead + loud, quiet_target, SAMPLE_RATE);
    let step = (trace.len() / PLOT_POINTS).max(1);
    let info = json!({
        "effect": params,
        "sample_rate": SAMPLE_RATE,
        "decimation": step,
        "step_on": lead,
        "step_off": lead + loud,
        "control": trace.iter().step_by(step).collect::<Vec<_>>(),
        "output": output.map(|o| o.iter().step_by(step).copied().collect::<Vec<f32>>()),
        "measured_attack_ms": attack,
        "measured_release_ms": release,
    });
    Ok(info.to_string())
}

/// Output level against input level over [-60, 0] dB.
pub fn compressor_curve_json(threshold_db: f64, ratio: f64, knee_db: f64) -> Result<String, String> {
    let p = CompressorParams { threshold_db, ratio, knee_db, ..CompressorParams::default() };
    p.validate().map_err(|e| e.to_string())?;
    let input: Vec<f64> = (0..=240).map(|i| -60.0 + i as f64 * 0.25).collect();
    let output: Vec<f64> = input.iter().map(|&l| p.static_curve_db(l)).collect();
    Ok(json!({ "input_db": input, "output_db": output }).to_string())
}

/// Default settings of both reference effects.
pub fn effect_defaults_json() -> String {
    let v: Value = json!({ "fuzz": FuzzParams::default(), "compressor": CompressorParams::default() });
    v.to_string()
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn model_info(preset: &str, channels: usize, tfilm_block: usize) -> Result<String, JsValue> {
    js(model_info_json(preset, channels, tfilm_block))
}

#[wasm_bindgen]
pub fn step_response(effect: &str, attack_ms: f64, release_ms: f64) -> Result<String, JsValue> {
    js(step_response_json(effect, attack_ms, release_ms))
}

#[wasm_bindgen]
pub fn compressor_curve(threshold_db: f64, ratio: f64, knee_db: f64) -> Result<String, JsValue> {
    js(compressor_curve_json(threshold_db, ratio, knee_db))
}

#[wasm_bindgen]
pub fn effect_defaults() -> String {
    effect_defaults_json()
}
