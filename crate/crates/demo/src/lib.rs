//! Browser bindings. Each export takes plain arguments and returns a JSON
//! string; the page renders it. The same functions run natively in tests.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};
use vfl_core::config::RunConfig;
use vfl_core::he::keygen;
use vfl_core::netsim::{expected_round_wait, simulate_round_waits, LinkModel};
use wasm_bindgen::prelude::*;

/// Largest key the page will generate; bigger keys stall the tab.
pub const MAX_DEMO_KEY_BITS: usize = 1024;
/// Largest dataset a demo run accepts.
pub const MAX_DEMO_ROWS: usize = 2000;

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    let hex: String = bytes.iter().take(n).map(|b| format!("{b:02x}")).collect();
    format!("{hex}...")
}

/// Encrypts `x` and `y`, adds the ciphertexts, scales the first by `s`, and
/// decrypts both results.
pub fn homomorphic(x: f64, y: f64, s: f64, key_bits: usize, seed: u64) -> Result<Value, String> {
    if key_bits > MAX_DEMO_KEY_BITS {
        return Err(format!("key_bits above {MAX_DEMO_KEY_BITS} is too slow for the page"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let kp = keygen(key_bits, &mut rng).map_err(|e| e.to_string())?;
    let pk = &kp.public_key;
    let ex = pk.encrypt(x, &mut rng).map_err(|e| e.to_string())?;
    let ey = pk.encrypt(y, &mut rng).map_err(|e| e.to_string())?;
    let sum = pk.add(&ex, &ey).map_err(|e| e.to_string())?;
    let scaled = pk.scalar_mul(&ex, s).map_err(|e| e.to_string())?;
    let dec = |c| kp.private_key.decrypt(c).map_err(|e: vfl_core::error::HeError| e.to_string());
    Ok(json!({
        "key_bits": key_bits,
        "ciphertext_bytes": pk.ciphertext_bytes(),
        "enc_x": hex_prefix(&pk.serialize(&ex), 16),
        "enc_y": hex_prefix(&pk.serialize(&ey), 16),
        "enc_sum": hex_prefix(&pk.serialize(&sum), 16),
        "sum": dec(&sum)?,
        "expected_sum": x + y,
        "scaled": dec(&scaled)?,
        "expected_scaled": s * x,
    }))
}

/// Mean guest wait per backup-worker count: simulated and exact, in units of
/// one fast transfer.
pub fn round_waits(hosts: u32, p: f64, rounds: u32, seed: u64) -> Result<Value, String> {
    if !(1..=16).contains(&hosts) || rounds == 0 || rounds > 100_000 {
        return Err("need 1..=16 hosts and 1..=100000 rounds".into());
    }
    let link = LinkModel {
        slowdown_prob: p,
        ..Default::default()
    };
    let bytes = 125_000;
    let fast = bytes as f64 * 8.0 / link.baseline_bandwidth;
    let slow = fast * link.bottleneck_divisor;
    let mut rows = Vec::new();
    let mut base = None;
    for beta in 0..hosts {
        let waits = simulate_round_waits(&link, seed, hosts, beta, bytes, rounds).map_err(|e| e.to_string())?;
        let simulated = waits.iter().sum::<f64>() / waits.len() as f64 / fast;
        let exact = expected_round_wait(hosts, beta, p, fast, slow) / fast;
        let b = *base.get_or_insert(exact);
        rows.push(json!({
            "beta": beta,
            "simulated": simulated,
            "exact": exact,
            "reduction_pct": 100.0 * (1.0 - exact / b),
        }));
    }
    Ok(json!({ "hosts": hosts, "p": p, "rounds": rounds, "rows": rows }))
}

/// Trains from a TOML config with synthetic data and returns the per-round
/// curve and the phase totals.
pub fn train(config_toml: &str) -> Result<Value, String> {
    let cfg = RunConfig::from_toml_str(config_toml).map_err(|e| e.to_string())?;
    if cfg.key_bits > MAX_DEMO_KEY_BITS {
        return Err(format!("key_bits above {MAX_DEMO_KEY_BITS} is too slow for the page"));
    }
    match &cfg.data.synth {
        Some(s) if s.m <= MAX_DEMO_ROWS => {}
        Some(_) => return Err(format!("use at most {MAX_DEMO_ROWS} rows")),
        None => return Err("the page only supports [data.synth]".into()),
    }
    let res = cfg.execute(Path::new(".")).map_err(|e| e.to_string())?;
    let rounds: Vec<Value> = res
        .metrics
        .iterations
        .iter()
        .map(|r| {
            json!({
                "iteration": r.iteration,
                "objective": r.objective,
                "auc": r.auc,
                "total_s": r.cumulative.total_s(),
                "compensated": r.compensated.len(),
            })
        })
        .collect();
    Ok(json!({
        "completed": res.completed,
        "rounds": rounds,
        "totals": res.metrics.totals,
        "gradient_enc_mul": res.metrics.gradient_enc_mul(),
        "warnings": res.metrics.warnings,
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = homomorphicDemo)]
pub fn homomorphic_js(x: f64, y: f64, s: f64, key_bits: u32, seed: u32) -> Result<String, JsValue> {
    to_js(homomorphic(x, y, s, key_bits as usize, seed as u64))
}

#[wasm_bindgen(js_name = roundWaits)]
pub fn round_waits_js(hosts: u32, p: f64, rounds: u32, seed: u32) -> Result<String, JsValue> {
    to_js(round_waits(hosts, p, rounds, seed as u64))
}

#[wasm_bindgen(js_name = trainRun)]
pub fn train_js(config_toml: &str) -> Result<String, JsValue> {
    to_js(train(config_toml))
}

#[wasm_bindgen(js_name = defaultConfig)]
pub fn default_config() -> String {
    DEMO_CONFIG.to_string()
}

/// Starting point shown in the page's editor.
pub const DEMO_CONFIG: &str = r#"label = "demo"
key_bits = 512
seed = 1
feature_counts = [4, 4, 4, 4]

[hyper]
max_iterations = 15
batch_size = 120
residual_rule = "logistic_taylor"
optimizer = "rmsprop"

[straggler]
backup_workers = 1

[network]
slowdown_prob = 0.5

[compression]
pca_ratio = [0.75]

[timing]
other_per_round_s = 0.0

[data.synth]
m = 120
rank = 6
"#;
