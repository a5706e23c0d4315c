//! Frozen outputs of seeded forward passes. Set `COTRACK_BLESS=1` to rewrite
//! the fixtures after an intentional change.

use std::path::PathBuf;

use cotrack::memory::{extract_embedding, init_state, MemoryWeights};
use cotrack::sim::{emit_detections, generate, render_frame, DropoutLaw, Motion, SimConfig};
use cotrack::tensor::FeatureMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Compares `value` with the stored fixture, or stores it when blessing.
fn check_golden(name: &str, value: Value) {
    let path = fixture(name);
    if std::env::var_os("COTRACK_BLESS").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap() + "\n").unwrap();
        return;
    }
    let stored: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(stored, value, "{name} differs from its fixture");
}

fn seeded_memory_case() -> (MemoryWeights, FeatureMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let w = MemoryWeights::random(16, &mut rng);
    let x = FeatureMap::from_fn(16, 8, 8, |_, _, _| rng.random_range(-1.0..1.0));
    (w, x)
}

#[test]
fn init_state_matches_fixture() {
    let (w, x) = seeded_memory_case();
    let state = init_state(&x, &w).unwrap().into_state();
    check_golden("golden_init_state.json", json!({ "shape": [16, 8, 8], "data": state.data() }));
}

#[test]
fn extract_embedding_shares_the_init_state_fixture() {
    let (w, x) = seeded_memory_case();
    let stored: Value = serde_json::from_str(&std::fs::read_to_string(fixture("golden_init_state.json")).unwrap()).unwrap();
    let e = extract_embedding(&x, &w).unwrap();
    assert_eq!(stored["data"], json!(e.data()));
}

#[test]
fn render_with_noise_matches_fixture() {
    let cfg = SimConfig {
        world_width: 64,
        world_height: 64,
        frames: 2,
        objects: 1,
        object_width: 32,
        object_height: 32,
        motion: Motion::Parallel,
        noise_sigma: 0.1,
        ..SimConfig::default()
    };
    let s = generate(&cfg, 42).unwrap();
    let f = render_frame(&s, 1, 42).unwrap();
    let (c, h, w) = f.map.shape();
    check_golden("golden_render.json", json!({ "shape": [c, h, w], "data": f.map.data() }));
}

#[test]
fn default_detection_count_matches_fixture() {
    let s = generate(&SimConfig::default(), 42).unwrap();
    let per_frame: Vec<usize> = s.detections.iter().map(Vec::len).collect();
    let total: usize = per_frame.iter().sum();
    check_golden("golden_detections.json", json!({ "seed": 42, "total": total, "per_frame": per_frame }));
    assert!(total <= s.frames * s.objects.len());
    let never = emit_detections(&s, &DropoutLaw::Never, 1.0, 42).unwrap();
    assert_eq!(never.iter().map(Vec::len).sum::<usize>(), s.frames * s.objects.len());
}
