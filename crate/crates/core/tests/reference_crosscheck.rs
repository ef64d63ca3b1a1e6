//! Encoders and tokenizer against outputs of the reference implementation.
//!
//! The fixtures under `tests/fixtures/reference` hold two tiny randomly
//! initialised models built with open_clip, converted with
//! `scripts/convert_checkpoint.py`, plus their float64 outputs. Regenerate
//! with `python scripts/make_reference_fixtures.py`.

use std::path::{Path, PathBuf};

use lookfeel_core::backbone::{load_backbone, BackboneConfig, Encoder, PosEmbeddingMode, Tokenizer, Variant};
use lookfeel_core::scoring::cosine_similarity;
use lookfeel_core::{Embedding, ImageBuffer};
use serde_json::Value;

const TOL: f64 = 1e-8;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reference")
}

fn reference() -> Value {
    let text = std::fs::read_to_string(fixtures().join("reference.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn config(stem: &str, variant: Variant, mode: PosEmbeddingMode) -> BackboneConfig {
    BackboneConfig::new(
        variant,
        mode,
        fixtures().join(format!("{stem}.lfta")),
        fixtures().join("vocab.txt.gz"),
    )
}

fn assert_close(ours: &[f64], theirs: &[f64], what: &str) {
    assert_eq!(ours.len(), theirs.len(), "{what}: dimension");
    let scale = theirs.iter().map(|v| v.abs()).fold(1.0, f64::max);
    for (i, (a, b)) in ours.iter().zip(theirs).enumerate() {
        assert!((a - b).abs() <= TOL * scale, "{what}[{i}]: {a} vs {b}");
    }
}

#[test]
fn tokenizer_matches_reference() {
    let r = reference();
    let tok = Tokenizer::load(fixtures().join("vocab.txt.gz")).unwrap();
    assert_eq!(tok.vocab_size() as u64, r["vocab_size"].as_u64().unwrap());
    for p in r["prompts"].as_array().unwrap() {
        let text = p["text"].as_str().unwrap();
        let expected: Vec<u32> = p["content_ids"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap() as u32)
            .collect();
        assert_eq!(tok.encode(text), expected, "{text:?}");
    }
}

fn check_model(stem: &str, variant: Variant) {
    let r = reference();
    let m = &r["models"][stem];
    let prompts: Vec<&str> = r["prompts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["text"].as_str().unwrap())
        .collect();

    let removed = load_backbone(&config(stem, variant, PosEmbeddingMode::Removed)).unwrap();
    let vanilla = load_backbone(&config(stem, variant, PosEmbeddingMode::Vanilla)).unwrap();
    let interp = load_backbone(&config(stem, variant, PosEmbeddingMode::Interpolated)).unwrap();

    for (text, expected) in prompts.iter().zip(m["text"].as_array().unwrap()) {
        let ours = removed.embed_text(text).unwrap();
        assert_close(ours.values(), &floats(expected), &format!("{stem} text {text:?}"));
    }

    let good = removed.embed_text("Good photo.").unwrap();
    let good_ref = Embedding::new(floats(&m["text"][0])).unwrap();
    for entry in m["images"].as_array().unwrap() {
        let file = entry["file"].as_str().unwrap();
        let img = ImageBuffer::load(fixtures().join(file)).unwrap();
        let ours = removed.embed_image(&img).unwrap();
        let theirs = floats(&entry["removed"]);
        assert_close(ours.values(), &theirs, &format!("{stem} removed {file}"));
        let theirs = Embedding::new(theirs).unwrap();
        let c_ours = cosine_similarity(&ours, &good).unwrap();
        let c_ref = cosine_similarity(&theirs, &good_ref).unwrap();
        assert!((c_ours - c_ref).abs() < 1e-4, "{stem} cosine {c_ours} vs {c_ref}");

        if let Some(v) = entry.get("vanilla") {
            let ours = vanilla.embed_image(&img).unwrap();
            assert_close(ours.values(), &floats(v), &format!("{stem} vanilla {file}"));
            // at native resolution interpolation is the identity
            let i = interp.embed_image(&img).unwrap();
            assert_close(i.values(), &floats(v), &format!("{stem} interpolated {file}"));
        } else {
            assert!(vanilla.embed_image(&img).is_err());
        }
    }
}

#[test]
fn residual_encoder_matches_reference() {
    check_model("rn", Variant::ResidualAttnPool);
}

#[test]
fn patch_encoder_matches_reference() {
    check_model("vit", Variant::PatchTransformer);
}
