//! Shipped prompt pairs against a hand-written golden file.

use lookfeel_core::prompts::{render, PromptRegistry, TemplateId};

const GOLDEN: &str = include_str!("fixtures/golden/prompt_pairs.txt");

fn rendered_registry() -> String {
    let mut out = String::new();
    for e in PromptRegistry::builtin().entries() {
        let p = e.pair().unwrap();
        out.push_str(&format!("{} | {} | {}\n", e.attribute, p.positive_text, p.negative_text));
    }
    out
}

fn golden_rows() -> String {
    GOLDEN
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| format!("{l}\n"))
        .collect()
}

#[test]
fn shipped_pairs_byte_match_golden_file() {
    assert_eq!(rendered_registry(), golden_rows());
}

#[test]
fn every_shipped_pair_uses_the_short_template() {
    assert!(PromptRegistry::builtin().entries().iter().all(|e| e.template == TemplateId::T1));
}

#[test]
fn reference_renderings() {
    assert_eq!(render(TemplateId::T1, "Good").unwrap(), "Good photo.");
    assert_eq!(render(TemplateId::T1, "High contrast").unwrap(), "High contrast photo.");
    assert_eq!(render(TemplateId::T1, "Happy").unwrap(), "Happy photo.");
}
