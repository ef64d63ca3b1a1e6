//! Synthetic datasets shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lookfeel_core::backbone::MockEncoder;
use lookfeel_core::prompts::PromptRegistry;
use lookfeel_core::ImageBuffer;

/// Textured image whose mean brightness is close to `level`.
pub fn image_at(level: f32, h: usize, w: usize) -> ImageBuffer {
    ImageBuffer::from_clipped(h, w, {
        let mut v = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                let t = 0.02 * (((x * 7 + y * 3) % 5) as f32 - 2.0);
                v.extend([level + t, level, level - t]);
            }
        }
        v
    })
    .unwrap()
}

/// Writes `n` images with increasing brightness plus a manifest whose MOS is
/// an increasing function of brightness. Returns the manifest path.
pub fn brightness_dataset(dir: &Path, name: &str, n: usize, test_every: usize) -> PathBuf {
    let mut csv = String::from("image_path,mos,split\n");
    for i in 0..n {
        let level = 0.1 + 0.8 * i as f32 / (n.max(2) - 1) as f32;
        let file = format!("{name}_{i:03}.png");
        image_at(level, 32, 48).save_png(dir.join(&file)).unwrap();
        let split = if test_every > 0 && i % test_every == 0 { "test" } else { "train" };
        csv.push_str(&format!("{file},{},{split}\n", 1.0 + 4.0 * (level as f64).powi(2)));
    }
    let path = dir.join(format!("{name}.csv"));
    std::fs::write(&path, csv).unwrap();
    path
}

/// Mock backbone whose image embedding encodes mean brightness, with every
/// builtin pair registered (positive prompt = brighter).
pub fn brightness_mock() -> MockEncoder {
    let pairs: Vec<_> = PromptRegistry::builtin()
        .entries()
        .iter()
        .map(|e| e.pair().unwrap())
        .collect();
    MockEncoder::probe("brightness-probe", &pairs, |img| img.mean())
}

/// Like [`brightness_mock`] but also knowing `extra` pairs.
pub fn brightness_mock_with(extra: &[lookfeel_core::prompts::PromptPair]) -> MockEncoder {
    let mut pairs: Vec<_> = PromptRegistry::builtin()
        .entries()
        .iter()
        .map(|e| e.pair().unwrap())
        .collect();
    pairs.extend(extra.iter().cloned());
    MockEncoder::probe("brightness-probe", &pairs, |img| img.mean())
}

/// `n` (dark, bright) image pairs with brightness votes; the first `wrong`
/// votes pick the darker image. `swap` lists every pair in B, A order.
pub fn study_fixture(dir: &Path, n: usize, wrong: usize, swap: bool) -> (PathBuf, PathBuf) {
    let mut pairs = String::from("pair_id,image_a,image_b\n");
    let mut votes = String::from("pair_id,attribute,choice\n");
    for i in 0..n {
        let lo = format!("s{i}_lo.png");
        let hi = format!("s{i}_hi.png");
        image_at(0.2 + 0.02 * i as f32, 16, 16).save_png(dir.join(&lo)).unwrap();
        image_at(0.6 + 0.02 * i as f32, 16, 16).save_png(dir.join(&hi)).unwrap();
        // humans say the brighter image is brighter, except in the first `wrong` pairs
        let truth = if i < wrong { &lo } else { &hi };
        let (a, b) = if swap { (&hi, &lo) } else { (&lo, &hi) };
        let choice = if a == truth { "A" } else { "B" };
        pairs.push_str(&format!("p{i},{a},{b}\n"));
        votes.push_str(&format!("p{i},brightness,{choice}\n"));
    }
    let p = dir.join(if swap { "pairs_swapped.csv" } else { "pairs.csv" });
    let v = dir.join(if swap { "votes_swapped.csv" } else { "votes.csv" });
    std::fs::write(&p, pairs).unwrap();
    std::fs::write(&v, votes).unwrap();
    (p, v)
}
