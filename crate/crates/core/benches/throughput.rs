//! Sequential vs data-parallel throughput on the hot batch paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lookfeel_core::backbone::synthetic::SyntheticSpec;
use lookfeel_core::backbone::{load_backbone, Encoder, MockEncoder, PosEmbeddingMode, Variant};
use lookfeel_core::degrade::{run_sweep, DegradationSpec, SweepAttribute};
use lookfeel_core::prompts::{PromptPair, PromptRegistry};
use lookfeel_core::scoring::score_image;
use lookfeel_core::{Execution, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn images(n: usize, side: usize) -> Vec<ImageBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..n)
        .map(|_| {
            let data = (0..side * side * 3).map(|_| rng.random_range(0.0f32..1.0)).collect();
            ImageBuffer::new(side, side, data).unwrap()
        })
        .collect()
}

fn embed_batch(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticSpec::tiny(Variant::ResidualAttnPool)
        .build()
        .install(dir.path(), PosEmbeddingMode::Removed)
        .unwrap();
    let bb = load_backbone(&cfg).unwrap();
    let pair = PromptRegistry::builtin().get_pair("quality").unwrap();
    let (t1, t2) = bb.pair_embeddings(&pair).unwrap();
    let batch = images(32, 64);
    let mut g = c.benchmark_group("score_batch");
    for exec in MODES {
        g.bench_function(BenchmarkId::from_parameter(format!("{exec:?}")), |b| {
            b.iter(|| {
                exec.try_map(&batch, |_, img| {
                    score_image(&bb.embed_image(img)?, &pair, (&t1, &t2)).map(|s| s.score)
                })
                .unwrap()
            })
        });
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let registry = PromptRegistry::builtin();
    let pairs: Vec<PromptPair> = registry.entries().iter().map(|e| e.pair().unwrap()).collect();
    let enc = MockEncoder::probe("mean", &pairs, |img| img.mean());
    let scorer = |img: &ImageBuffer, pair: &PromptPair| -> lookfeel_core::Result<f64> {
        let (t1, t2) = enc.pair_embeddings(pair)?;
        Ok(score_image(&enc.embed_image(img)?, pair, (&t1, &t2))?.score)
    };
    let batch = images(16, 96);
    let spec = DegradationSpec::with_default_levels(SweepAttribute::Sharpness, 0);
    let mut g = c.benchmark_group("degrade_sweep");
    g.sample_size(20);
    for exec in MODES {
        g.bench_function(BenchmarkId::from_parameter(format!("{exec:?}")), |b| {
            b.iter(|| run_sweep(&batch, &spec, &registry, &scorer, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, embed_batch, sweep);
criterion_main!(benches);
