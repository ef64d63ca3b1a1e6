//! The `lookfeel` binary against a small synthetic model.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lookfeel_core::backbone::synthetic::SyntheticSpec;
use lookfeel_core::backbone::{PosEmbeddingMode, Variant};
use lookfeel_core::ImageBuffer;

struct Fixture {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let model = SyntheticSpec::tiny(Variant::ResidualAttnPool).build();
        let b = model.install(&dir.path().join("model"), PosEmbeddingMode::Removed).unwrap();
        let mut csv = String::from("image_path,mos,split\n");
        for i in 0..12 {
            let v = 0.1 + 0.07 * i as f32;
            let img = ImageBuffer::from_fn(40, 56, |y, x| [v, (x as f32 / 56.0) * v, (y as f32 / 40.0)]).unwrap();
            let name = format!("img{i:02}.png");
            img.save_png(dir.path().join(&name)).unwrap();
            let split = if i % 3 == 0 { "test" } else { "train" };
            csv.push_str(&format!("{name},{},{split}\n", 1.0 + i as f64 * 0.3));
        }
        std::fs::write(dir.path().join("set.csv"), csv).unwrap();
        let config = dir.path().join("lookfeel.toml");
        std::fs::write(
            &config,
            format!(
                "cache_dir = \"cache\"\nregistry = \"prompts.txt\"\nseed = 3\n\n[backbone]\nvariant = \"residual-attnpool\"\n\
                 pos_embedding_mode = \"removed\"\nnative_input_size = 224\ncheckpoint_path = {:?}\nvocab_path = {:?}\n",
                b.checkpoint_path, b.vocab_path
            ),
        )
        .unwrap();
        Self { dir, config }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lookfeel"))
            .current_dir(self.dir.path())
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn fails(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
        String::from_utf8(out.stderr).unwrap()
    }
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn score_commands() {
    let f = Fixture::new();
    let v = json(&f.ok(&["score", "img03.png", "--attribute", "brightness"]));
    let s = v["score"].as_f64().unwrap();
    assert!(s > 0.0 && s < 1.0);
    assert_eq!(v["scorer"]["positive"], "Bright photo.");
    let v = json(&f.ok(&["score", "img03.png", "--pair", "Good", "Bad", "--template", "T2"]));
    assert_eq!(v["scorer"]["negative"], "A photo of Bad.");
    let v = json(&f.ok(&["score-attrs", "img03.png", "--attributes", "quality,happy"]));
    assert_eq!(v.as_array().unwrap().len(), 2);
    let err = f.fails(&["score", "img03.png", "--attribute", "vividness"]);
    assert!(err.contains("vividness") && err.contains("brightness"), "{err}");
}

#[test]
fn eval_report_and_cache_cycle() {
    let f = Fixture::new();
    f.ok(&["eval-dataset", "--manifest", "set.csv", "--preset", "a", "--out", "r1.json"]);
    f.ok(&["eval-dataset", "--manifest", "set.csv", "--preset", "a", "--out", "r2.json", "--deterministic"]);
    assert_eq!(read(&f.path("r1.json")), read(&f.path("r2.json")));
    let r = json(&read(&f.path("r1.json")));
    assert_eq!(r["n"], 4);
    let csv = f.ok(&["report", "--in", "r1.json", "--format", "csv"]);
    assert!(csv.contains("path,score,mos") && csv.lines().count() == 2 + 4, "{csv}");

    // a different backbone mode has a different fingerprint
    let err = f.fails(&["eval-dataset", "--manifest", "set.csv", "--backbone-mode", "interpolated"]);
    assert!(err.contains("stale score cache") && err.contains("cache purge"), "{err}");
    f.ok(&["cache", "purge"]);
    f.ok(&["eval-dataset", "--manifest", "set.csv", "--backbone-mode", "interpolated", "--out", "r3.json"]);

    let mut tampered = json(&read(&f.path("r1.json")));
    tampered["srocc"] = serde_json::json!(0.123);
    std::fs::write(f.path("bad.json"), tampered.to_string()).unwrap();
    assert!(f.fails(&["report", "--in", "bad.json"]).contains("do not match"));
}

#[test]
fn sweep_tune_and_prompts() {
    let f = Fixture::new();
    f.ok(&["degrade-sweep", "--manifest", "set.csv", "--attribute", "brightness", "--count", "5", "--levels", "0.5,1,1.5", "--out", "sweep.json"]);
    let s = json(&read(&f.path("sweep.json")));
    assert_eq!(s["images"].as_array().unwrap().len(), 5);
    assert_eq!(s["per_level_scores"].as_array().unwrap().len(), 3);

    f.ok(&["tune-prompts", "--manifest", "set.csv", "--out", "ctx.lfcx", "--log", "log.jsonl", "--iterations", "4", "--batch-size", "4", "--log-every", "1"]);
    let log = read(&f.path("log.jsonl"));
    assert!(log.lines().count() >= 4);
    assert!(json(log.lines().next().unwrap())["loss"].is_number());
    let v = json(&f.ok(&["score", "img03.png", "--context", "ctx.lfcx"]));
    assert_eq!(v["scorer"]["kind"], "context");
    f.ok(&["eval-dataset", "--manifest", "set.csv", "--context", "ctx.lfcx", "--no-cache"]);

    f.ok(&["prompts", "add", "vividness", "Vivid", "Flat"]);
    assert!(f.ok(&["prompts", "list"]).contains("vividness | T1 | Vivid | Flat"));
    assert!(f.fails(&["prompts", "add", "quality", "Nice", "Awful"]).contains("--overwrite"));
}

#[test]
fn ablation_grid() {
    let f = Fixture::new();
    let csv = f.ok(&["ablate", "--manifests", "set.csv", "--axes", "templates=T1,T2", "--axes", "presets=a", "--axes", "modes=removed,vanilla"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "template,preset,backbone,set srocc,set plcc");
    assert_eq!(lines.len(), 1 + 4);
    // vanilla needs exact-size inputs; the eval path resizes and crops, so it succeeds too
    assert!(!csv.contains("error:"), "{csv}");
}
