//! `lookfeel`: score images, evaluate datasets, sweep degradations and tune prompts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lookfeel_core::backbone::{load_backbone, Backbone, BackboneConfig, Encoder, PosEmbeddingMode, Variant};
use lookfeel_core::degrade::{run_sweep, DegradationSpec, SweepAttribute};
use lookfeel_core::exec::with_workers;
use lookfeel_core::harness::{
    self, ablation_matrix, eval_dataset, ingest_manifest_with, paired_benchmark_compare, rank_extremes,
    seeded_sample, tune_on_manifest, AblationAxes, AblationOptions, EvalOptions, EvalReport, HarnessConfig,
    IngestOptions, Preprocess, PreparedScorer, PromptSource, ScoreCache, SplitFilter,
};
use lookfeel_core::prompts::{AdjectivePreset, PromptPair, PromptRegistry, TemplateId};
use lookfeel_core::scoring::score_attributes;
use lookfeel_core::tuner::{export_context, import_context, LearnableContext};
use lookfeel_core::{Execution, ImageBuffer};

const DEFAULT_CONFIG: &str = "lookfeel.toml";

#[derive(Parser)]
#[command(name = "lookfeel", version, about = "No-reference image quality and feel scoring with antonym prompt pairs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Configuration file (default: ./lookfeel.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Converted checkpoint (.lfta); overrides the configured backbone.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Byte-pair merges file (.txt or .txt.gz).
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Positional-embedding handling: removed, vanilla or interpolated.
    #[arg(long, global = true)]
    backbone_mode: Option<PosEmbeddingMode>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    no_cache: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run sequentially.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Prompt registry file with custom pairs.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Score one image for one attribute.
    Score {
        image: PathBuf,
        #[arg(long, default_value = "quality")]
        attribute: String,
        /// Explicit positive and negative adjectives, rendered with --template.
        #[arg(long, num_args = 2, value_names = ["POS", "NEG"])]
        pair: Option<Vec<String>>,
        #[arg(long, default_value = "T1")]
        template: TemplateId,
        /// Tuned context file instead of a prompt pair.
        #[arg(long, conflicts_with = "pair")]
        context: Option<PathBuf>,
    },
    /// Score one image for several attributes.
    ScoreAttrs {
        image: PathBuf,
        /// Comma-separated attribute names (default: every registered attribute).
        #[arg(long, value_delimiter = ',')]
        attributes: Vec<String>,
    },
    /// Evaluate a prompt pair or tuned context on a manifest.
    EvalDataset {
        #[arg(long)]
        manifest: PathBuf,
        /// Quality adjective preset (a: good/bad, b: high/low quality, c: high/low definition).
        #[arg(long, conflicts_with_all = ["attribute", "context"])]
        preset: Option<AdjectivePreset>,
        #[arg(long, default_value = "T1")]
        template: TemplateId,
        #[arg(long, conflicts_with = "context")]
        attribute: Option<String>,
        #[arg(long)]
        context: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: SplitFilter,
        #[command(flatten)]
        prep: PrepArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print the k best and worst images.
        #[arg(long)]
        extremes: Option<usize>,
    },
    /// Degrade images over a level grid and score each level.
    DegradeSweep {
        #[arg(long, required_unless_present = "images")]
        manifest: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        images: Vec<PathBuf>,
        /// brightness, noisiness, colorfulness or sharpness.
        #[arg(long)]
        attribute: String,
        #[arg(long, value_delimiter = ',')]
        levels: Vec<f64>,
        /// Number of images drawn (seeded) from the input.
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        prep: PrepArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn prompt contexts against the manifest's training opinion scores.
    TunePrompts {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "quality")]
        attribute: String,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines training log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
        label_range: Option<Vec<f64>>,
        #[arg(long)]
        log_every: Option<usize>,
        #[command(flatten)]
        prep: PrepArgs,
    },
    /// Template x preset x backbone-mode grid over one or more manifests.
    Ablate {
        #[arg(long, value_delimiter = ',', required = true)]
        manifests: Vec<PathBuf>,
        /// Axis values as `templates=T1,T2`, `presets=a,b,c`, `modes=removed,vanilla`.
        #[arg(long)]
        axes: Vec<String>,
        /// Extra backbone configs (TOML files with a [backbone] section).
        #[arg(long, value_delimiter = ',')]
        backbones: Vec<PathBuf>,
        #[arg(long, default_value = "test")]
        split: SplitFilter,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write full cell results as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Validate a saved report and render it.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Compare score distributions of paired low- and high-quality sets.
    Compare {
        #[arg(long)]
        low: PathBuf,
        #[arg(long)]
        high: PathBuf,
        #[arg(long)]
        attribute: String,
    },
    /// Accuracy against human majority votes on image pairs.
    Study {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        votes: PathBuf,
    },
    /// Inspect or extend the prompt registry.
    Prompts {
        #[command(subcommand)]
        action: PromptsAction,
    },
    /// Manage the score cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Args, Clone, Copy)]
struct PrepArgs {
    /// Resize so the shorter side is 512 before encoding (SPAQ protocol).
    #[arg(long)]
    spaq: bool,
}

impl PrepArgs {
    fn preprocess(self) -> Preprocess {
        if self.spaq {
            Preprocess::spaq()
        } else {
            Preprocess::default()
        }
    }
}

#[derive(Subcommand)]
enum PromptsAction {
    List,
    /// Register a pair in the registry file (--registry or the configured one).
    Add {
        attribute: String,
        positive: String,
        negative: String,
        #[arg(long, default_value = "T1")]
        template: TemplateId,
        #[arg(long)]
        overwrite: bool,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    Purge {
        /// Cache directory (default: the configured one).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

struct Ctx {
    cfg: HarnessConfig,
    global: Global,
}

impl Ctx {
    fn exec(&self) -> Execution {
        if self.global.deterministic {
            Execution::Sequential
        } else {
            self.cfg.execution()
        }
    }

    fn registry(&self) -> Result<PromptRegistry> {
        Ok(self.cfg.registry()?)
    }

    fn backbone_config(&self) -> Result<BackboneConfig> {
        let g = &self.global;
        let mut b = match (&g.checkpoint, &self.cfg.backbone) {
            (Some(ckpt), _) => {
                let vocab = g
                    .vocab
                    .clone()
                    .or_else(|| self.cfg.backbone.as_ref().map(|b| b.vocab_path.clone()))
                    .context("--checkpoint needs --vocab")?;
                BackboneConfig::new(
                    g.variant.unwrap_or(Variant::ResidualAttnPool),
                    PosEmbeddingMode::Removed,
                    ckpt,
                    vocab,
                )
            }
            (None, Some(b)) => b.clone(),
            (None, None) => bail!("no backbone configured: pass --checkpoint/--vocab or a config with a [backbone] section"),
        };
        if let Some(v) = &g.vocab {
            b.vocab_path = v.clone();
        }
        if let Some(v) = g.variant {
            b.variant = v;
        }
        if let Some(m) = g.backbone_mode {
            b.pos_embedding_mode = m;
        }
        Ok(b)
    }

    fn backbone(&self) -> Result<Backbone> {
        let cfg = self.backbone_config()?;
        let bb = load_backbone(&cfg).with_context(|| format!("loading backbone {}", cfg.checkpoint_path.display()))?;
        if bb.degraded_accuracy() {
            log::warn!("patch-transformer without positional embeddings: expect degraded accuracy");
        }
        Ok(bb)
    }

    fn cache(&self, encoder: &dyn Encoder) -> Result<Option<ScoreCache>> {
        if self.global.no_cache {
            return Ok(None);
        }
        match self.global.cache_dir.as_ref().or(self.cfg.cache_dir.as_ref()) {
            Some(dir) => Ok(Some(ScoreCache::open(dir, &encoder.fingerprint())?)),
            None => Ok(None),
        }
    }

    fn seed(&self, explicit: Option<u64>) -> u64 {
        explicit.unwrap_or(self.cfg.seed)
    }
}

fn load_config(g: &Global) -> Result<HarnessConfig> {
    let mut cfg = match &g.config {
        Some(p) => HarnessConfig::load(p)?,
        None if Path::new(DEFAULT_CONFIG).is_file() => HarnessConfig::load(DEFAULT_CONFIG)?,
        None => HarnessConfig::default(),
    };
    if let Some(r) = &g.registry {
        cfg.registry = Some(r.clone());
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn emit(value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn pair_for(registry: &PromptRegistry, attribute: &str, explicit: Option<&[String]>, template: TemplateId) -> Result<PromptPair> {
    Ok(match explicit {
        Some([pos, neg]) => PromptPair::new(attribute, pos, neg, template)?,
        Some(_) => bail!("--pair takes exactly two adjectives"),
        None => registry.get_pair(attribute)?,
    })
}

fn embed_file(encoder: &dyn Encoder, path: &Path, pre: Preprocess) -> Result<lookfeel_core::Embedding> {
    let img = pre.apply(ImageBuffer::load(path)?)?;
    Ok(encoder.embed_image(&encoder.input_policy().prepare(&img)?)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let ctx = Ctx { cfg, global: cli.global };
    match cli.command {
        Command::Score {
            image,
            attribute,
            pair,
            template,
            context,
        } => {
            let bb = ctx.backbone()?;
            let emb = embed_file(&bb, &image, Preprocess::default())?;
            let ctx_file;
            let pair_v;
            let source = match &context {
                Some(p) => {
                    ctx_file = import_context(p)?;
                    PromptSource::Context(&ctx_file)
                }
                None => {
                    pair_v = pair_for(&ctx.registry()?, &attribute, pair.as_deref(), template)?;
                    PromptSource::Pair(&pair_v)
                }
            };
            let scorer = PreparedScorer::new(source, &bb)?;
            let score = scorer.score_embedding(&emb)?;
            emit(
                &serde_json::json!({
                    "image": image,
                    "scorer": scorer.id(),
                    "score": score,
                }),
                None,
            )
        }
        Command::ScoreAttrs { image, attributes } => {
            let bb = ctx.backbone()?;
            let reg = ctx.registry()?;
            let names = if attributes.is_empty() { reg.names() } else { attributes };
            let pairs = names.iter().map(|a| reg.get_pair(a)).collect::<lookfeel_core::Result<Vec<_>>>()?;
            let emb = embed_file(&bb, &image, Preprocess::default())?;
            let enc: &dyn Encoder = &bb;
            emit(&score_attributes(&emb, &pairs, enc)?, None)
        }
        Command::EvalDataset {
            manifest,
            preset,
            template,
            attribute,
            context,
            split,
            prep,
            out,
            extremes,
        } => {
            let m = ingest_manifest_with(
                &manifest,
                &IngestOptions {
                    preprocess: prep.preprocess(),
                    ..Default::default()
                },
            )?;
            let bb = ctx.backbone()?;
            let cache = ctx.cache(&bb)?;
            let opts = EvalOptions {
                split,
                exec: ctx.exec(),
                cache: cache.as_ref(),
            };
            let tuned: Option<LearnableContext> = context.as_deref().map(import_context).transpose()?;
            let pair = match (&tuned, preset, &attribute) {
                (Some(_), _, _) => None,
                (None, Some(p), _) => Some(p.pair(template)?),
                (None, None, Some(a)) => Some(ctx.registry()?.get_pair(a)?),
                (None, None, None) => Some(AdjectivePreset::A.pair(template)?),
            };
            let source = match (&tuned, &pair) {
                (Some(c), _) => PromptSource::Context(c),
                (None, Some(p)) => PromptSource::Pair(p),
                (None, None) => unreachable!("one prompt source is always chosen"),
            };
            let report = eval_dataset(&m, source, &bb, &opts)?;
            eprintln!(
                "{}: n={} srocc={:.3} plcc={:.3} ({})",
                report.dataset,
                report.n,
                report.srocc,
                report.plcc,
                report.scorer.label()
            );
            if let Some(c) = &cache {
                let (hits, misses) = c.stats();
                log::info!("score cache: {hits} hits, {misses} misses");
            }
            if let Some(k) = extremes {
                eprintln!("{}", serde_json::to_string_pretty(&rank_extremes(&report, k)?)?);
            }
            match out {
                Some(p) => report.save(&p).with_context(|| format!("writing {}", p.display())),
                None => emit(&report, None),
            }
        }
        Command::DegradeSweep {
            manifest,
            images,
            attribute,
            levels,
            count,
            seed,
            prep,
            out,
        } => {
            let pre = prep.preprocess();
            let paths: Vec<(String, PathBuf)> = match &manifest {
                Some(p) => {
                    let m = ingest_manifest_with(p, &IngestOptions::default())?;
                    m.records.into_iter().map(|r| (r.image_path, r.resolved)).collect()
                }
                None => images.iter().map(|p| (p.display().to_string(), p.clone())).collect(),
            };
            let seed = ctx.seed(seed);
            let chosen: Vec<&(String, PathBuf)> = seeded_sample(paths.len(), count, seed).into_iter().map(|i| &paths[i]).collect();
            let imgs = ctx.exec().try_map(&chosen, |_, (_, p)| -> lookfeel_core::Result<ImageBuffer> {
                pre.apply(ImageBuffer::load(p)?)
            })?;
            let attr = SweepAttribute::parse(&attribute)?;
            let spec = if levels.is_empty() {
                DegradationSpec::with_default_levels(attr, seed)
            } else {
                DegradationSpec::new(attr, levels, seed)?
            };
            let bb = ctx.backbone()?;
            let scorer = |img: &ImageBuffer, pair: &PromptPair| -> lookfeel_core::Result<f64> {
                let s = PreparedScorer::new(PromptSource::Pair(pair), &bb)?;
                s.score_embedding(&bb.embed_image(&bb.input_policy().prepare(img)?)?)
            };
            let mut report = run_sweep(&imgs, &spec, &ctx.registry()?, &scorer, ctx.exec())?;
            report.images = chosen.iter().map(|(n, _)| n.clone()).collect();
            if let Some(c) = report.level_correlation {
                eprintln!("{}: level correlation {c:.3} over {} images", attr.name(), imgs.len());
            }
            emit(&report, out.as_deref())
        }
        Command::TunePrompts {
            manifest,
            attribute,
            out,
            log,
            iterations,
            learning_rate,
            batch_size,
            seed,
            label_range,
            log_every,
            prep,
        } => {
            let mut tc = ctx.cfg.tune.clone();
            if let Some(v) = iterations {
                tc.iterations = v;
            }
            if let Some(v) = learning_rate {
                tc.learning_rate = v;
            }
            if let Some(v) = batch_size {
                tc.batch_size = v;
            }
            if let Some(v) = seed {
                tc.seed = v;
            }
            if let Some(v) = log_every {
                tc.log_every = v;
            }
            if let Some(r) = label_range {
                tc.label_range = Some([r[0], r[1]]);
            }
            let m = ingest_manifest_with(
                &manifest,
                &IngestOptions {
                    preprocess: prep.preprocess(),
                    ..Default::default()
                },
            )?;
            let pair = ctx.registry()?.get_pair(&attribute)?;
            let bb = ctx.backbone()?;
            let mut sink = match &log {
                Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
                None => None,
            };
            let outcome = tune_on_manifest(&m, &pair, &bb, &tc, ctx.exec(), |rec| {
                log::info!("iteration {} loss {:.6} val_srocc {:?}", rec.iteration, rec.loss, rec.val_srocc);
                if let Some(w) = sink.as_mut() {
                    let line = serde_json::to_string(rec)?;
                    writeln!(w, "{line}").map_err(|e| lookfeel_core::Error::Input(format!("writing training log: {e}")))?;
                }
                Ok(())
            })?;
            if let Some(mut w) = sink {
                w.flush()?;
            }
            export_context(&outcome.context, &out)?;
            eprintln!(
                "wrote {} (validation srocc {:?})",
                out.display(),
                outcome.context.meta.validation_srocc
            );
            Ok(())
        }
        Command::Ablate {
            manifests,
            axes,
            backbones,
            split,
            out,
            json,
        } => {
            let mut templates = vec![TemplateId::T1, TemplateId::T2, TemplateId::T3];
            let mut presets = AdjectivePreset::ALL.to_vec();
            let mut modes: Vec<PosEmbeddingMode> = PosEmbeddingMode::ALL.to_vec();
            for a in &axes {
                let (k, v) = a.split_once('=').with_context(|| format!("axis `{a}` is not key=values"))?;
                let vals = v.split(',').map(str::trim).filter(|s| !s.is_empty());
                match k.trim() {
                    "templates" => templates = vals.map(str::parse).collect::<lookfeel_core::Result<_>>()?,
                    "presets" => presets = vals.map(str::parse).collect::<lookfeel_core::Result<_>>()?,
                    "modes" => modes = vals.map(str::parse).collect::<lookfeel_core::Result<_>>()?,
                    other => bail!("unknown axis `{other}` (expected templates, presets or modes)"),
                }
            }
            let mut bases = vec![ctx.backbone_config()?];
            for p in &backbones {
                bases.push(HarnessConfig::load(p)?.backbone()?.clone());
            }
            let mut configs = Vec::new();
            for b in &bases {
                for &m in &modes {
                    configs.push(b.with_mode(m));
                }
            }
            let datasets = manifests
                .iter()
                .map(|p| ingest_manifest_with(p, &IngestOptions::default()))
                .collect::<lookfeel_core::Result<Vec<_>>>()?;
            let cache_root = if ctx.global.no_cache {
                None
            } else {
                ctx.global.cache_dir.clone().or_else(|| ctx.cfg.cache_dir.clone())
            };
            let table = ablation_matrix(
                &datasets,
                &AblationAxes {
                    templates,
                    presets,
                    backbones: configs,
                },
                |c| Ok(Box::new(load_backbone(c)?) as Box<dyn Encoder>),
                &AblationOptions {
                    split,
                    exec: ctx.exec(),
                    cache_root,
                },
            );
            if let Some(p) = json {
                emit(&table, Some(&p))?;
            }
            let csv = table.to_csv()?;
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Report { input, format } => {
            let report = EvalReport::load(&input)?;
            match format {
                Format::Json => emit(&report, None),
                Format::Csv => {
                    print!("{}", report.to_csv());
                    Ok(())
                }
            }
        }
        Command::Compare { low, high, attribute } => {
            let lo = ingest_manifest_with(&low, &IngestOptions::default())?;
            let hi = ingest_manifest_with(&high, &IngestOptions::default())?;
            let bb = ctx.backbone()?;
            let cache = ctx.cache(&bb)?;
            let opts = EvalOptions {
                split: SplitFilter::Everything,
                exec: ctx.exec(),
                cache: cache.as_ref(),
            };
            emit(&paired_benchmark_compare(&lo, &hi, &attribute, &ctx.registry()?, &bb, &opts)?, None)
        }
        Command::Study { pairs, votes } => {
            let bb = ctx.backbone()?;
            emit(&harness::abstract_pair_study(&pairs, &votes, &ctx.registry()?, &bb, ctx.exec())?, None)
        }
        Command::Prompts { action } => match action {
            PromptsAction::List => {
                print!("{}", ctx.registry()?.to_text());
                Ok(())
            }
            PromptsAction::Add {
                attribute,
                positive,
                negative,
                template,
                overwrite,
            } => {
                let path = ctx
                    .cfg
                    .registry
                    .clone()
                    .context("no registry file: pass --registry FILE or set `registry` in the config")?;
                let mut reg = if path.exists() {
                    PromptRegistry::load(&path)?
                } else {
                    PromptRegistry::empty()
                };
                if !overwrite && PromptRegistry::builtin().get_pair(&attribute).is_ok() {
                    bail!("`{attribute}` is a builtin attribute; pass --overwrite to shadow it");
                }
                reg.register_pair(&attribute, &positive, &negative, template, overwrite)?;
                reg.save(&path)?;
                let p = reg.get_pair(&attribute)?;
                eprintln!("registered {attribute}: {:?} / {:?}", p.positive_text, p.negative_text);
                Ok(())
            }
        },
        Command::Cache { action } => match action {
            CacheAction::Purge { dir } => {
                let dir = dir
                    .or_else(|| ctx.global.cache_dir.clone())
                    .or_else(|| ctx.cfg.cache_dir.clone())
                    .context("no cache directory: pass --dir")?;
                if harness::purge(&dir)? {
                    eprintln!("removed {}", dir.display());
                } else {
                    eprintln!("{} does not exist", dir.display());
                }
                Ok(())
            }
        },
    }
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let workers = match (&cli.global.workers, &cli.global.config) {
        (Some(w), _) => *w,
        _ => load_config(&cli.global).map(|c| c.workers).unwrap_or(0),
    };
    if let Err(e) = with_workers(workers, || run(cli)) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
