//! Template × adjective preset × backbone grid over several datasets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::cache::ScoreCache;
use super::eval::{eval_dataset, EvalOptions, PromptSource};
use super::manifest::{DatasetManifest, SplitFilter};
use crate::backbone::{BackboneConfig, Encoder};
use crate::error::Result;
use crate::exec::Execution;
use crate::prompts::{AdjectivePreset, TemplateId};

#[derive(Debug, Clone)]
pub struct AblationAxes {
    pub templates: Vec<TemplateId>,
    pub presets: Vec<AdjectivePreset>,
    pub backbones: Vec<BackboneConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub srocc: f64,
    pub plcc: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub dataset: String,
    pub template: TemplateId,
    pub preset: AdjectivePreset,
    /// `variant/mode`
    pub backbone: String,
    pub result: std::result::Result<CellMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub datasets: Vec<String>,
    pub cells: Vec<AblationCell>,
}

#[derive(Debug, Clone, Default)]
pub struct AblationOptions {
    pub split: SplitFilter,
    pub exec: Execution,
    /// Each backbone gets its own cache under this directory.
    pub cache_root: Option<PathBuf>,
}

pub fn backbone_label(config: &BackboneConfig) -> String {
    format!("{}/{}", config.variant, config.pos_embedding_mode)
}

/// Evaluates every combination. A failing cell (unloadable backbone,
/// unreadable image, degenerate scores) records its error and the run continues.
pub fn ablation_matrix<L>(
    datasets: &[DatasetManifest],
    axes: &AblationAxes,
    load: L,
    options: &AblationOptions,
) -> AblationTable
where
    L: Fn(&BackboneConfig) -> Result<Box<dyn Encoder>>,
{
    let mut cells = Vec::new();
    for backbone in &axes.backbones {
        let label = backbone_label(backbone);
        let loaded = load(backbone).and_then(|enc| {
            let cache = match &options.cache_root {
                Some(root) => Some(ScoreCache::open(
                    root.join(format!("{}-{}", backbone.variant, backbone.pos_embedding_mode)),
                    &enc.fingerprint(),
                )?),
                None => None,
            };
            Ok((enc, cache))
        });
        for &template in &axes.templates {
            for &preset in &axes.presets {
                for ds in datasets {
                    let result = match &loaded {
                        Err(e) => Err(e.to_string()),
                        Ok((enc, cache)) => preset
                            .pair(template)
                            .and_then(|pair| {
                                let opts = EvalOptions {
                                    split: options.split,
                                    exec: options.exec,
                                    cache: cache.as_ref(),
                                };
                                eval_dataset(ds, PromptSource::Pair(&pair), enc.as_ref(), &opts)
                            })
                            .map(|r| CellMetrics {
                                srocc: r.srocc,
                                plcc: r.plcc,
                                n: r.n,
                            })
                            .map_err(|e| e.to_string()),
                    };
                    if let Err(e) = &result {
                        log::warn!("ablation cell {template}/{preset}/{label}/{}: {e}", ds.name);
                    }
                    cells.push(AblationCell {
                        dataset: ds.name.clone(),
                        template,
                        preset,
                        backbone: label.clone(),
                        result,
                    });
                }
            }
        }
    }
    AblationTable {
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        cells,
    }
}

impl AblationTable {
    /// One row per (template, preset, backbone), two columns per dataset,
    /// metrics rounded to 3 decimals. Failed cells read `error: ...`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["template".to_string(), "preset".into(), "backbone".into()];
        for d in &self.datasets {
            header.push(format!("{d} srocc"));
            header.push(format!("{d} plcc"));
        }
        w.write_record(&header)?;
        let per_row = self.datasets.len().max(1);
        for row in self.cells.chunks(per_row) {
            let first = &row[0];
            let mut rec = vec![first.template.to_string(), first.preset.to_string(), first.backbone.clone()];
            for c in row {
                match &c.result {
                    Ok(m) => {
                        rec.push(format!("{:.3}", m.srocc));
                        rec.push(format!("{:.3}", m.plcc));
                    }
                    Err(e) => {
                        rec.push(format!("error: {e}"));
                        rec.push(String::new());
                    }
                }
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::error::Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
