use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biasprop::corpus::load_named;
use biasprop::experiments::{preset_group, ExperimentSpec, ModelCorpora};
use biasprop::synth::{generate_world, PlantedParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Summary,
}

pub const ALL_FORMATS: [ReportFormat; 3] =
    [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Summary];

/// A preset name (or preset group) or a full spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentRef {
    Preset(String),
    Spec(Box<ExperimentSpec>),
}

/// Run configuration file. Relative corpus paths resolve against the
/// directory holding the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model tag → corpus name → manifest path (with or without `.json`).
    #[serde(default)]
    pub models: BTreeMap<String, BTreeMap<String, PathBuf>>,
    #[serde(default)]
    pub experiments: Vec<ExperimentRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<ReportFormat>>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn load_models(&self) -> Result<Vec<ModelCorpora>> {
        if self.models.is_empty() {
            bail!("no models configured");
        }
        self.models
            .iter()
            .map(|(tag, corpora)| {
                let parts = corpora
                    .iter()
                    .map(|(name, path)| {
                        let path = self.resolve(path);
                        let corpus = load_named(&path).with_context(|| {
                            format!("model {tag}: corpus {name} at {}", path.display())
                        })?;
                        Ok((name.clone(), corpus))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ModelCorpora::from_named(tag.clone(), parts).with_context(|| format!("model {tag}"))
            })
            .collect()
    }

    pub fn specs(&self) -> Result<Vec<ExperimentSpec>> {
        let mut out = Vec::new();
        for e in &self.experiments {
            match e {
                ExperimentRef::Preset(name) => out.extend(preset_group(name)?),
                ExperimentRef::Spec(spec) => {
                    spec.validate()?;
                    out.push((**spec).clone());
                }
            }
        }
        Ok(out)
    }

    pub fn formats(&self) -> Vec<ReportFormat> {
        self.formats.clone().unwrap_or_else(|| ALL_FORMATS.to_vec())
    }
}

pub const SYNTH_MODEL_TAG: &str = "synthetic";

pub fn default_world_model(seed: u64) -> Result<ModelCorpora> {
    let world = generate_world(&PlantedParams {
        seed,
        ..Default::default()
    })?;
    Ok(world.model(SYNTH_MODEL_TAG))
}
