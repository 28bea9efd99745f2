//! Run configuration: one JSON file, then command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use segxai::aggregate::{RoiGroup, SignMode};
use segxai::attribution::Method;
use segxai::container::read_container;
use segxai::metrics::MetricConfig;
use segxai::model::{Endpoint, Nonlinearity, RemoteModel, SegmentationModel, SyntheticModel, SyntheticModelSpec};
use segxai::outlier::ForestConfig;
use segxai::synthetic::smooth_volume;
use segxai::volume::{preprocess, Dims, Volume};
use segxai::RngSpec;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// A random synthetic model drawn from a seed.
    Synthetic {
        dims: [usize; 3],
        num_classes: usize,
        #[serde(default = "default_nonlinearity")]
        nonlinearity: Nonlinearity,
        #[serde(default)]
        seed: u64,
    },
    /// A full synthetic model spec stored as JSON.
    SpecFile(PathBuf),
    /// A model server endpoint (`host:port` or `stdio:<command>`).
    Remote(String),
}

fn default_nonlinearity() -> Nonlinearity {
    Nonlinearity::SmoothSaturating
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    /// Smooth random volumes on the model grid.
    Synthetic {
        count: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Volume containers; the file stem is the input id.
    Files(Vec<PathBuf>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiConfig {
    pub name: String,
    /// Mask container path; `{input}` is replaced by the input id.
    pub path: String,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelConfig>,
    pub inputs: Option<InputConfig>,
    /// Clip window applied to file inputs before attribution.
    #[serde(default)]
    pub preprocess: Option<[f64; 2]>,
    pub method: Option<Method>,
    /// Benchmark methods; the five-method suite when absent.
    pub methods: Option<Vec<Method>>,
    pub classes: Option<Vec<usize>>,
    pub class_names: Option<Vec<String>>,
    #[serde(default)]
    pub rois: Vec<RoiConfig>,
    #[serde(default)]
    pub metrics: MetricConfig,
    #[serde(default)]
    pub forest: Option<ForestConfig>,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dataset: Option<String>,
    pub sign_mode: Option<SignMode>,
    pub k: Option<usize>,
    #[serde(default)]
    pub groups: BTreeMap<String, RoiGroup>,
    /// Cube edge of the default benchmark suite.
    pub cube_edge: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| CliError::config("no output directory (--out)"))
    }
}

/// `vg`, `sg`, ... or a JSON method object.
pub fn parse_method(text: &str) -> CliResult<Method> {
    let json = if text.trim_start().starts_with('{') { text.to_owned() } else { format!("{{\"name\":{text:?}}}") };
    let method: Method = serde_json::from_str(&json).map_err(|e| CliError::config(format!("method {text:?}: {e}")))?;
    method.validate()?;
    Ok(method)
}

pub fn parse_classes(text: &str) -> CliResult<Vec<usize>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| CliError::config(format!("bad class id {s:?}"))))
        .collect()
}

pub fn parse_roi(text: &str) -> CliResult<RoiConfig> {
    let (name, path) = text.split_once('=').ok_or_else(|| CliError::config(format!("--roi expects name=path, got {text:?}")))?;
    Ok(RoiConfig { name: name.to_owned(), path: path.to_owned() })
}

pub fn build_model(config: &ModelConfig) -> CliResult<Arc<dyn SegmentationModel>> {
    Ok(match config {
        ModelConfig::Synthetic { dims, num_classes, nonlinearity, seed } => {
            let spec = SyntheticModelSpec::random(Dims(*dims), *num_classes, *nonlinearity, *seed);
            Arc::new(SyntheticModel::new(spec).map_err(|e| CliError::config(e.to_string()))?)
        }
        ModelConfig::SpecFile(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let spec: SyntheticModelSpec =
                serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            Arc::new(SyntheticModel::new(spec).map_err(|e| CliError::config(e.to_string()))?)
        }
        ModelConfig::Remote(endpoint) => {
            let endpoint: Endpoint = endpoint.parse().map_err(|e: segxai::model::ModelError| CliError::config(e.to_string()))?;
            Arc::new(RemoteModel::connect(&endpoint)?)
        }
    })
}

pub struct Input {
    pub id: String,
    pub x: Volume,
}

pub fn load_inputs(config: &RunConfig, dims: Dims) -> CliResult<Vec<Input>> {
    let inputs = config.inputs.as_ref().ok_or_else(|| CliError::config("config has no inputs"))?;
    let loaded = match inputs {
        InputConfig::Synthetic { count, seed } => {
            let root = RngSpec::new(*seed).derive_tag("inputs");
            (0..*count)
                .map(|i| Input { id: format!("case{i:03}"), x: smooth_volume(dims, root.derive(i as u64).seed) })
                .collect()
        }
        InputConfig::Files(paths) => {
            let mut out = Vec::new();
            for path in paths {
                let raw = read_container(path).map_err(|e| CliError::from(e).context(path.display()))?.into_volume()?;
                let x = match config.preprocess {
                    Some([lo, hi]) => preprocess(&raw, lo, hi)?,
                    None => raw,
                };
                let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                if out.iter().any(|i: &Input| i.id == id) {
                    return Err(CliError::config(format!("duplicate input id {id:?}")));
                }
                out.push(Input { id, x });
            }
            out
        }
    };
    if loaded.is_empty() {
        return Err(CliError::config("no inputs"));
    }
    for input in &loaded {
        if input.x.dims() != dims {
            return Err(CliError::data(format!(
                "input {} has dims {:?}, model expects {:?}",
                input.id,
                input.x.dims().0,
                dims.0
            )));
        }
    }
    Ok(loaded)
}

pub fn class_names(config: &RunConfig, num_classes: usize) -> CliResult<Vec<String>> {
    match &config.class_names {
        Some(names) if names.len() != num_classes => Err(CliError::config(format!(
            "{} class names for a {num_classes}-class model",
            names.len()
        ))),
        Some(names) => Ok(names.clone()),
        None => Ok((0..num_classes).map(|c| format!("class_{c}")).collect()),
    }
}
