//! Run configuration file. Command-line flags take precedence over every
//! value here.

use std::path::{Path, PathBuf};

use dcdm::camera::TemplateSpec;
use dcdm::noise::WarpMode;
use dcdm::prompt::LlmEndpointConfig;
use dcdm::tensor::GridShape;
use dcdm::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub warp_mode: Option<WarpMode>,
    pub template: Option<TemplateSource>,
    pub shape: Option<ShapeConfig>,
    pub llm: Option<LlmEndpointConfig>,
    pub attention: Option<AttentionConfig>,
    pub train: Option<TrainSection>,
}

/// A template given as a file path or inline.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TemplateSource {
    Path(PathBuf),
    Inline(TemplateSpec),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeConfig {
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "C")]
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    #[serde(rename = "S")]
    pub summary_tokens: Option<usize>,
    pub tokens_per_frame: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: Option<usize>,
    pub lr: Option<f64>,
}

impl RunConfig {
    /// Parses a config file; relative template paths resolve against the
    /// file's directory and must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(TemplateSource::Path(p)) = &mut cfg.template {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(llm) = &cfg.llm {
            llm.validate()?;
        }
        if let Some(s) = cfg.shape {
            s.to_shape()?;
        }
        Ok(cfg)
    }

    fn check_files(&self) -> Result<()> {
        if let Some(TemplateSource::Path(p)) = &self.template {
            if !p.is_file() {
                return Err(Error::Config(format!("template file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

impl ShapeConfig {
    pub fn to_shape(self) -> Result<GridShape> {
        GridShape::new(self.frames, self.height, self.width, self.channels)
    }
}

impl TemplateSource {
    pub fn spec(&self) -> Result<TemplateSpec> {
        match self {
            TemplateSource::Inline(spec) => Ok(spec.clone()),
            TemplateSource::Path(p) => read_template(p),
        }
    }
}

pub fn read_template(path: &Path) -> Result<TemplateSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TemplateSpec::from_json(&text)
}
