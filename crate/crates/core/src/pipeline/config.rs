//! Run configuration, loaded from TOML or JSON.
//!
//! ```toml
//! seed = 7
//! workers = 4
//! filter_fraction = 0.1
//! sources = ["studio/dataset.json", "outdoor/dataset.json"]
//! guidance_schema = "coco-body"
//!
//! [pairing]
//! kind = "cross-only"
//!
//! [generator]
//! kind = "mock"
//! pose_drift_sigma = 40.0
//! drift_correlation = 0.9
//! failure_prob = 0.5
//!
//! [detector]
//! kind = "synthetic"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{io_err, parse_err, PipelineError, Result};
use crate::fusion::{FusionConfig, PairingPolicy};
use crate::skeleton::{h36m_to_coco_body, JointSchema, SchemaMapping, COCO_BODY, H36M_17};
use crate::synth::{
    CorruptionKnob, DetectorAdapter, DetectorNoiseConfig, GeneratorAdapter, MockGenerator,
    PixelDetector, SubprocessDetector, SubprocessGenerator, SyntheticDetector,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorConfig {
    Mock {
        #[serde(flatten)]
        knob: CorruptionKnob,
    },
    Subprocess {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::Mock {
            knob: CorruptionKnob::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DetectorConfig {
    Synthetic {
        #[serde(default)]
        noise: DetectorNoiseConfig,
    },
    Pixel,
    Subprocess {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::Synthetic {
            noise: DetectorNoiseConfig::default(),
        }
    }
}

fn default_fraction() -> f64 {
    0.1
}

fn default_guidance() -> String {
    COCO_BODY.to_string()
}

fn default_pairing() -> PairingPolicy {
    PairingPolicy::CrossOnly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Source dataset descriptors.
    pub sources: Vec<PathBuf>,
    #[serde(default = "default_pairing")]
    pub pairing: PairingPolicy,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default = "default_fraction")]
    pub filter_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    /// Built-in name or schema file used for guidance and detection.
    #[serde(default = "default_guidance")]
    pub guidance_schema: String,
    /// Optional mapping file from the motion schema to the guidance schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<PathBuf>,
    /// Directory relative paths resolve against; set by `load`.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn new(sources: Vec<PathBuf>) -> Self {
        PipelineConfig {
            sources,
            pairing: default_pairing(),
            fusion: FusionConfig::default(),
            generator: GeneratorConfig::default(),
            detector: DetectorConfig::default(),
            filter_fraction: default_fraction(),
            seed: 0,
            workers: 0,
            guidance_schema: default_guidance(),
            mapping: None,
            base_dir: PathBuf::from("."),
        }
    }

    /// Parses `.toml` files as TOML and anything else as JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| parse_err(path, e))?
        } else {
            serde_json::from_str(&text).map_err(|e| parse_err(path, e))?
        };
        cfg.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(PipelineError::Config("no sources listed".into()));
        }
        if !(self.filter_fraction > 0.0 && self.filter_fraction <= 1.0) {
            return Err(PipelineError::Config(format!(
                "filter_fraction {} outside (0, 1]",
                self.filter_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.fusion.max_outside_fraction) {
            return Err(PipelineError::Config("max_outside_fraction outside [0, 1]".into()));
        }
        match &self.generator {
            GeneratorConfig::Mock { knob } => knob.validate()?,
            GeneratorConfig::Subprocess { .. } => {}
        }
        if let DetectorConfig::Synthetic { noise } = &self.detector {
            noise.validate()?;
        }
        Ok(())
    }

    pub fn guidance_schema(&self) -> Result<Arc<JointSchema>> {
        let name = if JointSchema::builtin(&self.guidance_schema).is_some() {
            self.guidance_schema.clone()
        } else {
            self.resolve(Path::new(&self.guidance_schema)).display().to_string()
        };
        Ok(Arc::new(JointSchema::resolve(&name)?))
    }

    /// Motion-to-guidance mapping: the configured file, the built-in
    /// h36m-to-coco mapping, or a by-name match.
    pub fn mapping(&self, motion: Arc<JointSchema>, guidance: Arc<JointSchema>) -> Result<SchemaMapping> {
        if let Some(p) = &self.mapping {
            return Ok(SchemaMapping::from_file(&self.resolve(p), motion, guidance)?);
        }
        if motion.name() == guidance.name() {
            return Ok(SchemaMapping::identity(motion));
        }
        if motion.name() == H36M_17 && guidance.name() == COCO_BODY {
            return Ok(h36m_to_coco_body(motion, guidance)?);
        }
        Ok(SchemaMapping::by_name(motion, guidance)?)
    }

    pub fn generator(&self, schema: Arc<JointSchema>) -> Result<Box<dyn GeneratorAdapter>> {
        Ok(match &self.generator {
            GeneratorConfig::Mock { knob } => Box::new(MockGenerator::new(schema, *knob)?),
            GeneratorConfig::Subprocess { program, args } => Box::new(SubprocessGenerator::new(
                self.resolve(program),
                args.clone(),
                schema,
            )),
        })
    }

    pub fn detector(&self, schema: Arc<JointSchema>) -> Result<Box<dyn DetectorAdapter>> {
        Ok(match &self.detector {
            DetectorConfig::Synthetic { noise } => {
                Box::new(SyntheticDetector::new(schema, noise.clone())?)
            }
            DetectorConfig::Pixel => Box::new(PixelDetector::new(schema)),
            DetectorConfig::Subprocess { program, args } => Box::new(SubprocessDetector::new(
                self.resolve(program),
                args.clone(),
                schema,
            )),
        })
    }

    /// Hash of every setting that influences per-sample outputs.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            fusion: &'a FusionConfig,
            generator: &'a GeneratorConfig,
            detector: &'a DetectorConfig,
            seed: u64,
            guidance_schema: &'a str,
            mapping: &'a Option<PathBuf>,
        }
        let key = Key {
            fusion: &self.fusion,
            generator: &self.generator,
            detector: &self.detector,
            seed: self.seed,
            guidance_schema: &self.guidance_schema,
            mapping: &self.mapping,
        };
        super::sha256_hex(serde_json::to_string(&key).expect("config serializes").as_bytes())
    }
}
