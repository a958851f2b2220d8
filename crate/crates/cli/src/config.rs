use std::fs;
use std::path::{Path, PathBuf};

use fadsar_core::annotate::AnnotateConfig;
use fadsar_core::model::Confidence;
use fadsar_core::preprocess::{EdgePolicy, FusionMethod, TilingPolicy};
use fadsar_core::refdetect::RefDetectConfig;
use fadsar_core::score::ScoreConfig;
use fadsar_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a subcommand may need. Loaded from JSON, then overridden by
/// command line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tiling: TilingPolicy,
    pub fusion: FusionMethod,
    pub annotate: AnnotateConfig,
    pub refdetect: RefDetectConfig,
    pub score: ScoreConfig,
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tiling: TilingPolicy::default(),
            fusion: FusionMethod::default(),
            annotate: AnnotateConfig::default(),
            refdetect: RefDetectConfig::default(),
            score: ScoreConfig::default(),
            workers: 1,
            out: PathBuf::from("out"),
        }
    }
}

/// Flag values that override the config file when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub patch_size: Option<usize>,
    pub stride: Option<usize>,
    pub edge_policy: Option<EdgePolicy>,
    pub fusion: Option<FusionMethod>,
    pub bbox_size: Option<usize>,
    pub min_confidence: Option<Confidence>,
    pub match_radius_m: Option<f64>,
    pub shore_km: Option<f64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |e: serde_json::Error| Error::Config(format!("{}: {e}", path.display()));
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
        let mut config: PipelineConfig = serde_json::from_value(raw.clone()).map_err(bad)?;
        let tiling = &raw["tiling"];
        if tiling.get("patch_size").is_some() && tiling.get("stride").is_none() {
            config.tiling.stride = config.tiling.patch_size;
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(size) = o.patch_size {
            // stride follows the patch size unless it is set explicitly
            if self.tiling.stride == self.tiling.patch_size {
                self.tiling.stride = size;
            }
            self.tiling.patch_size = size;
        }
        if let Some(stride) = o.stride {
            self.tiling.stride = stride;
        }
        if let Some(edge) = o.edge_policy {
            self.tiling.edge_policy = edge;
        }
        if let Some(f) = &o.fusion {
            self.fusion = f.clone();
        }
        if let Some(b) = o.bbox_size {
            self.annotate.bbox_size = b;
        }
        if let Some(c) = o.min_confidence {
            self.annotate.min_confidence = c;
            self.score.min_confidence_gt = c;
        }
        if let Some(r) = o.match_radius_m {
            self.score.match_radius_m = r;
        }
        if let Some(km) = o.shore_km {
            self.score.shore_threshold_km = km;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tiling.validate()?;
        self.annotate.validate()?;
        self.refdetect.validate()?;
        self.score.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// File (if any) < flags, then validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }
}
