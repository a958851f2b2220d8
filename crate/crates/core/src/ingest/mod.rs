//! Reading and writing every external artifact.

mod csv_io;
mod raster_io;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use csv_io::{parse_labels, parse_predictions, write_labels, write_predictions, LABEL_COLUMNS, PREDICTION_COLUMNS};
pub use raster_io::{read_raster, read_raster_header, write_raster, RasterFormat, RasterHeader};
pub use synth::{synth_scene, ClassMix, SynthScene, SynthSpec, TargetPlacement, SPECKLE_CAP};

use crate::error::{Error, Result};
use crate::model::{AuxChannel, DetectionRecord, LabelRecord, MetricsReport, Raster, Scene, SceneGeometry};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Valid,
}

/// One scene's channel files. Keys of `channels` are `vv`, `vh` and
/// auxiliary names (aliases such as `wind_mass` are accepted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub channels: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shore_distance: Option<PathBuf>,
}

impl ManifestEntry {
    fn channel(&self, key: &str) -> Result<&Path> {
        self.channels
            .get(key)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Manifest(format!("scene {} has no `{key}` channel", self.scene_id)))
    }

    fn rebase(&mut self, dir: &Path) {
        for p in self.channels.values_mut() {
            *p = dir.join(&*p);
        }
        if let Some(p) = &mut self.shore_distance {
            *p = dir.join(&*p);
        }
    }

    fn paths(&self) -> impl Iterator<Item = &Path> {
        self.channels
            .values()
            .chain(self.shore_distance.iter())
            .map(PathBuf::as_path)
    }
}

/// The list of scenes in one dataset split plus its label file.
///
/// Relative paths in the JSON file are resolved against the manifest's
/// directory when loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub scenes: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        for entry in &mut manifest.scenes {
            entry.rebase(dir);
        }
        if let Some(labels) = &mut manifest.labels {
            *labels = dir.join(&*labels);
        }
        manifest.validate()?;
        Ok(manifest)
    }

    /// Unique scene ids, VV and VH present, known channel names and readable files.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for entry in &self.scenes {
            if !ids.insert(entry.scene_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate scene id `{}`", entry.scene_id)));
            }
            entry.channel("vv")?;
            entry.channel("vh")?;
            let mut aux = BTreeSet::new();
            for key in entry.channels.keys().filter(|k| !matches!(k.as_str(), "vv" | "vh")) {
                let channel: AuxChannel = key
                    .parse()
                    .map_err(|_| Error::Manifest(format!("scene {}: unknown channel `{key}`", entry.scene_id)))?;
                if !aux.insert(channel) {
                    return Err(Error::Manifest(format!(
                        "scene {}: channel `{key}` duplicates {channel}",
                        entry.scene_id
                    )));
                }
            }
            for p in entry.paths() {
                if !p.is_file() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file missing"),
                    ));
                }
            }
        }
        if let Some(labels) = &self.labels {
            if !labels.is_file() {
                return Err(Error::io(
                    labels,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "label file missing"),
                ));
            }
        }
        Ok(())
    }

    pub fn entry(&self, scene_id: &str) -> Option<&ManifestEntry> {
        self.scenes.iter().find(|e| e.scene_id == scene_id)
    }

    /// Write with paths made relative to the manifest's directory where possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let rel = |p: &Path| {
            p.strip_prefix(dir)
                .map(Path::to_path_buf)
                .unwrap_or_else(|_| p.to_path_buf())
        };
        let mut out = self.clone();
        for entry in &mut out.scenes {
            for p in entry.channels.values_mut() {
                *p = rel(p);
            }
            if let Some(p) = &mut entry.shore_distance {
                *p = rel(p);
            }
        }
        if let Some(p) = &mut out.labels {
            *p = rel(p);
        }
        write_json(&out, path)
    }
}

/// Load every channel of a scene. Missing auxiliaries are simply absent.
pub fn load_scene(entry: &ManifestEntry) -> Result<Scene> {
    let vv = read_raster(entry.channel("vv")?)?;
    let vh = read_raster(entry.channel("vh")?)?;
    let mut auxiliaries = BTreeMap::new();
    for (key, path) in &entry.channels {
        if key == "vv" || key == "vh" {
            continue;
        }
        let channel: AuxChannel = key.parse()?;
        auxiliaries.insert(channel, read_raster(path)?);
    }
    let shore_distance = entry.shore_distance.as_deref().map(read_raster).transpose()?;
    Scene::new(entry.scene_id.clone(), vv, vh, auxiliaries, shore_distance)
}

/// Geometry plus shore distance, everything the scorer needs from a scene.
#[derive(Debug, Clone)]
pub struct SceneContext {
    pub scene_id: String,
    pub geometry: SceneGeometry,
    pub shore_distance: Option<Raster>,
}

impl From<&Scene> for SceneContext {
    fn from(scene: &Scene) -> Self {
        SceneContext {
            scene_id: scene.scene_id.clone(),
            geometry: scene.geometry(),
            shore_distance: scene.shore_distance.clone(),
        }
    }
}

/// Like [`load_scene`] but reads only the VV header and the shore raster.
pub fn load_scene_context(entry: &ManifestEntry) -> Result<SceneContext> {
    let header = read_raster_header(entry.channel("vv")?)?;
    Ok(SceneContext {
        scene_id: entry.scene_id.clone(),
        geometry: SceneGeometry {
            width: header.width,
            height: header.height,
            pixel_spacing_m: header.pixel_spacing_m,
        },
        shore_distance: entry.shore_distance.as_deref().map(read_raster).transpose()?,
    })
}

/// Write all rasters of `scene` into `dir` as `<scene_id>_<channel>.<ext>`.
pub fn write_scene(scene: &Scene, dir: &Path, format: RasterFormat) -> Result<ManifestEntry> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path_for = |name: &str| dir.join(format!("{}_{name}.{}", scene.scene_id, format.extension()));
    let mut channels = BTreeMap::new();
    for (name, raster) in [("vv", &scene.vv), ("vh", &scene.vh)] {
        let p = path_for(name);
        write_raster(raster, &p)?;
        channels.insert(name.to_string(), p);
    }
    for (channel, raster) in &scene.auxiliaries {
        let p = path_for(channel.name());
        write_raster(raster, &p)?;
        channels.insert(channel.name().to_string(), p);
    }
    let shore_distance = match &scene.shore_distance {
        Some(r) => {
            let p = path_for("shore_distance");
            write_raster(r, &p)?;
            Some(p)
        }
        None => None,
    };
    Ok(ManifestEntry {
        scene_id: scene.scene_id.clone(),
        channels,
        shore_distance,
    })
}

pub fn read_labels_file(path: &Path) -> Result<Vec<LabelRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_labels(BufReader::new(file))
}

pub fn write_labels_file(labels: &[LabelRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_labels(labels, BufWriter::new(file))
}

pub fn read_predictions_file(path: &Path) -> Result<Vec<DetectionRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(BufReader::new(file))
}

pub fn write_predictions_file(predictions: &[DetectionRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(predictions, BufWriter::new(file))
}

/// Pretty-printed JSON with a trailing newline; key order follows field order.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    write_json(report, path)
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
