//! Whole-dataset drivers shared by the command line tool and the tests.
//!
//! Scenes are loaded one at a time; parallelism happens inside a scene on
//! the current rayon pool. Every output list is sorted before it is
//! returned, so results do not depend on the worker count.

use std::fs;
use std::path::Path;

use crate::annotate::{filter_labels, labels_to_annotations, AnnotateConfig, Annotation, DropLogEntry};
use crate::error::{Error, Result};
use crate::ingest::{load_scene, DatasetManifest};
use crate::model::{DetectionRecord, LabelRecord, PatchRef, Scene};
use crate::preprocess::{for_each_patch, write_patch, DiscardEntry, FusionMethod, PatchIndexEntry, TilingPolicy};
use crate::refdetect::{aggregate_detections, detect_patch, RefDetectConfig};

/// Run `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TileOutput {
    pub index: Vec<PatchIndexEntry>,
    pub discards: Vec<DiscardEntry>,
}

/// Tile every scene of the manifest and write patch files into `patch_dir`.
pub fn tile_dataset(
    manifest: &DatasetManifest,
    policy: &TilingPolicy,
    method: &FusionMethod,
    patch_dir: &Path,
) -> Result<TileOutput> {
    fs::create_dir_all(patch_dir).map_err(|e| Error::io(patch_dir, e))?;
    let mut out = TileOutput::default();
    for entry in &manifest.scenes {
        let scene = load_scene(entry)?;
        let before = (out.index.len(), out.discards.len());
        for_each_patch(&scene, policy, method, |outcome| {
            match outcome {
                Ok(patch) => out.index.push(write_patch(&patch, patch_dir)?),
                Err(discard) => out.discards.push(discard),
            }
            Ok(())
        })?;
        tracing::info!(
            scene = %entry.scene_id,
            patches = out.index.len() - before.0,
            discarded = out.discards.len() - before.1,
            "tiled"
        );
    }
    out.index
        .sort_by(|a, b| (&a.scene_id, a.row_offset, a.col_offset).cmp(&(&b.scene_id, b.row_offset, b.col_offset)));
    out.discards.sort();
    Ok(out)
}

/// Emitted and discarded windows of a scene, without keeping pixel data.
pub fn scene_windows(
    scene: &Scene,
    policy: &TilingPolicy,
    method: &FusionMethod,
) -> Result<(Vec<PatchRef>, Vec<DiscardEntry>)> {
    let mut emitted = Vec::new();
    let mut discarded = Vec::new();
    for_each_patch(scene, policy, method, |outcome| {
        match outcome {
            Ok(patch) => emitted.push(patch.patch_ref()),
            Err(d) => discarded.push(d),
        }
        Ok(())
    })?;
    Ok((emitted, discarded))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetOutput {
    pub annotations: Vec<Annotation>,
    pub patches: Vec<PatchRef>,
    pub drop_log: Vec<DropLogEntry>,
    pub discards: Vec<DiscardEntry>,
}

/// Filter labels and place the survivors on the emitted patches.
///
/// Labels for scenes that are not in the manifest are logged as
/// `outside_tiles`.
pub fn build_dataset(
    manifest: &DatasetManifest,
    labels: &[LabelRecord],
    policy: &TilingPolicy,
    method: &FusionMethod,
    config: &AnnotateConfig,
) -> Result<DatasetOutput> {
    config.validate()?;
    policy.validate()?;
    for label in labels {
        label.check_flags()?;
    }
    let filtered = filter_labels(labels, config);
    let mut out = DatasetOutput {
        drop_log: filtered.dropped.iter().map(DropLogEntry::from).collect(),
        ..DatasetOutput::default()
    };
    for entry in &manifest.scenes {
        let scene = load_scene(entry)?;
        let geometry = scene.geometry();
        for k in filtered.kept.iter().filter(|k| k.label.scene_id == entry.scene_id) {
            k.label.check_in_scene(&geometry)?;
        }
        let (emitted, discarded) = scene_windows(&scene, policy, method)?;
        out.patches.extend(emitted);
        out.discards.extend(discarded);
    }
    let discarded_refs: Vec<PatchRef> = out.discards.iter().map(DiscardEntry::patch_ref).collect();
    let placed = labels_to_annotations(&filtered.kept, &out.patches, &discarded_refs, policy.stride, config)?;
    out.annotations = placed.annotations;
    out.annotations.sort();
    out.drop_log.extend(placed.unplaced);
    out.drop_log.sort();
    out.patches.sort();
    out.discards.sort();
    Ok(out)
}

/// Run the reference detector over one scene.
pub fn detect_scene(
    scene: &Scene,
    policy: &TilingPolicy,
    method: &FusionMethod,
    config: &RefDetectConfig,
) -> Result<Vec<DetectionRecord>> {
    config.validate()?;
    let mut per_patch = Vec::new();
    for_each_patch(scene, policy, method, |outcome| {
        if let Ok(patch) = outcome {
            let blobs = detect_patch(&patch, config);
            per_patch.push((patch.patch_ref(), blobs));
        }
        Ok(())
    })?;
    Ok(aggregate_detections(
        &scene.scene_id,
        &per_patch,
        &scene.geometry(),
        config,
    ))
}

/// Reference detections for every scene, sorted by scene then position.
pub fn detect_dataset(
    manifest: &DatasetManifest,
    policy: &TilingPolicy,
    method: &FusionMethod,
    config: &RefDetectConfig,
) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for entry in &manifest.scenes {
        let scene = load_scene(entry)?;
        let found = detect_scene(&scene, policy, method, config)?;
        tracing::info!(scene = %entry.scene_id, detections = found.len(), "detected");
        out.extend(found);
    }
    out.sort_by(|a, b| {
        a.scene_id
            .cmp(&b.scene_id)
            .then(a.row.total_cmp(&b.row))
            .then(a.col.total_cmp(&b.col))
    });
    Ok(out)
}
