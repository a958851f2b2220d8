//! Point labels → box annotations on patches.
//!
//! Labels carry only a centroid, so each kept label gets a square box of
//! `bbox_size` pixels centred on it, expressed as a half-open interval
//! `[center - size/2, center + size/2)` and clipped to the patch.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::write_json;
use crate::model::{class_label_from_flags, ClassLabel, Confidence, LabelRecord, PatchRef};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateConfig {
    pub min_confidence: Confidence,
    pub bbox_size: usize,
    pub drop_ambiguous: bool,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            min_confidence: Confidence::High,
            bbox_size: 20,
            drop_ambiguous: true,
        }
    }
}

impl AnnotateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bbox_size < 2 || !self.bbox_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "bbox_size must be even and at least 2, got {}",
                self.bbox_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    LowConfidence,
    AmbiguousLabel,
    InDiscardedPatch,
    OutsideTiles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeptLabel {
    pub label: LabelRecord,
    pub class: ClassLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedLabel {
    pub label: LabelRecord,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<KeptLabel>,
    pub dropped: Vec<DroppedLabel>,
}

/// Class used for ambiguous flags when they are not dropped: a vessel with
/// unknown fishing status is non-fishing, an object of unknown type is a
/// non-vessel.
fn fallback_class(is_vessel: Option<bool>) -> ClassLabel {
    if is_vessel == Some(true) {
        ClassLabel::NonFishing
    } else {
        ClassLabel::NonVessel
    }
}

/// Split labels into those usable for training and those dropped, keeping
/// input order within each side. Low confidence is checked first.
pub fn filter_labels(labels: &[LabelRecord], config: &AnnotateConfig) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for label in labels {
        if label.confidence < config.min_confidence {
            out.dropped.push(DroppedLabel {
                label: label.clone(),
                reason: DropReason::LowConfidence,
            });
            continue;
        }
        match class_label_from_flags(label.is_vessel, label.is_fishing) {
            Ok(class) => out.kept.push(KeptLabel {
                label: label.clone(),
                class,
            }),
            Err(_) if config.drop_ambiguous => out.dropped.push(DroppedLabel {
                label: label.clone(),
                reason: DropReason::AmbiguousLabel,
            }),
            Err(_) => out.kept.push(KeptLabel {
                label: label.clone(),
                class: fallback_class(label.is_vessel),
            }),
        }
    }
    out
}

/// Half-open pixel box in patch coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.row_max - self.row_min
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    /// Midpoint of the box; exact for unclipped boxes of even size.
    pub fn center(&self) -> (usize, usize) {
        ((self.row_min + self.row_max) / 2, (self.col_min + self.col_max) / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("center ({row}, {col}) lies outside a {patch_size}-pixel patch")]
pub struct CenterOutsidePatch {
    pub row: usize,
    pub col: usize,
    pub patch_size: usize,
}

pub fn synthesize_bbox(
    center_row: usize,
    center_col: usize,
    bbox_size: usize,
    patch_size: usize,
) -> Result<BBox, CenterOutsidePatch> {
    if center_row >= patch_size || center_col >= patch_size {
        return Err(CenterOutsidePatch {
            row: center_row,
            col: center_col,
            patch_size,
        });
    }
    let half = bbox_size / 2;
    Ok(BBox {
        row_min: center_row.saturating_sub(half),
        col_min: center_col.saturating_sub(half),
        row_max: (center_row + half).min(patch_size),
        col_max: (center_col + half).min(patch_size),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Annotation {
    pub patch: PatchRef,
    pub bbox: BBox,
    pub class: ClassLabel,
    pub detect_id: String,
}

/// A kept label that produced no annotation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DropLogEntry {
    pub detect_id: String,
    pub scene_id: String,
    pub row: usize,
    pub col: usize,
    pub reason: DropReason,
}

impl From<&DroppedLabel> for DropLogEntry {
    fn from(d: &DroppedLabel) -> Self {
        DropLogEntry {
            detect_id: d.label.detect_id.clone(),
            scene_id: d.label.scene_id.clone(),
            row: d.label.row,
            col: d.label.col,
            reason: d.reason,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationOutcome {
    pub annotations: Vec<Annotation>,
    pub unplaced: Vec<DropLogEntry>,
}

/// Offsets `k * stride` whose window `[k*stride, k*stride + size)` contains `x`.
fn containing_offsets(x: usize, size: usize, stride: usize) -> impl Iterator<Item = usize> {
    let first = (x + 1).saturating_sub(size).div_ceil(stride);
    let last = x / stride;
    (first..=last).map(move |k| k * stride)
}

/// Place kept labels on patches.
///
/// A label goes to every emitted patch whose window contains its centroid.
/// Labels whose only containing windows were discarded, or that no window
/// covers, are reported in `unplaced`. `stride` is the tiling stride that
/// produced `patches` and `discarded`.
pub fn labels_to_annotations(
    kept: &[KeptLabel],
    patches: &[PatchRef],
    discarded: &[PatchRef],
    stride: usize,
    config: &AnnotateConfig,
) -> Result<AnnotationOutcome> {
    config.validate()?;
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let emitted: HashMap<(&str, usize, usize), &PatchRef> = patches
        .iter()
        .map(|p| ((p.scene_id.as_str(), p.row_offset, p.col_offset), p))
        .collect();
    let dropped: HashSet<(&str, usize, usize)> = discarded
        .iter()
        .map(|p| (p.scene_id.as_str(), p.row_offset, p.col_offset))
        .collect();
    let size = patches.iter().chain(discarded).map(|p| p.size).next().unwrap_or(0);

    let mut out = AnnotationOutcome::default();
    for k in kept {
        let l = &k.label;
        let mut placed = false;
        let mut in_discarded = false;
        if size > 0 {
            for ro in containing_offsets(l.row, size, stride) {
                for co in containing_offsets(l.col, size, stride) {
                    let key = (l.scene_id.as_str(), ro, co);
                    if let Some(patch) = emitted.get(&key) {
                        let bbox = synthesize_bbox(l.row - ro, l.col - co, config.bbox_size, patch.size)
                            .expect("centroid inside the containing window");
                        out.annotations.push(Annotation {
                            patch: (*patch).clone(),
                            bbox,
                            class: k.class,
                            detect_id: l.detect_id.clone(),
                        });
                        placed = true;
                    } else if dropped.contains(&key) {
                        in_discarded = true;
                    }
                }
            }
        }
        if !placed {
            out.unplaced.push(DropLogEntry {
                detect_id: l.detect_id.clone(),
                scene_id: l.scene_id.clone(),
                row: l.row,
                col: l.col,
                reason: if in_discarded {
                    DropReason::InDiscardedPatch
                } else {
                    DropReason::OutsideTiles
                },
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
    scene_id: String,
    row_offset: usize,
    col_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u8,
    /// `[x, y, width, height]` with x along columns.
    bbox: [usize; 4],
    area: usize,
    iscrowd: u8,
    detect_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CocoCategory {
    id: u8,
    name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CocoDataset {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

fn build_coco(annotations: &[Annotation], patch_index: &[PatchRef]) -> Result<CocoDataset> {
    let mut refs: Vec<&PatchRef> = patch_index.iter().collect();
    refs.sort();
    refs.dedup();
    let ids: BTreeMap<&PatchRef, u64> = refs.iter().enumerate().map(|(i, p)| (*p, i as u64 + 1)).collect();
    let images = refs
        .iter()
        .map(|p| CocoImage {
            id: ids[p],
            file_name: p.file_name(),
            width: p.size,
            height: p.size,
            scene_id: p.scene_id.clone(),
            row_offset: p.row_offset,
            col_offset: p.col_offset,
        })
        .collect();
    let mut sorted: Vec<&Annotation> = annotations.iter().collect();
    sorted.sort_by(|a, b| (&a.patch, &a.detect_id, a.bbox, a.class).cmp(&(&b.patch, &b.detect_id, b.bbox, b.class)));
    let mut coco_annotations = Vec::with_capacity(sorted.len());
    for (i, a) in sorted.into_iter().enumerate() {
        let image_id = *ids.get(&a.patch).ok_or_else(|| {
            Error::Config(format!(
                "annotation {} refers to a patch missing from the index",
                a.detect_id
            ))
        })?;
        coco_annotations.push(CocoAnnotation {
            id: i as u64 + 1,
            image_id,
            category_id: a.class.code(),
            bbox: [a.bbox.col_min, a.bbox.row_min, a.bbox.width(), a.bbox.height()],
            area: a.bbox.area(),
            iscrowd: 0,
            detect_id: a.detect_id.clone(),
        });
    }
    Ok(CocoDataset {
        images,
        annotations: coco_annotations,
        categories: ClassLabel::ALL
            .into_iter()
            .map(|c| CocoCategory {
                id: c.code(),
                name: c.name().into(),
            })
            .collect(),
    })
}

/// Write a COCO-style `annotations.json`. Image ids follow the sorted
/// patch index, annotation ids the sorted annotations, both from 1.
pub fn export_annotations(annotations: &[Annotation], patch_index: &[PatchRef], path: &Path) -> Result<()> {
    write_json(&build_coco(annotations, patch_index)?, path)
}

/// Read back a file written by [`export_annotations`].
pub fn import_annotations(path: &Path) -> Result<(Vec<Annotation>, Vec<PatchRef>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let coco: CocoDataset = serde_json::from_str(&text)?;
    let images: HashMap<u64, PatchRef> = coco
        .images
        .iter()
        .map(|img| {
            (
                img.id,
                PatchRef {
                    scene_id: img.scene_id.clone(),
                    row_offset: img.row_offset,
                    col_offset: img.col_offset,
                    size: img.width,
                },
            )
        })
        .collect();
    let mut annotations = Vec::with_capacity(coco.annotations.len());
    for a in &coco.annotations {
        let patch = images
            .get(&a.image_id)
            .ok_or_else(|| Error::Config(format!("annotation {} has unknown image {}", a.id, a.image_id)))?
            .clone();
        let class = ClassLabel::from_code(a.category_id)
            .ok_or_else(|| Error::Config(format!("annotation {} has unknown category {}", a.id, a.category_id)))?;
        let [x, y, w, h] = a.bbox;
        annotations.push(Annotation {
            patch,
            bbox: BBox {
                row_min: y,
                col_min: x,
                row_max: y + h,
                col_max: x + w,
            },
            class,
            detect_id: a.detect_id.clone(),
        });
    }
    let mut patches: Vec<PatchRef> = coco.images.iter().map(|img| images[&img.id].clone()).collect();
    patches.sort();
    Ok((annotations, patches))
}
