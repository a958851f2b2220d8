//! Threshold + connected-component reference detector.
//!
//! Only the VV channel (channel 0) is thresholded so that detector geometry
//! does not change with the fusion method. It exists to drive the pipeline
//! and the scorer end to end; it is not a competitive detector.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassLabel, DetectionRecord, Patch, PatchRef, SceneGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefDetectConfig {
    /// Threshold is `mean + k_sigma * std` of the valid VV cells.
    pub k_sigma: f64,
    pub min_area_px: usize,
    pub merge_radius_m: f64,
    #[serde(with = "class_name")]
    pub default_class: ClassLabel,
}

impl Default for RefDetectConfig {
    fn default() -> Self {
        Self {
            k_sigma: 4.0,
            min_area_px: 3,
            merge_radius_m: 100.0,
            default_class: ClassLabel::Fishing,
        }
    }
}

mod class_name {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::ClassLabel;

    pub fn serialize<S: Serializer>(c: &ClassLabel, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(c.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ClassLabel, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl RefDetectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_sigma.is_finite() && self.k_sigma > 0.0) {
            return Err(Error::Config(format!("k_sigma must be positive, got {}", self.k_sigma)));
        }
        if self.min_area_px == 0 {
            return Err(Error::Config("min_area_px must be at least 1".into()));
        }
        if !(self.merge_radius_m.is_finite() && self.merge_radius_m >= 0.0) {
            return Err(Error::Config(format!(
                "merge_radius_m must be non-negative, got {}",
                self.merge_radius_m
            )));
        }
        Ok(())
    }
}

/// A bright connected component in patch coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub row: f64,
    pub col: f64,
    pub area: usize,
    /// Mean normalized VV over the blob's pixels.
    pub mean_intensity: f64,
}

/// Mean + k·std over the valid cells, or `None` without valid cells.
pub fn patch_threshold(values: &[f32], valid: &[bool], k_sigma: f64) -> Option<f64> {
    let (mut n, mut sum, mut sum_sq) = (0usize, 0.0f64, 0.0f64);
    for (&v, &ok) in values.iter().zip(valid) {
        if ok {
            let v = f64::from(v);
            n += 1;
            sum += v;
            sum_sq += v * v;
        }
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Some(mean + k_sigma * var.sqrt())
}

/// Threshold VV, label 8-connected components and keep those of at least
/// `min_area_px` pixels. Blobs come out in row-major order of their first pixel.
pub fn detect_patch(patch: &Patch, config: &RefDetectConfig) -> Vec<Blob> {
    let values = &patch.channels[0];
    let n = patch.size;
    let Some(threshold) = patch_threshold(values, &patch.valid, config.k_sigma) else {
        return Vec::new();
    };
    let mut hot: Vec<bool> = values
        .iter()
        .zip(&patch.valid)
        .map(|(&v, &ok)| ok && f64::from(v) > threshold)
        .collect();

    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n * n {
        if !hot[start] {
            continue;
        }
        hot[start] = false;
        stack.push(start);
        let (mut area, mut sum_r, mut sum_c, mut sum_v) = (0usize, 0.0f64, 0.0f64, 0.0f64);
        while let Some(idx) = stack.pop() {
            let (r, c) = (idx / n, idx % n);
            area += 1;
            sum_r += r as f64;
            sum_c += c as f64;
            sum_v += f64::from(values[idx]);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= n as isize || nc >= n as isize {
                        continue;
                    }
                    let j = nr as usize * n + nc as usize;
                    if hot[j] {
                        hot[j] = false;
                        stack.push(j);
                    }
                }
            }
        }
        if area >= config.min_area_px {
            blobs.push(Blob {
                row: sum_r / area as f64,
                col: sum_c / area as f64,
                area,
                mean_intensity: sum_v / area as f64,
            });
        }
    }
    blobs
}

/// Merge per-patch blobs into scene-frame detections for one scene.
///
/// Candidates outside the scene (from padding) are dropped. Remaining
/// candidates are visited brightest first and kept only if no kept
/// detection lies within `merge_radius_m`; ties break on area, then
/// position, so the result does not depend on input order. Output is
/// sorted by `(row, col)`.
pub fn aggregate_detections(
    scene_id: &str,
    per_patch: &[(PatchRef, Vec<Blob>)],
    geometry: &SceneGeometry,
    config: &RefDetectConfig,
) -> Vec<DetectionRecord> {
    let mut candidates: Vec<Blob> = per_patch
        .iter()
        .filter(|(p, _)| p.scene_id == scene_id)
        .flat_map(|(p, blobs)| {
            blobs.iter().map(move |b| Blob {
                row: b.row + p.row_offset as f64,
                col: b.col + p.col_offset as f64,
                ..*b
            })
        })
        .filter(|b| b.row < geometry.height as f64 && b.col < geometry.width as f64)
        .collect();
    candidates.sort_by(|a, b| {
        b.mean_intensity
            .total_cmp(&a.mean_intensity)
            .then(b.area.cmp(&a.area))
            .then(a.row.total_cmp(&b.row))
            .then(a.col.total_cmp(&b.col))
    });

    let radius_px = config.merge_radius_m / geometry.pixel_spacing_m;
    let cell = radius_px.max(1.0);
    let cell_of = |b: &Blob| ((b.row / cell).floor() as i64, (b.col / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut kept: Vec<Blob> = Vec::new();
    for cand in candidates {
        let (gr, gc) = cell_of(&cand);
        let clash = (gr - 1..=gr + 1).any(|r| {
            (gc - 1..=gc + 1).any(|c| {
                grid.get(&(r, c)).is_some_and(|ids| {
                    ids.iter().any(|&i| {
                        let k = &kept[i];
                        (k.row - cand.row).hypot(k.col - cand.col) <= radius_px
                    })
                })
            })
        });
        if !clash {
            grid.entry((gr, gc)).or_default().push(kept.len());
            kept.push(cand);
        }
    }

    let mut out: Vec<DetectionRecord> = kept
        .into_iter()
        .map(|b| DetectionRecord {
            scene_id: scene_id.to_string(),
            row: b.row,
            col: b.col,
            is_vessel: config.default_class.is_vessel(),
            is_fishing: config.default_class.is_fishing(),
            score: b.mean_intensity.clamp(0.0, 1.0),
        })
        .collect();
    out.sort_by(|a, b| a.row.total_cmp(&b.row).then(a.col.total_cmp(&b.col)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::FusionMethod;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn patch_from(values: Vec<f32>, size: usize) -> Patch {
        Patch {
            scene_id: "s".into(),
            row_offset: 0,
            col_offset: 0,
            size,
            channels: [values.clone(), values.clone(), values],
            valid: vec![true; size * size],
            channel_spec: FusionMethod::MeanVvVh,
        }
    }

    /// Independent oracle: threshold from a two-pass mean/variance and a
    /// recursive 8-neighbour flood fill.
    fn oracle(values: &[f32], size: usize, k: f64, min_area: usize) -> Vec<(f64, f64, usize)> {
        let n = values.len() as f64;
        let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = values.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        let t = mean + k * var.sqrt();
        let mut seen = vec![false; values.len()];
        fn fill(
            r: usize,
            c: usize,
            size: usize,
            values: &[f32],
            t: f64,
            seen: &mut [bool],
            px: &mut Vec<(usize, usize)>,
        ) {
            let i = r * size + c;
            if seen[i] || f64::from(values[i]) <= t {
                return;
            }
            seen[i] = true;
            px.push((r, c));
            for (dr, dc) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0 && nc >= 0 && (nr as usize) < size && (nc as usize) < size {
                    fill(nr as usize, nc as usize, size, values, t, seen, px);
                }
            }
        }
        let mut out = Vec::new();
        for r in 0..size {
            for c in 0..size {
                let mut px = Vec::new();
                fill(r, c, size, values, t, &mut seen, &mut px);
                if !px.is_empty() && px.len() >= min_area {
                    let rr = px.iter().map(|p| p.0 as f64).sum::<f64>() / px.len() as f64;
                    let cc = px.iter().map(|p| p.1 as f64).sum::<f64>() / px.len() as f64;
                    out.push((rr, cc, px.len()));
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        out
    }

    fn sorted(blobs: &[Blob]) -> Vec<(f64, f64, usize)> {
        let mut v: Vec<_> = blobs.iter().map(|b| (b.row, b.col, b.area)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        v
    }

    #[test]
    fn pure_noise_patch_matches_oracle() {
        // exponential-ish heavy-tailed noise so that a few components survive
        let size = 256;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let values: Vec<f32> = (0..size * size)
            .map(|_| -(rng.random::<f32>().max(1e-9)).ln() / 12.0)
            .collect();
        let config = RefDetectConfig {
            min_area_px: 1,
            ..RefDetectConfig::default()
        };
        let got = detect_patch(&patch_from(values.clone(), size), &config);
        let want = oracle(&values, size, config.k_sigma, 1);
        assert_eq!(sorted(&got).len(), want.len());
        for (g, w) in sorted(&got).iter().zip(&want) {
            assert!((g.0 - w.0).abs() < 1e-9 && (g.1 - w.1).abs() < 1e-9 && g.2 == w.2);
        }
        let strict = detect_patch(&patch_from(values.clone(), size), &RefDetectConfig::default());
        assert_eq!(strict.len(), oracle(&values, size, 4.0, 3).len());
    }

    #[test]
    fn single_block_gives_one_centroid() {
        let size = 512;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut values: Vec<f32> = (0..size * size).map(|_| rng.random_range(0.0..0.2)).collect();
        for r in 200..205 {
            for c in 300..305 {
                values[r * size + c] = 1.0;
            }
        }
        let blobs = detect_patch(&patch_from(values.clone(), size), &RefDetectConfig::default());
        assert_eq!(blobs.len(), 1);
        assert!((blobs[0].row - 202.0).abs() <= 1.0 && (blobs[0].col - 302.0).abs() <= 1.0);
        assert_eq!(blobs[0].area, 25);
        assert_eq!(sorted(&blobs), oracle(&values, size, 4.0, 3));
    }

    #[test]
    fn small_blob_is_filtered() {
        let size = 64;
        let mut values = vec![0.1f32; size * size];
        values[10 * size + 10] = 1.0;
        values[11 * size + 11] = 1.0; // diagonal neighbour: one component of area 2
        let p = patch_from(values, size);
        assert!(detect_patch(&p, &RefDetectConfig::default()).is_empty());
        let loose = RefDetectConfig {
            min_area_px: 2,
            ..RefDetectConfig::default()
        };
        assert_eq!(detect_patch(&p, &loose).len(), 1);
    }

    #[test]
    fn invalid_cells_are_ignored() {
        let size = 16;
        let mut p = patch_from(vec![0.0; size * size], size);
        for i in 0..4 {
            p.channels[0][i] = 1.0;
            p.valid[i] = false;
        }
        p.channels[0][100] = 0.5;
        let config = RefDetectConfig {
            min_area_px: 1,
            ..RefDetectConfig::default()
        };
        let blobs = detect_patch(&p, &config);
        assert_eq!(blobs.len(), 1);
        assert_eq!((blobs[0].row, blobs[0].col), (6.0, 4.0));
    }

    fn patch_ref(r: usize, c: usize) -> PatchRef {
        PatchRef {
            scene_id: "s".into(),
            row_offset: r,
            col_offset: c,
            size: 100,
        }
    }

    fn blob(row: f64, col: f64, intensity: f64) -> Blob {
        Blob {
            row,
            col,
            area: 9,
            mean_intensity: intensity,
        }
    }

    const GEOM: SceneGeometry = SceneGeometry {
        width: 150,
        height: 150,
        pixel_spacing_m: 10.0,
    };

    #[test]
    fn overlapping_views_merge_to_one() {
        let per_patch = vec![
            (patch_ref(0, 0), vec![blob(60.0, 70.0, 0.8)]),
            (patch_ref(0, 50), vec![blob(60.0, 20.5, 0.9)]),
        ];
        let out = aggregate_detections("s", &per_patch, &GEOM, &RefDetectConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].row, out[0].col), (60.0, 70.5));
        assert_eq!(out[0].score, 0.9);
        assert!(out[0].is_vessel && out[0].is_fishing);
    }

    #[test]
    fn empty_in_empty_out() {
        assert!(aggregate_detections("s", &[], &GEOM, &RefDetectConfig::default()).is_empty());
    }

    #[test]
    fn padding_detections_are_dropped() {
        let per_patch = vec![(patch_ref(100, 100), vec![blob(10.0, 10.0, 0.9), blob(60.0, 10.0, 0.9)])];
        let out = aggregate_detections("s", &per_patch, &GEOM, &RefDetectConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].row, 110.0);
    }

    #[test]
    fn aggregation_ignores_input_order_and_respects_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut per_patch: Vec<(PatchRef, Vec<Blob>)> = (0..4)
            .map(|i| {
                let blobs = (0..40)
                    .map(|_| {
                        blob(
                            rng.random_range(0.0..100.0),
                            rng.random_range(0.0..100.0),
                            rng.random_range(0.0..1.0),
                        )
                    })
                    .collect();
                (patch_ref((i / 2) * 50, (i % 2) * 50), blobs)
            })
            .collect();
        let config = RefDetectConfig::default();
        let a = aggregate_detections("s", &per_patch, &GEOM, &config);
        per_patch.reverse();
        for (_, b) in &mut per_patch {
            b.reverse();
        }
        let b = aggregate_detections("s", &per_patch, &GEOM, &config);
        assert_eq!(a, b);
        let r = config.merge_radius_m / GEOM.pixel_spacing_m;
        for (i, x) in a.iter().enumerate() {
            assert!(x.row < 150.0 && x.col < 150.0);
            for y in &a[i + 1..] {
                assert!((x.row - y.row).hypot(x.col - y.col) > r);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(RefDetectConfig {
            k_sigma: 0.0,
            ..RefDetectConfig::default()
        }
        .validate()
        .is_err());
        assert!(RefDetectConfig {
            min_area_px: 0,
            ..RefDetectConfig::default()
        }
        .validate()
        .is_err());
        assert!(RefDetectConfig::default().validate().is_ok());
    }
}
