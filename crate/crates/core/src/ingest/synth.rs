//! Deterministic synthetic scenes with known ground truth.
//!
//! Background is clamped gamma speckle, targets are bright square blocks at
//! recorded centroids, and the shore-distance raster grows linearly from the
//! left edge (column 0 is the coastline).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AuxChannel, ClassLabel, Confidence, LabelRecord, Raster, Scene, DEFAULT_NODATA};

/// Speckle samples are clamped at this multiple of `noise_level`.
pub const SPECKLE_CAP: f32 = 2.5;
/// Equivalent number of looks of the speckle gamma distribution (unit mean).
const SPECKLE_LOOKS: f64 = 4.0;
const VH_GAIN: f32 = 0.6;
const MAX_PLACEMENT_ATTEMPTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMix {
    /// Every target is a fishing vessel.
    AllFishing,
    /// Uniform over the three classes.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    pub pixel_spacing_m: f64,
    pub n_targets: usize,
    /// Side of the square target footprint in pixels; must be odd.
    pub target_size: usize,
    pub target_intensity: f32,
    pub noise_level: f32,
    /// Width of the near-shore strip that receives the shore targets.
    pub shore_band_km: f64,
    /// Fraction of targets forced into the near-shore strip.
    pub shore_fraction: f64,
    pub min_separation_px: f64,
    pub class_mix: ClassMix,
    /// Probability that a label is HIGH; the rest split between MEDIUM and LOW.
    pub high_confidence_fraction: f64,
    /// When set, all five auxiliary layers are generated at 1/n resolution.
    pub aux_downsample: Option<usize>,
    pub rng_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            scene_id: "synth_000".into(),
            width: 1600,
            height: 1600,
            pixel_spacing_m: 10.0,
            n_targets: 12,
            target_size: 5,
            target_intensity: 20.0,
            noise_level: 1.0,
            shore_band_km: 2.0,
            shore_fraction: 0.25,
            min_separation_px: 50.0,
            class_mix: ClassMix::AllFishing,
            high_confidence_fraction: 1.0,
            aux_downsample: None,
            rng_seed: 0,
        }
    }
}

impl SynthSpec {
    /// Upper bound of background VV values.
    pub fn noise_ceiling(&self) -> f32 {
        self.noise_level * SPECKLE_CAP
    }

    fn shore_target_count(&self) -> usize {
        (self.n_targets as f64 * self.shore_fraction).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if self.width == 0 || self.height == 0 {
            return fail(format!("scene must be non-empty, got {}x{}", self.width, self.height));
        }
        if self.target_size == 0 || self.target_size.is_multiple_of(2) {
            return fail(format!("target_size must be odd, got {}", self.target_size));
        }
        if self.n_targets > 0 && (self.target_size > self.width || self.target_size > self.height) {
            return fail(format!(
                "{0}x{0} target does not fit a {1}x{2} scene",
                self.target_size, self.width, self.height
            ));
        }
        if !(self.pixel_spacing_m.is_finite() && self.pixel_spacing_m > 0.0) {
            return fail(format!(
                "pixel_spacing_m must be positive, got {}",
                self.pixel_spacing_m
            ));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) || !self.target_intensity.is_finite() {
            return fail("noise_level and target_intensity must be finite, noise non-negative".into());
        }
        for (name, v) in [
            ("shore_fraction", self.shore_fraction),
            ("high_confidence_fraction", self.high_confidence_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.min_separation_px >= 0.0 && self.shore_band_km >= 0.0) {
            return fail("min_separation_px and shore_band_km must be non-negative".into());
        }
        if self.aux_downsample == Some(0) {
            return fail("aux_downsample must be at least 1".into());
        }
        Ok(())
    }
}

/// Where the generator put one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPlacement {
    pub row: usize,
    pub col: usize,
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub class: String,
    pub confidence: Confidence,
    pub near_shore: bool,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub scene: Scene,
    pub labels: Vec<LabelRecord>,
    pub placements: Vec<TargetPlacement>,
}

pub fn synth_scene(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (w, h, size) = (spec.width, spec.height, spec.target_size);
    let half = size / 2;

    // Placement first so the geometry does not depend on raster size.
    let n_shore = spec.shore_target_count();
    let shore_max_col = (spec.shore_band_km * 1000.0 / spec.pixel_spacing_m).floor() as usize;
    let mut centers: Vec<(usize, usize, usize, usize, bool)> = Vec::with_capacity(spec.n_targets);
    for i in 0..spec.n_targets {
        let near_shore = i < n_shore;
        let max_left = if near_shore {
            if shore_max_col < half {
                return Err(Error::Spec(format!(
                    "a {}-pixel target cannot sit within {} km of shore",
                    size, spec.shore_band_km
                )));
            }
            (shore_max_col - half).min(w - size)
        } else {
            w - size
        };
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let top = rng.random_range(0..=h - size);
            let left = rng.random_range(0..=max_left);
            let (r, c) = (top + half, left + half);
            let clear = centers.iter().all(|&(pr, pc, ..)| {
                let dr = pr as f64 - r as f64;
                let dc = pc as f64 - c as f64;
                (dr * dr + dc * dc).sqrt() >= spec.min_separation_px
            });
            if clear {
                centers.push((r, c, top, left, near_shore));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Spec(format!(
                "could not place target {} of {} with {} px separation",
                i + 1,
                spec.n_targets,
                spec.min_separation_px
            )));
        }
    }

    let speckle = Gamma::new(SPECKLE_LOOKS, 1.0 / SPECKLE_LOOKS).expect("valid gamma parameters");
    let speckle_field = |gain: f32, rng: &mut ChaCha8Rng| -> Vec<f32> {
        (0..w * h)
            .map(|_| gain * spec.noise_level * (speckle.sample(rng) as f32).min(SPECKLE_CAP))
            .collect()
    };
    let mut vv = Raster::new(w, h, spec.pixel_spacing_m, DEFAULT_NODATA, speckle_field(1.0, &mut rng))?;
    let mut vh = Raster::new(
        w,
        h,
        spec.pixel_spacing_m,
        DEFAULT_NODATA,
        speckle_field(VH_GAIN, &mut rng),
    )?;
    for &(_, _, top, left, _) in &centers {
        for r in top..top + size {
            for c in left..left + size {
                vv.set(r, c, spec.target_intensity * rng.random_range(0.9f32..1.1));
                vh.set(r, c, VH_GAIN * spec.target_intensity * rng.random_range(0.9f32..1.1));
            }
        }
    }

    let shore_km = |col: usize| (col as f64 * spec.pixel_spacing_m / 1000.0) as f32;
    let shore_values = (0..h).flat_map(|_| (0..w).map(shore_km)).collect();
    let shore = Raster::new(w, h, spec.pixel_spacing_m, DEFAULT_NODATA, shore_values)?;

    let mut labels = Vec::with_capacity(centers.len());
    let mut placements = Vec::with_capacity(centers.len());
    for (i, &(row, col, top, left, near_shore)) in centers.iter().enumerate() {
        let class = match spec.class_mix {
            ClassMix::AllFishing => ClassLabel::Fishing,
            ClassMix::Uniform => ClassLabel::ALL[rng.random_range(0..3)],
        };
        let confidence = if rng.random::<f64>() < spec.high_confidence_fraction {
            Confidence::High
        } else if rng.random::<bool>() {
            Confidence::Medium
        } else {
            Confidence::Low
        };
        labels.push(LabelRecord {
            detect_id: format!("{}_{:04}", spec.scene_id, i),
            scene_id: spec.scene_id.clone(),
            row,
            col,
            is_vessel: Some(class.is_vessel()),
            is_fishing: class.is_vessel().then_some(class.is_fishing()),
            vessel_length_m: class.is_vessel().then_some(size as f64 * spec.pixel_spacing_m),
            confidence,
            distance_from_shore_km: Some(col as f64 * spec.pixel_spacing_m / 1000.0),
            source: "synthetic".into(),
        });
        placements.push(TargetPlacement {
            row,
            col,
            top,
            left,
            size,
            class: class.name().into(),
            confidence,
            near_shore,
        });
    }

    let auxiliaries = match spec.aux_downsample {
        Some(factor) => synth_auxiliaries(spec, factor, &mut rng)?,
        None => BTreeMap::new(),
    };

    let scene = Scene::new(spec.scene_id.clone(), vv, vh, auxiliaries, Some(shore))?;
    Ok(SynthScene {
        scene,
        labels,
        placements,
    })
}

fn synth_auxiliaries(spec: &SynthSpec, factor: usize, rng: &mut ChaCha8Rng) -> Result<BTreeMap<AuxChannel, Raster>> {
    let aw = spec.width.div_ceil(factor);
    let ah = spec.height.div_ceil(factor);
    let spacing = spec.pixel_spacing_m * factor as f64;
    let mut out = BTreeMap::new();
    for channel in AuxChannel::ALL {
        let mut values = Vec::with_capacity(aw * ah);
        for _ in 0..ah {
            for c in 0..aw {
                let km = c as f64 * spacing / 1000.0;
                let v = match channel {
                    AuxChannel::Bathymetry => -(20.0 + 150.0 * km) + rng.random_range(-5.0..5.0),
                    AuxChannel::WindSpeed => 6.0 + rng.random_range(-2.0..2.0),
                    AuxChannel::WindDirection => 200.0 + rng.random_range(-30.0..30.0),
                    AuxChannel::WindQuality => f64::from(rng.random_range(1u8..=3)),
                    AuxChannel::LandIceMask => f64::from(u8::from(km < 0.5)),
                };
                values.push(v as f32);
            }
        }
        out.insert(channel, Raster::new(aw, ah, spacing, DEFAULT_NODATA, values)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_targets_stays_under_noise_ceiling() {
        let spec = SynthSpec {
            width: 300,
            height: 200,
            n_targets: 0,
            ..SynthSpec::default()
        };
        let out = synth_scene(&spec).unwrap();
        assert!(out.labels.is_empty());
        let max = out.scene.vv.values().iter().cloned().fold(f32::MIN, f32::max);
        assert!(max <= spec.noise_ceiling());
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SynthSpec {
            width: 256,
            height: 256,
            n_targets: 4,
            min_separation_px: 20.0,
            aux_downsample: Some(8),
            class_mix: ClassMix::Uniform,
            high_confidence_fraction: 0.5,
            ..SynthSpec::default()
        };
        let a = synth_scene(&spec).unwrap();
        let b = synth_scene(&spec).unwrap();
        assert_eq!(a.scene.vv, b.scene.vv);
        assert_eq!(a.scene.vh, b.scene.vh);
        assert_eq!(a.scene.auxiliaries, b.scene.auxiliaries);
        assert_eq!(a.labels, b.labels);
        let c = synth_scene(&SynthSpec { rng_seed: 1, ..spec }).unwrap();
        assert_ne!(a.scene.vv, c.scene.vv);
    }

    #[test]
    fn ten_targets_are_separated_and_logged() {
        let spec = SynthSpec {
            n_targets: 10,
            min_separation_px: 80.0,
            rng_seed: 7,
            ..SynthSpec::default()
        };
        let out = synth_scene(&spec).unwrap();
        assert_eq!(out.labels.len(), 10);
        assert_eq!(out.placements.len(), 10);
        for (i, a) in out.placements.iter().enumerate() {
            for b in &out.placements[i + 1..] {
                let d = ((a.row as f64 - b.row as f64).powi(2) + (a.col as f64 - b.col as f64).powi(2)).sqrt();
                assert!(d >= 80.0, "targets {a:?} and {b:?} are {d} px apart");
            }
        }
        for (l, p) in out.labels.iter().zip(&out.placements) {
            assert_eq!((l.row, l.col), (p.row, p.col));
            assert_eq!((p.top + p.size / 2, p.left + p.size / 2), (p.row, p.col));
            // footprint is brighter than any background sample
            assert!(out.scene.vv.get(p.row, p.col) > spec.noise_ceiling());
        }
    }

    #[test]
    fn shore_targets_sit_inside_the_band() {
        let spec = SynthSpec {
            n_targets: 8,
            shore_fraction: 0.5,
            ..SynthSpec::default()
        };
        let out = synth_scene(&spec).unwrap();
        let near: Vec<_> = out
            .labels
            .iter()
            .zip(&out.placements)
            .filter(|(_, p)| p.near_shore)
            .collect();
        assert_eq!(near.len(), 4);
        for (l, _) in near {
            assert!(l.distance_from_shore_km.unwrap() <= spec.shore_band_km);
        }
    }

    #[test]
    fn impossible_placement_is_spec_error() {
        let spec = SynthSpec {
            width: 50,
            height: 50,
            n_targets: 30,
            min_separation_px: 40.0,
            ..SynthSpec::default()
        };
        assert!(matches!(synth_scene(&spec), Err(Error::Spec(_))));
        let even = SynthSpec {
            target_size: 4,
            ..SynthSpec::default()
        };
        assert!(matches!(synth_scene(&even), Err(Error::Spec(_))));
    }

    #[test]
    fn uniform_mix_respects_flag_invariant() {
        let spec = SynthSpec {
            width: 400,
            height: 400,
            n_targets: 20,
            min_separation_px: 10.0,
            class_mix: ClassMix::Uniform,
            ..SynthSpec::default()
        };
        for l in synth_scene(&spec).unwrap().labels {
            l.check_flags().unwrap();
        }
    }
}
