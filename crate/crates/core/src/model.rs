//! Shared value types.
//!
//! Pixel coordinates use a top-left origin: `(row = 0, col = 0)` is the first
//! stored sample and rows grow downward. Distances that feed metrics are
//! converted to meters with the raster's pixel spacing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::FusionMethod;

/// Sentinel-1 GRD ground sample distance, used when a raster header omits it.
pub const DEFAULT_PIXEL_SPACING_M: f64 = 10.0;

/// Stored values at or below this are treated as missing.
pub const DEFAULT_NODATA: f32 = -30000.0;

/// A single-band grid of `f32` samples in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixel_spacing_m: f64,
    nodata: f32,
    values: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixel_spacing_m: f64, nodata: f32, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "{width}x{height} raster needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if !(pixel_spacing_m.is_finite() && pixel_spacing_m > 0.0) {
            return Err(Error::InvalidRaster(format!(
                "pixel spacing must be positive, got {pixel_spacing_m}"
            )));
        }
        Ok(Self {
            width,
            height,
            pixel_spacing_m,
            nodata,
            values,
        })
    }

    /// A raster with every cell set to `value`, using default spacing and nodata.
    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(
            width,
            height,
            DEFAULT_PIXEL_SPACING_M,
            DEFAULT_NODATA,
            vec![value; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_spacing_m(&self) -> f64 {
        self.pixel_spacing_m
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.values[row * self.width + col] = value;
    }

    /// Whether `value` counts as a real measurement for this raster.
    #[inline]
    pub fn is_valid(&self, value: f32) -> bool {
        value.is_finite() && value > self.nodata
    }

    /// Overwrite a rectangle (clipped to the raster) with a constant.
    pub fn fill_rect(&mut self, row: usize, col: usize, height: usize, width: usize, value: f32) {
        let row_end = (row + height).min(self.height);
        let col_end = (col + width).min(self.width);
        for r in row..row_end {
            self.values[r * self.width + col..r * self.width + col_end].fill(value);
        }
    }

    /// Nearest-neighbour lookup of a point given in a `frame_height` x
    /// `frame_width` reference frame, for rasters stored at another resolution.
    /// Returns `None` outside the frame or when the sample is missing.
    pub fn sample_in_frame(&self, row: f64, col: f64, frame_height: usize, frame_width: usize) -> Option<f32> {
        if !(row >= 0.0 && col >= 0.0) {
            return None;
        }
        let (r, c) = (row.floor() as usize, col.floor() as usize);
        if r >= frame_height || c >= frame_width {
            return None;
        }
        let rr = r * self.height / frame_height;
        let cc = c * self.width / frame_width;
        let v = self.get(rr, cc);
        self.is_valid(v).then_some(v)
    }
}

/// Named non-SAR layers distributed with a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxChannel {
    Bathymetry,
    WindSpeed,
    WindDirection,
    /// Also accepted as `wind_mass`.
    WindQuality,
    LandIceMask,
}

impl AuxChannel {
    pub const ALL: [AuxChannel; 5] = [
        AuxChannel::Bathymetry,
        AuxChannel::WindSpeed,
        AuxChannel::WindDirection,
        AuxChannel::WindQuality,
        AuxChannel::LandIceMask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AuxChannel::Bathymetry => "bathymetry",
            AuxChannel::WindSpeed => "wind_speed",
            AuxChannel::WindDirection => "wind_direction",
            AuxChannel::WindQuality => "wind_quality",
            AuxChannel::LandIceMask => "land_ice_mask",
        }
    }
}

impl fmt::Display for AuxChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AuxChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Ok(match key.as_str() {
            "bathymetry" => AuxChannel::Bathymetry,
            "wind_speed" | "owi_wind_speed" => AuxChannel::WindSpeed,
            "wind_direction" | "owi_wind_direction" => AuxChannel::WindDirection,
            "wind_quality" | "wind_mass" | "owi_wind_quality" => AuxChannel::WindQuality,
            "land_ice_mask" | "owi_mask" | "land_mask" => AuxChannel::LandIceMask,
            _ => return Err(Error::Config(format!("unknown auxiliary channel `{s}`"))),
        })
    }
}

/// Co-registered VV/VH rasters with optional auxiliaries and shore distance.
#[derive(Debug, Clone)]
pub struct Scene {
    pub scene_id: String,
    pub vv: Raster,
    pub vh: Raster,
    pub auxiliaries: BTreeMap<AuxChannel, Raster>,
    /// Distance to the nearest coastline in kilometers.
    pub shore_distance: Option<Raster>,
}

impl Scene {
    pub fn new(
        scene_id: impl Into<String>,
        vv: Raster,
        vh: Raster,
        auxiliaries: BTreeMap<AuxChannel, Raster>,
        shore_distance: Option<Raster>,
    ) -> Result<Self> {
        let scene_id = scene_id.into();
        if vv.width() != vh.width() || vv.height() != vh.height() {
            return Err(Error::ChannelDimensionMismatch {
                scene_id,
                vv_width: vv.width(),
                vv_height: vv.height(),
                vh_width: vh.width(),
                vh_height: vh.height(),
            });
        }
        Ok(Self {
            scene_id,
            vv,
            vh,
            auxiliaries,
            shore_distance,
        })
    }

    pub fn width(&self) -> usize {
        self.vv.width()
    }

    pub fn height(&self) -> usize {
        self.vv.height()
    }

    pub fn pixel_spacing_m(&self) -> f64 {
        self.vv.pixel_spacing_m()
    }

    pub fn geometry(&self) -> SceneGeometry {
        SceneGeometry {
            width: self.width(),
            height: self.height(),
            pixel_spacing_m: self.pixel_spacing_m(),
        }
    }
}

/// Scene extent and ground sample distance, without pixel data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneGeometry {
    pub width: usize,
    pub height: usize,
    pub pixel_spacing_m: f64,
}

/// Label quality tier, ordered `Low < Medium < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Confidence {
    Low,
    Medium,
    High,
}

impl Confidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Confidence::Low => "LOW",
            Confidence::Medium => "MEDIUM",
            Confidence::High => "HIGH",
        }
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Confidence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HIGH" => Ok(Confidence::High),
            "MEDIUM" => Ok(Confidence::Medium),
            "LOW" => Ok(Confidence::Low),
            _ => Err(Error::Config(format!("unknown confidence tier `{s}`"))),
        }
    }
}

/// One ground-truth point object.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub detect_id: String,
    pub scene_id: String,
    pub row: usize,
    pub col: usize,
    pub is_vessel: Option<bool>,
    pub is_fishing: Option<bool>,
    pub vessel_length_m: Option<f64>,
    pub confidence: Confidence,
    pub distance_from_shore_km: Option<f64>,
    pub source: String,
}

impl LabelRecord {
    /// `is_fishing` may only be present on a known vessel.
    pub fn check_flags(&self) -> Result<()> {
        if self.is_fishing.is_some() && self.is_vessel != Some(true) {
            return Err(Error::InvalidLabel(format!(
                "{}: is_fishing is set but is_vessel is {:?}",
                self.detect_id, self.is_vessel
            )));
        }
        Ok(())
    }

    pub fn check_in_scene(&self, geometry: &SceneGeometry) -> Result<()> {
        if self.row >= geometry.height || self.col >= geometry.width {
            return Err(Error::InvalidLabel(format!(
                "{}: ({}, {}) lies outside the {}x{} scene {}",
                self.detect_id, self.row, self.col, geometry.width, geometry.height, self.scene_id
            )));
        }
        Ok(())
    }
}

/// Training class after merging the vessel and fishing flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    Fishing,
    NonFishing,
    NonVessel,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Fishing, ClassLabel::NonFishing, ClassLabel::NonVessel];

    /// Stable serialization code.
    pub fn code(self) -> u8 {
        match self {
            ClassLabel::Fishing => 0,
            ClassLabel::NonFishing => 1,
            ClassLabel::NonVessel => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Fishing => "fishing",
            ClassLabel::NonFishing => "non_fishing",
            ClassLabel::NonVessel => "non_vessel",
        }
    }

    pub fn is_vessel(self) -> bool {
        self != ClassLabel::NonVessel
    }

    pub fn is_fishing(self) -> bool {
        self == ClassLabel::Fishing
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|c| c.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown class `{s}`")))
    }
}

/// The vessel/fishing flags do not determine a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("ambiguous label flags: is_vessel={is_vessel:?}, is_fishing={is_fishing:?}")]
pub struct AmbiguousLabel {
    pub is_vessel: Option<bool>,
    pub is_fishing: Option<bool>,
}

/// Merge the two label flags into one of the three training classes.
pub fn class_label_from_flags(is_vessel: Option<bool>, is_fishing: Option<bool>) -> Result<ClassLabel, AmbiguousLabel> {
    match (is_vessel, is_fishing) {
        (Some(false), _) => Ok(ClassLabel::NonVessel),
        (Some(true), Some(true)) => Ok(ClassLabel::Fishing),
        (Some(true), Some(false)) => Ok(ClassLabel::NonFishing),
        _ => Err(AmbiguousLabel { is_vessel, is_fishing }),
    }
}

/// Identifies a patch window inside a scene.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatchRef {
    pub scene_id: String,
    pub row_offset: usize,
    pub col_offset: usize,
    pub size: usize,
}

impl PatchRef {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_offset..self.row_offset + self.size).contains(&row)
            && (self.col_offset..self.col_offset + self.size).contains(&col)
    }

    /// File name of the exported patch grid.
    pub fn file_name(&self) -> String {
        format!("{}_r{:06}_c{:06}.f32", self.scene_id, self.row_offset, self.col_offset)
    }
}

/// A normalized 3-channel square window.
///
/// Channel 0 is VV, channel 1 is VH and channel 2 comes from `channel_spec`.
/// Cells without a valid measurement hold 0 and are cleared in `valid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub scene_id: String,
    pub row_offset: usize,
    pub col_offset: usize,
    pub size: usize,
    pub channels: [Vec<f32>; 3],
    pub valid: Vec<bool>,
    pub channel_spec: FusionMethod,
}

impl Patch {
    pub fn patch_ref(&self) -> PatchRef {
        PatchRef {
            scene_id: self.scene_id.clone(),
            row_offset: self.row_offset,
            col_offset: self.col_offset,
            size: self.size,
        }
    }
}

/// One predicted point object in scene pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub scene_id: String,
    pub row: f64,
    pub col: f64,
    pub is_vessel: bool,
    pub is_fishing: bool,
    pub score: f64,
}

impl DetectionRecord {
    pub fn check(&self) -> Result<()> {
        if self.is_fishing && !self.is_vessel {
            return Err(Error::InvalidLabel("is_fishing is true but is_vessel is false".into()));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidLabel(format!("score {} outside [0, 1]", self.score)));
        }
        if !(self.row.is_finite() && self.col.is_finite()) {
            return Err(Error::InvalidLabel("non-finite coordinates".into()));
        }
        Ok(())
    }
}

/// True positive / false positive / false negative tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, rhs: Counts) -> Counts {
        Counts {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
        }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Counts) {
        *self = *self + rhs;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub detection: Counts,
    pub shore: Counts,
    pub vessel: Counts,
    pub fishing: Counts,
}

impl std::ops::AddAssign for MetricCounts {
    fn add_assign(&mut self, rhs: MetricCounts) {
        self.detection += rhs.detection;
        self.shore += rhs.shore;
        self.vessel += rhs.vessel;
        self.fishing += rhs.fishing;
    }
}

/// Metrics for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub f1_d: f64,
    pub f1_s: f64,
    pub f1_v: f64,
    pub f1_f: f64,
    pub avg_f1: f64,
    pub counts: MetricCounts,
    pub f1_s_computable: bool,
    /// Unmatched predictions whose shore distance could not be sampled.
    pub shore_fp_unresolved: u64,
}

/// The scored metric bundle written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1_d: f64,
    pub f1_s: f64,
    pub f1_v: f64,
    pub f1_f: f64,
    pub avg_f1: f64,
    pub counts: MetricCounts,
    pub f1_s_computable: bool,
    pub shore_fp_unresolved: u64,
    pub per_scene: BTreeMap<String, SceneScore>,
    pub settings: ReportSettings,
}

/// Scoring parameters echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub match_radius_m: f64,
    pub shore_threshold_km: f64,
    pub beta: f64,
    pub min_confidence_gt: Confidence,
    pub shore_rule: String,
    pub classification_rule: String,
}
