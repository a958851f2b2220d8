//! Scene → normalized 3-channel patches.
//!
//! Normalization is per patch and per channel. A channel whose valid cells
//! are all equal (or that has no valid cell) cannot be min-max scaled and
//! the whole patch is discarded.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AuxChannel, Patch, PatchRef, Raster, Scene};

/// How the third patch channel is built.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "method", content = "auxiliaries", rename_all = "snake_case")]
pub enum FusionMethod {
    SingleAuxiliary(AuxChannel),
    #[default]
    MeanVvVh,
    DiffVvVh,
    MeanAuxiliaries(Vec<AuxChannel>),
    MeanAll(Vec<AuxChannel>),
}

impl FusionMethod {
    pub fn required_auxiliaries(&self) -> Vec<AuxChannel> {
        match self {
            FusionMethod::SingleAuxiliary(a) => vec![*a],
            FusionMethod::MeanAuxiliaries(list) | FusionMethod::MeanAll(list) => list.clone(),
            FusionMethod::MeanVvVh | FusionMethod::DiffVvVh => Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FusionMethod::MeanAuxiliaries(list) | FusionMethod::MeanAll(list) if list.is_empty() => {
                Err(Error::Config(format!("{self} needs at least one auxiliary channel")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |l: &[AuxChannel]| l.iter().map(|a| a.name()).collect::<Vec<_>>().join(",");
        match self {
            FusionMethod::SingleAuxiliary(a) => write!(f, "single-aux:{a}"),
            FusionMethod::MeanVvVh => f.write_str("mean-vv-vh"),
            FusionMethod::DiffVvVh => f.write_str("diff-vv-vh"),
            FusionMethod::MeanAuxiliaries(l) => write!(f, "mean-aux:{}", list(l)),
            FusionMethod::MeanAll(l) => write!(f, "mean-all:{}", list(l)),
        }
    }
}

/// Accepts `mean-vv-vh`, `diff-vv-vh`, `single-aux:<name>`, and
/// `mean-aux[:a,b,..]` / `mean-all[:a,b,..]` (all five auxiliaries when the
/// list is omitted).
impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        let (head, tail) = match norm.split_once(':') {
            Some((h, t)) => (h.to_string(), Some(t.to_string())),
            None => (norm.clone(), None),
        };
        let parse_list = |t: Option<String>| -> Result<Vec<AuxChannel>> {
            match t {
                None => Ok(AuxChannel::ALL.to_vec()),
                Some(t) => t.split(',').map(str::parse).collect(),
            }
        };
        let method = match head.as_str() {
            "mean-vv-vh" | "mean" => FusionMethod::MeanVvVh,
            "diff-vv-vh" | "diff" => FusionMethod::DiffVvVh,
            "single-aux" | "aux" => {
                let name = tail.ok_or_else(|| Error::Config("single-aux needs a channel name".into()))?;
                FusionMethod::SingleAuxiliary(name.parse()?)
            }
            "mean-aux" => FusionMethod::MeanAuxiliaries(parse_list(tail)?),
            "mean-all" => FusionMethod::MeanAll(parse_list(tail)?),
            _ => return Err(Error::Config(format!("unknown fusion method `{s}`"))),
        };
        method.validate()?;
        Ok(method)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    PadReflect,
    /// Out-of-scene cells are missing; they read 0 after normalization.
    #[default]
    PadZero,
    DropPartial,
}

impl FromStr for EdgePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "pad_reflect" | "reflect" => Ok(EdgePolicy::PadReflect),
            "pad_zero" | "zero" => Ok(EdgePolicy::PadZero),
            "drop_partial" | "drop" => Ok(EdgePolicy::DropPartial),
            _ => Err(Error::Config(format!("unknown edge policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TilingPolicy {
    pub patch_size: usize,
    pub stride: usize,
    pub edge_policy: EdgePolicy,
}

impl Default for TilingPolicy {
    fn default() -> Self {
        Self {
            patch_size: 800,
            stride: 800,
            edge_policy: EdgePolicy::PadZero,
        }
    }
}

impl TilingPolicy {
    pub fn new(patch_size: usize, edge_policy: EdgePolicy) -> Self {
        Self {
            patch_size,
            stride: patch_size,
            edge_policy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::Config(format!(
                "tiling needs 0 < stride <= patch_size, got stride {} and patch size {}",
                self.stride, self.patch_size
            )));
        }
        Ok(())
    }

    /// Window offsets along one axis of length `dim`.
    pub fn axis_offsets(&self, dim: usize) -> Vec<usize> {
        let (p, s) = (self.patch_size, self.stride);
        match self.edge_policy {
            EdgePolicy::DropPartial => {
                if dim < p {
                    Vec::new()
                } else {
                    (0..=(dim - p) / s).map(|k| k * s).collect()
                }
            }
            EdgePolicy::PadReflect | EdgePolicy::PadZero => {
                let extra = dim.saturating_sub(p).div_ceil(s);
                (0..=extra).map(|k| k * s).collect()
            }
        }
    }

    /// Row-major list of windows covering a `height` x `width` scene.
    pub fn windows(&self, height: usize, width: usize) -> Vec<Window> {
        let cols = self.axis_offsets(width);
        self.axis_offsets(height)
            .into_iter()
            .flat_map(|r| {
                cols.iter().map(move |&c| Window {
                    row_offset: r,
                    col_offset: c,
                    size: self.patch_size,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Window {
    pub row_offset: usize,
    pub col_offset: usize,
    pub size: usize,
}

impl Window {
    pub fn patch_ref(&self, scene_id: &str) -> PatchRef {
        PatchRef {
            scene_id: scene_id.to_string(),
            row_offset: self.row_offset,
            col_offset: self.col_offset,
            size: self.size,
        }
    }
}

/// Unnormalized VV/VH samples of one window. Padding cells hold NaN.
#[derive(Debug, Clone)]
pub struct RawWindow {
    pub window: Window,
    pub vv: Vec<f32>,
    pub vh: Vec<f32>,
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Samples of `raster` over `window`, where the window lives in a
/// `frame_height` x `frame_width` frame. Rasters stored at another
/// resolution are resampled by nearest neighbour.
pub fn extract_window(
    raster: &Raster,
    frame_height: usize,
    frame_width: usize,
    window: &Window,
    edge: EdgePolicy,
) -> Vec<f32> {
    let n = window.size;
    let same_res = raster.height() == frame_height && raster.width() == frame_width;
    let map_axis = |start: usize, frame: usize, stored: usize| -> Vec<Option<usize>> {
        (start..start + n)
            .map(|i| {
                let i = if i < frame {
                    Some(i)
                } else if edge == EdgePolicy::PadReflect {
                    Some(reflect(i, frame))
                } else {
                    None
                };
                i.map(|i| if same_res { i } else { i * stored / frame })
            })
            .collect()
    };
    let rows = map_axis(window.row_offset, frame_height, raster.height());
    let cols = map_axis(window.col_offset, frame_width, raster.width());
    let mut out = Vec::with_capacity(n * n);
    for r in &rows {
        match r {
            Some(r) => out.extend(cols.iter().map(|c| match c {
                Some(c) => raster.get(*r, *c),
                None => f32::NAN,
            })),
            None => out.extend(std::iter::repeat_n(f32::NAN, n)),
        }
    }
    out
}

/// Cut the scene's VV/VH into raw windows.
pub fn tile_scene(scene: &Scene, policy: &TilingPolicy) -> Result<Vec<RawWindow>> {
    policy.validate()?;
    let (h, w) = (scene.height(), scene.width());
    Ok(policy
        .windows(h, w)
        .into_iter()
        .map(|window| RawWindow {
            vv: extract_window(&scene.vv, h, w, &window, policy.edge_policy),
            vh: extract_window(&scene.vh, h, w, &window, policy.edge_policy),
            window,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    #[error("all valid cells share one value")]
    Constant,
    #[error("no valid cells")]
    NoValidCells,
}

/// A channel scaled to [0, 1]; invalid cells hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedChannel {
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
}

/// Min-max scale the cells that are finite and above `nodata`.
pub fn min_max_normalize(values: &[f32], nodata: f32) -> Result<NormalizedChannel, Degenerate> {
    let valid: Vec<bool> = values.iter().map(|v| v.is_finite() && *v > nodata).collect();
    normalize_masked(values, valid)
}

fn normalize_masked(values: &[f32], valid: Vec<bool>) -> Result<NormalizedChannel, Degenerate> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&v, &ok) in values.iter().zip(&valid) {
        if ok {
            lo = lo.min(f64::from(v));
            hi = hi.max(f64::from(v));
        }
    }
    if lo > hi {
        return Err(Degenerate::NoValidCells);
    }
    if lo == hi {
        return Err(Degenerate::Constant);
    }
    let span = hi - lo;
    let values = values
        .iter()
        .zip(&valid)
        .map(|(&v, &ok)| if ok { ((f64::from(v) - lo) / span) as f32 } else { 0.0 })
        .collect();
    Ok(NormalizedChannel { values, valid })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FuseError {
    #[error("scene has no `{0}` auxiliary channel")]
    MissingAuxiliary(AuxChannel),
    #[error("{channel} channel is degenerate: {kind}")]
    Degenerate { channel: String, kind: Degenerate },
}

fn elementwise_mean(inputs: &[&NormalizedChannel]) -> (Vec<f32>, Vec<bool>) {
    let n = inputs[0].values.len();
    let k = inputs.len() as f64;
    let mut values = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let ok = inputs.iter().all(|c| c.valid[i]);
        let sum: f64 = inputs.iter().map(|c| f64::from(c.values[i])).sum();
        values.push(if ok { (sum / k) as f32 } else { 0.0 });
        valid.push(ok);
    }
    (values, valid)
}

/// Build the third channel from normalized VV/VH and the normalized
/// auxiliaries listed by `method` (in the same order).
///
/// `MeanVvVh` is left as is; every other method is re-normalized.
pub fn fuse_third_channel(
    vv: &NormalizedChannel,
    vh: &NormalizedChannel,
    auxiliaries: &[NormalizedChannel],
    method: &FusionMethod,
) -> Result<NormalizedChannel, FuseError> {
    let degenerate = |kind| FuseError::Degenerate {
        channel: "fused".into(),
        kind,
    };
    match method {
        FusionMethod::MeanVvVh => {
            let (values, valid) = elementwise_mean(&[vv, vh]);
            Ok(NormalizedChannel { values, valid })
        }
        FusionMethod::DiffVvVh => {
            let valid: Vec<bool> = vv.valid.iter().zip(&vh.valid).map(|(a, b)| *a && *b).collect();
            let diff: Vec<f32> = vv
                .values
                .iter()
                .zip(&vh.values)
                .zip(&valid)
                .map(|((a, b), ok)| if *ok { a - b } else { 0.0 })
                .collect();
            normalize_masked(&diff, valid).map_err(degenerate)
        }
        FusionMethod::SingleAuxiliary(_) => Ok(auxiliaries[0].clone()),
        FusionMethod::MeanAuxiliaries(_) => {
            let refs: Vec<&NormalizedChannel> = auxiliaries.iter().collect();
            let (values, valid) = elementwise_mean(&refs);
            normalize_masked(&values, valid).map_err(degenerate)
        }
        FusionMethod::MeanAll(_) => {
            let refs: Vec<&NormalizedChannel> = [vv, vh].into_iter().chain(auxiliaries).collect();
            let (values, valid) = elementwise_mean(&refs);
            normalize_masked(&values, valid).map_err(degenerate)
        }
    }
}

/// Assemble a patch: channel 0 = VV, 1 = VH, 2 = fused. Required
/// auxiliaries are cut from `scene`, upsampled by nearest neighbour and
/// normalized before fusion.
pub fn fuse_channels(
    vv: NormalizedChannel,
    vh: NormalizedChannel,
    scene: &Scene,
    window: &Window,
    edge: EdgePolicy,
    method: &FusionMethod,
) -> Result<Patch, FuseError> {
    let mut auxiliaries = Vec::new();
    for channel in method.required_auxiliaries() {
        let raster = scene
            .auxiliaries
            .get(&channel)
            .ok_or(FuseError::MissingAuxiliary(channel))?;
        let samples = extract_window(raster, scene.height(), scene.width(), window, edge);
        let normalized = min_max_normalize(&samples, raster.nodata()).map_err(|kind| FuseError::Degenerate {
            channel: channel.name().into(),
            kind,
        })?;
        auxiliaries.push(normalized);
    }
    let third = fuse_third_channel(&vv, &vh, &auxiliaries, method)?;
    let valid = (0..vv.valid.len())
        .map(|i| vv.valid[i] && vh.valid[i] && third.valid[i])
        .collect();
    Ok(Patch {
        scene_id: scene.scene_id.clone(),
        row_offset: window.row_offset,
        col_offset: window.col_offset,
        size: window.size,
        channels: [vv.values, vh.values, third.values],
        valid,
        channel_spec: method.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    Constant,
    NoValidCells,
    MissingAuxiliary,
}

/// A window that produced no patch.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiscardEntry {
    pub scene_id: String,
    pub row_offset: usize,
    pub col_offset: usize,
    pub size: usize,
    /// Channel that failed: `vv`, `vh`, `fused` or an auxiliary name.
    pub channel: String,
    pub reason: DiscardReason,
}

impl DiscardEntry {
    pub fn patch_ref(&self) -> PatchRef {
        PatchRef {
            scene_id: self.scene_id.clone(),
            row_offset: self.row_offset,
            col_offset: self.col_offset,
            size: self.size,
        }
    }
}

pub type PatchOutcome = std::result::Result<Patch, DiscardEntry>;

fn process_window(scene: &Scene, window: &Window, policy: &TilingPolicy, method: &FusionMethod) -> PatchOutcome {
    let discard = |channel: &str, reason| DiscardEntry {
        scene_id: scene.scene_id.clone(),
        row_offset: window.row_offset,
        col_offset: window.col_offset,
        size: window.size,
        channel: channel.to_string(),
        reason,
    };
    let from_degenerate = |kind: Degenerate| match kind {
        Degenerate::Constant => DiscardReason::Constant,
        Degenerate::NoValidCells => DiscardReason::NoValidCells,
    };
    let (h, w) = (scene.height(), scene.width());
    let mut normalized = Vec::with_capacity(2);
    for (name, raster) in [("vv", &scene.vv), ("vh", &scene.vh)] {
        let samples = extract_window(raster, h, w, window, policy.edge_policy);
        match min_max_normalize(&samples, raster.nodata()) {
            Ok(c) => normalized.push(c),
            Err(kind) => return Err(discard(name, from_degenerate(kind))),
        }
    }
    let vh = normalized.pop().expect("vh normalized");
    let vv = normalized.pop().expect("vv normalized");
    fuse_channels(vv, vh, scene, window, policy.edge_policy, method).map_err(|e| match e {
        FuseError::MissingAuxiliary(a) => discard(a.name(), DiscardReason::MissingAuxiliary),
        FuseError::Degenerate { channel, kind } => discard(&channel, from_degenerate(kind)),
    })
}

/// Stream patch outcomes in `(row_offset, col_offset)` order.
///
/// Windows of one tile row are processed in parallel on the current rayon
/// pool, so at most one row of patches is held in memory.
pub fn for_each_patch<F>(scene: &Scene, policy: &TilingPolicy, method: &FusionMethod, mut sink: F) -> Result<()>
where
    F: FnMut(PatchOutcome) -> Result<()>,
{
    policy.validate()?;
    method.validate()?;
    let windows = policy.windows(scene.height(), scene.width());
    let missing = method
        .required_auxiliaries()
        .into_iter()
        .find(|a| !scene.auxiliaries.contains_key(a));
    if let Some(channel) = missing {
        for window in windows {
            sink(Err(DiscardEntry {
                scene_id: scene.scene_id.clone(),
                row_offset: window.row_offset,
                col_offset: window.col_offset,
                size: window.size,
                channel: channel.name().into(),
                reason: DiscardReason::MissingAuxiliary,
            }))?;
        }
        return Ok(());
    }
    for band in windows.chunk_by(|a, b| a.row_offset == b.row_offset) {
        let outcomes: Vec<PatchOutcome> = band
            .par_iter()
            .map(|window| process_window(scene, window, policy, method))
            .collect();
        for outcome in outcomes {
            sink(outcome)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct PreprocessOutput {
    pub patches: Vec<Patch>,
    pub discards: Vec<DiscardEntry>,
}

/// Tile, normalize and fuse a whole scene.
pub fn preprocess_scene(scene: &Scene, policy: &TilingPolicy, method: &FusionMethod) -> Result<PreprocessOutput> {
    let mut out = PreprocessOutput::default();
    for_each_patch(scene, policy, method, |outcome| {
        match outcome {
            Ok(p) => out.patches.push(p),
            Err(d) => out.discards.push(d),
        }
        Ok(())
    })?;
    Ok(out)
}

/// One line of `patches.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchIndexEntry {
    pub scene_id: String,
    pub row_offset: usize,
    pub col_offset: usize,
    pub size: usize,
    pub file: String,
    pub channel_spec: String,
    pub valid_fraction: f64,
}

/// Write the patch as raw little-endian `f32`, channel-major
/// (`3 x size x size`), and return its index line.
pub fn write_patch(patch: &Patch, dir: &Path) -> Result<PatchIndexEntry> {
    let patch_ref = patch.patch_ref();
    let file = patch_ref.file_name();
    let path = dir.join(&file);
    let mut bytes = Vec::with_capacity(3 * patch.size * patch.size * 4);
    for channel in &patch.channels {
        for v in channel {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    let valid = patch.valid.iter().filter(|v| **v).count();
    Ok(PatchIndexEntry {
        scene_id: patch.scene_id.clone(),
        row_offset: patch.row_offset,
        col_offset: patch.col_offset,
        size: patch.size,
        file,
        channel_spec: patch.channel_spec.to_string(),
        valid_fraction: valid as f64 / patch.valid.len() as f64,
    })
}

/// Inverse of [`write_patch`] for the pixel planes.
pub fn read_patch_planes(path: &Path, size: usize) -> Result<[Vec<f32>; 3]> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 3 * size * size * 4 {
        return Err(Error::InvalidRaster(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            3 * size * size * 4,
            bytes.len()
        )));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let plane = size * size;
    Ok([
        floats[..plane].to_vec(),
        floats[plane..2 * plane].to_vec(),
        floats[2 * plane..].to_vec(),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{synth_scene, SynthSpec};
    use crate::model::DEFAULT_NODATA;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn channel(values: &[f32]) -> NormalizedChannel {
        NormalizedChannel {
            values: values.to_vec(),
            valid: vec![true; values.len()],
        }
    }

    fn noise_scene(w: usize, h: usize, seed: u64) -> Scene {
        synth_scene(&SynthSpec {
            width: w,
            height: h,
            n_targets: 0,
            rng_seed: seed,
            ..SynthSpec::default()
        })
        .unwrap()
        .scene
    }

    #[test]
    fn window_counts_follow_edge_policy() {
        let one = TilingPolicy::default().windows(800, 800);
        assert_eq!(
            one,
            vec![Window {
                row_offset: 0,
                col_offset: 0,
                size: 800
            }]
        );
        let reflect = TilingPolicy::new(800, EdgePolicy::PadReflect);
        assert_eq!(reflect.windows(1700, 2000).len(), 9);
        let drop = TilingPolicy::new(800, EdgePolicy::DropPartial);
        assert_eq!(drop.windows(1700, 2000).len(), 4);
        assert!(drop.windows(500, 500).is_empty());
        let overlap = TilingPolicy {
            patch_size: 10,
            stride: 4,
            edge_policy: EdgePolicy::PadZero,
        };
        assert_eq!(overlap.axis_offsets(18), vec![0, 4, 8]);
        assert_eq!(overlap.axis_offsets(19), vec![0, 4, 8, 12]);
    }

    #[test]
    fn invalid_stride_rejected() {
        let p = TilingPolicy {
            patch_size: 10,
            stride: 11,
            edge_policy: EdgePolicy::PadZero,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn normalize_affine() {
        let out = min_max_normalize(&[2.0, 4.0, 6.0], DEFAULT_NODATA).unwrap();
        assert_eq!(out.values, vec![0.0, 0.5, 1.0]);
        assert!(out.valid.iter().all(|v| *v));
    }

    #[test]
    fn normalize_degenerate_cases() {
        assert_eq!(min_max_normalize(&[5.0; 4], DEFAULT_NODATA), Err(Degenerate::Constant));
        assert_eq!(
            min_max_normalize(&[DEFAULT_NODATA, -40000.0, f32::NAN], DEFAULT_NODATA),
            Err(Degenerate::NoValidCells)
        );
    }

    #[test]
    fn normalize_masks_missing_cells() {
        let out = min_max_normalize(&[1.0, DEFAULT_NODATA, 3.0, f32::NAN], DEFAULT_NODATA).unwrap();
        assert_eq!(out.values, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(out.valid, vec![true, false, true, false]);
    }

    #[test]
    fn mean_of_equal_channels_is_identity() {
        let vv = channel(&[0.0, 0.3, 1.0, 0.7]);
        let out = fuse_third_channel(&vv, &vv, &[], &FusionMethod::MeanVvVh).unwrap();
        assert_eq!(out.values, vv.values);
    }

    #[test]
    fn diff_of_equal_channels_is_degenerate() {
        let vv = channel(&[0.0, 0.3, 1.0, 0.7]);
        let err = fuse_third_channel(&vv, &vv, &[], &FusionMethod::DiffVvVh).unwrap_err();
        assert_eq!(
            err,
            FuseError::Degenerate {
                channel: "fused".into(),
                kind: Degenerate::Constant
            }
        );
    }

    #[test]
    fn mean_vv_vh_is_not_renormalized() {
        let out = fuse_third_channel(
            &channel(&[0.0, 1.0]),
            &channel(&[1.0, 0.0]),
            &[],
            &FusionMethod::MeanVvVh,
        )
        .unwrap();
        assert_eq!(out.values, vec![0.5, 0.5]);
    }

    #[test]
    fn diff_is_renormalized() {
        let out = fuse_third_channel(
            &channel(&[0.0, 1.0, 0.5]),
            &channel(&[1.0, 0.0, 0.5]),
            &[],
            &FusionMethod::DiffVvVh,
        )
        .unwrap();
        assert_eq!(out.values, vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn mean_all_averages_then_rescales() {
        let vv = channel(&[0.0, 1.0]);
        let vh = channel(&[0.0, 1.0]);
        let aux = channel(&[1.0, 0.0]);
        // means: [1/3, 2/3] -> rescaled [0, 1]
        let out = fuse_third_channel(&vv, &vh, &[aux], &FusionMethod::MeanAll(vec![AuxChannel::Bathymetry])).unwrap();
        assert_eq!(out.values, vec![0.0, 1.0]);
    }

    #[test]
    fn reflect_padding_mirrors_without_repeating_edge() {
        let r = Raster::new(3, 1, 10.0, DEFAULT_NODATA, vec![1.0, 2.0, 3.0]).unwrap();
        let win = Window {
            row_offset: 0,
            col_offset: 0,
            size: 6,
        };
        let reflected = extract_window(&r, 1, 3, &win, EdgePolicy::PadReflect);
        assert_eq!(&reflected[..6], &[1.0, 2.0, 3.0, 2.0, 1.0, 2.0]);
        let zero = extract_window(&r, 1, 3, &win, EdgePolicy::PadZero);
        assert_eq!(&zero[..3], &[1.0, 2.0, 3.0]);
        assert!(zero[3..].iter().all(|v| v.is_nan()));
    }

    #[test]
    fn auxiliary_upsampling_is_nearest_neighbour() {
        let aux = Raster::new(2, 2, 40.0, DEFAULT_NODATA, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let win = Window {
            row_offset: 0,
            col_offset: 0,
            size: 4,
        };
        let out = extract_window(&aux, 4, 4, &win, EdgePolicy::PadZero);
        assert_eq!(
            out,
            vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn fusion_method_strings() {
        for s in [
            "mean-vv-vh",
            "diff-vv-vh",
            "single-aux:bathymetry",
            "mean-aux:wind_speed,wind_quality",
            "mean-all:land_ice_mask",
        ] {
            let m: FusionMethod = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert_eq!(
            "mean-aux".parse::<FusionMethod>().unwrap(),
            FusionMethod::MeanAuxiliaries(AuxChannel::ALL.to_vec())
        );
        assert!("single-aux".parse::<FusionMethod>().is_err());
        assert!("median".parse::<FusionMethod>().is_err());
    }

    #[test]
    fn flat_tile_is_discarded_others_kept() {
        let mut scene = noise_scene(256, 192, 3);
        scene.vv.fill_rect(64, 128, 64, 64, 7.0);
        let policy = TilingPolicy::new(64, EdgePolicy::PadZero);
        let out = preprocess_scene(&scene, &policy, &FusionMethod::MeanVvVh).unwrap();
        assert_eq!(out.discards.len(), 1);
        let d = &out.discards[0];
        assert_eq!(
            (d.row_offset, d.col_offset, d.reason),
            (64, 128, DiscardReason::Constant)
        );
        assert_eq!(d.channel, "vv");
        assert_eq!(out.patches.len(), 3 * 4 - 1);
    }

    #[test]
    fn noise_scene_has_no_discards() {
        let scene = noise_scene(300, 260, 11);
        let out = preprocess_scene(
            &scene,
            &TilingPolicy::new(128, EdgePolicy::PadZero),
            &FusionMethod::MeanVvVh,
        )
        .unwrap();
        assert!(out.discards.is_empty());
        assert_eq!(out.patches.len(), 9);
        for p in &out.patches {
            for c in &p.channels {
                assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn missing_auxiliaries_discard_every_tile() {
        let scene = noise_scene(200, 200, 1);
        assert!(scene.auxiliaries.is_empty());
        let method = FusionMethod::MeanAuxiliaries(AuxChannel::ALL.to_vec());
        let out = preprocess_scene(&scene, &TilingPolicy::new(100, EdgePolicy::PadZero), &method).unwrap();
        assert!(out.patches.is_empty());
        assert_eq!(out.discards.len(), 4);
        assert!(out.discards.iter().all(|d| d.reason == DiscardReason::MissingAuxiliary));
    }

    #[test]
    fn auxiliary_fusions_run_on_low_resolution_layers() {
        let scene = synth_scene(&SynthSpec {
            width: 256,
            height: 256,
            n_targets: 3,
            min_separation_px: 20.0,
            aux_downsample: Some(8),
            ..SynthSpec::default()
        })
        .unwrap()
        .scene;
        let policy = TilingPolicy::new(128, EdgePolicy::PadZero);
        for method in [
            FusionMethod::SingleAuxiliary(AuxChannel::WindSpeed),
            FusionMethod::MeanAuxiliaries(vec![AuxChannel::Bathymetry, AuxChannel::WindDirection]),
            FusionMethod::MeanAll(vec![AuxChannel::WindSpeed]),
        ] {
            let out = preprocess_scene(&scene, &policy, &method).unwrap();
            assert_eq!(out.patches.len(), 4, "{method}");
        }
        // the land mask is constant away from the coast
        let out = preprocess_scene(&scene, &policy, &FusionMethod::SingleAuxiliary(AuxChannel::LandIceMask)).unwrap();
        assert!(out
            .discards
            .iter()
            .all(|d| d.channel == "land_ice_mask" && d.reason == DiscardReason::Constant));
        assert!(!out.discards.is_empty());
    }

    #[test]
    fn output_is_independent_of_pool_size() {
        let scene = noise_scene(333, 257, 5);
        let policy = TilingPolicy::new(64, EdgePolicy::PadReflect);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| preprocess_scene(&scene, &policy, &FusionMethod::DiffVvVh).unwrap())
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a.patches, b.patches);
        assert_eq!(a.discards, b.discards);
    }

    #[test]
    fn patch_file_round_trip() {
        let scene = noise_scene(40, 40, 2);
        let out = preprocess_scene(
            &scene,
            &TilingPolicy::new(40, EdgePolicy::PadZero),
            &FusionMethod::MeanVvVh,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let entry = write_patch(&out.patches[0], dir.path()).unwrap();
        assert_eq!(entry.valid_fraction, 1.0);
        let planes = read_patch_planes(&dir.path().join(&entry.file), 40).unwrap();
        assert_eq!(planes, out.patches[0].channels);
    }

    proptest! {
        #[test]
        fn mean_fusion_is_symmetric(pairs in proptest::collection::vec((0.0f32..=1.0, 0.0f32..=1.0), 1..64)) {
            let a = channel(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            let b = channel(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
            let ab = fuse_third_channel(&a, &b, &[], &FusionMethod::MeanVvVh).unwrap();
            let ba = fuse_third_channel(&b, &a, &[], &FusionMethod::MeanVvVh).unwrap();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn padded_windows_cover_each_pixel_once(h in 1usize..90, w in 1usize..90, p in 1usize..40, reflect in any::<bool>()) {
            let edge = if reflect { EdgePolicy::PadReflect } else { EdgePolicy::PadZero };
            let policy = TilingPolicy::new(p, edge);
            let windows = policy.windows(h, w);
            prop_assert_eq!(windows.len(), h.div_ceil(p) * w.div_ceil(p));
            let mut hits = vec![0u8; h * w];
            for win in &windows {
                prop_assert_eq!(win.row_offset % p, 0);
                prop_assert_eq!(win.col_offset % p, 0);
                for r in win.row_offset..(win.row_offset + p).min(h) {
                    for c in win.col_offset..(win.col_offset + p).min(w) {
                        hits[r * w + c] += 1;
                    }
                }
            }
            prop_assert!(hits.iter().all(|&n| n == 1));
        }

        #[test]
        fn normalized_values_in_unit_interval(values in proptest::collection::vec(-1e6f32..1e6, 2..100)) {
            if let Ok(out) = min_max_normalize(&values, DEFAULT_NODATA) {
                prop_assert!(out.values.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn scene_auxiliary_map_can_be_empty() {
        let scene = Scene::new(
            "x",
            Raster::filled(4, 4, 1.0).unwrap(),
            Raster::filled(4, 4, 1.0).unwrap(),
            BTreeMap::new(),
            None,
        )
        .unwrap();
        let raw = tile_scene(&scene, &TilingPolicy::new(4, EdgePolicy::PadZero)).unwrap();
        assert_eq!(raw.len(), 1);
        assert_eq!(raw[0].vv, vec![1.0; 16]);
    }
}
