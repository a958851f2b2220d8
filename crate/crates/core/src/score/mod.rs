//! Point-matching scorer: detection, close-to-shore, vessel and fishing F1
//! plus the combined Avg-F1.
//!
//! Counts are pooled across scenes before any F1 is computed.

mod matching;
mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{load_scene_context, read_labels_file, read_predictions_file, DatasetManifest, SceneContext};
use crate::model::{
    Confidence, Counts, DetectionRecord, LabelRecord, MetricCounts, MetricsReport, ReportSettings, SceneScore,
};

pub use matching::{hungarian, match_detections, match_points, MatchPair, MatchResult};
pub use metrics::{avg_f1, fbeta, fbeta_counts};

pub const SHORE_RULE: &str = "TP and FN use the label's distance_from_shore_km; \
FP uses the shore-distance raster sampled at the prediction pixel";
pub const CLASSIFICATION_RULE: &str = "vessel and fishing F1 are computed over matched pairs only; \
fishing is restricted to pairs whose label is a vessel";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub match_radius_m: f64,
    pub shore_threshold_km: f64,
    pub beta: f64,
    pub min_confidence_gt: Confidence,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            match_radius_m: 200.0,
            shore_threshold_km: 2.0,
            beta: 1.0,
            min_confidence_gt: Confidence::High,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_radius_m.is_finite() && self.match_radius_m > 0.0) {
            return Err(Error::Config(format!(
                "match_radius_m must be positive, got {}",
                self.match_radius_m
            )));
        }
        if !(self.shore_threshold_km.is_finite() && self.shore_threshold_km >= 0.0) {
            return Err(Error::Config(format!(
                "shore_threshold_km must be non-negative, got {}",
                self.shore_threshold_km
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn settings(&self) -> ReportSettings {
        ReportSettings {
            match_radius_m: self.match_radius_m,
            shore_threshold_km: self.shore_threshold_km,
            beta: self.beta,
            min_confidence_gt: self.min_confidence_gt,
            shore_rule: SHORE_RULE.into(),
            classification_rule: CLASSIFICATION_RULE.into(),
        }
    }
}

/// Matching outcome of one scene together with the records it indexes.
///
/// `matches` only pairs predictions with scoreable labels. Predictions that
/// fall on a below-threshold label are listed in `ignored_predictions` and
/// count neither as hits nor as false alarms.
#[derive(Debug, Clone)]
pub struct SceneMatch<'a> {
    pub context: &'a SceneContext,
    pub predictions: Vec<&'a DetectionRecord>,
    pub labels: Vec<&'a LabelRecord>,
    pub scoreable: Vec<bool>,
    pub matches: MatchResult,
    pub ignored_predictions: Vec<usize>,
}

impl<'a> SceneMatch<'a> {
    pub fn new(
        context: &'a SceneContext,
        predictions: Vec<&'a DetectionRecord>,
        labels: Vec<&'a LabelRecord>,
        config: &ScoreConfig,
    ) -> Self {
        let spacing = context.geometry.pixel_spacing_m;
        let scoreable: Vec<bool> = labels
            .iter()
            .map(|l| l.confidence >= config.min_confidence_gt)
            .collect();
        let pred_pts: Vec<(f64, f64)> = predictions.iter().map(|d| (d.row, d.col)).collect();
        let (keep, skip): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| scoreable[i]);
        let pt = |i: &usize| (labels[*i].row as f64, labels[*i].col as f64);

        let first = match_points(
            &pred_pts,
            &keep.iter().map(pt).collect::<Vec<_>>(),
            spacing,
            config.match_radius_m,
        );
        let mut matches = MatchResult {
            pairs: first
                .pairs
                .iter()
                .map(|p| MatchPair {
                    label: keep[p.label],
                    ..*p
                })
                .collect(),
            unmatched_predictions: Vec::new(),
            unmatched_labels: first.unmatched_labels.iter().map(|&i| keep[i]).collect(),
        };
        matches.pairs.sort_by_key(|p| (p.label, p.prediction));

        // leftover predictions sitting on low-confidence labels are neutral
        let leftover = &first.unmatched_predictions;
        let second = match_points(
            &leftover.iter().map(|&i| pred_pts[i]).collect::<Vec<_>>(),
            &skip.iter().map(pt).collect::<Vec<_>>(),
            spacing,
            config.match_radius_m,
        );
        let mut ignored: Vec<usize> = second.pairs.iter().map(|p| leftover[p.prediction]).collect();
        ignored.sort_unstable();
        matches.unmatched_predictions = second.unmatched_predictions.iter().map(|&i| leftover[i]).collect();

        SceneMatch {
            context,
            predictions,
            labels,
            scoreable,
            matches,
            ignored_predictions: ignored,
        }
    }

    fn matched(&self) -> impl Iterator<Item = (&'a DetectionRecord, &'a LabelRecord)> + '_ {
        self.matches
            .pairs
            .iter()
            .map(|p| (self.predictions[p.prediction], self.labels[p.label]))
    }

    fn label_near_shore(&self, label: &LabelRecord, threshold_km: f64) -> bool {
        match label.distance_from_shore_km {
            Some(d) => d <= threshold_km,
            None => self
                .sample_shore(label.row as f64, label.col as f64)
                .is_some_and(|d| d <= threshold_km),
        }
    }

    fn sample_shore(&self, row: f64, col: f64) -> Option<f64> {
        let g = &self.context.geometry;
        self.context
            .shore_distance
            .as_ref()
            .and_then(|r| r.sample_in_frame(row, col, g.height, g.width))
            .map(f64::from)
    }
}

pub fn detection_counts(scene: &SceneMatch<'_>) -> Counts {
    Counts {
        tp: scene.matches.pairs.len() as u64,
        fp: scene.matches.unmatched_predictions.len() as u64,
        fn_: scene.matches.unmatched_labels.len() as u64,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ShoreCounts {
    pub counts: Counts,
    /// Unmatched predictions with no shore distance available.
    pub unresolved: u64,
}

pub fn shore_counts(scene: &SceneMatch<'_>, config: &ScoreConfig) -> ShoreCounts {
    let t = config.shore_threshold_km;
    let mut out = ShoreCounts::default();
    for (_, label) in scene.matched() {
        if scene.label_near_shore(label, t) {
            out.counts.tp += 1;
        }
    }
    for &li in &scene.matches.unmatched_labels {
        if scene.label_near_shore(scene.labels[li], t) {
            out.counts.fn_ += 1;
        }
    }
    for &pi in &scene.matches.unmatched_predictions {
        let d = scene.predictions[pi];
        match scene.sample_shore(d.row, d.col) {
            Some(km) if km <= t => out.counts.fp += 1,
            Some(_) => {}
            None => out.unresolved += 1,
        }
    }
    out
}

fn binary_counts(pairs: impl Iterator<Item = (bool, bool)>) -> Counts {
    let mut c = Counts::default();
    for (pred, truth) in pairs {
        match (pred, truth) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

/// Vessel vs non-vessel over matched pairs with a known label flag.
pub fn vessel_counts(pairs: &[(&DetectionRecord, &LabelRecord)]) -> Counts {
    binary_counts(pairs.iter().filter_map(|(d, l)| l.is_vessel.map(|v| (d.is_vessel, v))))
}

/// Fishing vs non-fishing over matched pairs whose label is a vessel with a
/// known fishing flag.
pub fn fishing_counts(pairs: &[(&DetectionRecord, &LabelRecord)]) -> Counts {
    binary_counts(pairs.iter().filter_map(|(d, l)| match (l.is_vessel, l.is_fishing) {
        (Some(true), Some(f)) => Some((d.is_fishing, f)),
        _ => None,
    }))
}

pub fn f1_detection(scenes: &[SceneMatch<'_>], config: &ScoreConfig) -> (f64, Counts) {
    let counts = scenes
        .iter()
        .map(detection_counts)
        .fold(Counts::default(), |a, b| a + b);
    (fbeta_counts(&counts, config.beta), counts)
}

/// Returns `(f1_s, counts, computable)`. Not computable when any unmatched
/// prediction lacks a shore distance; those predictions are left out of FP.
pub fn f1_shore(scenes: &[SceneMatch<'_>], config: &ScoreConfig) -> (f64, ShoreCounts, bool) {
    let mut total = ShoreCounts::default();
    for s in scenes {
        let c = shore_counts(s, config);
        total.counts += c.counts;
        total.unresolved += c.unresolved;
    }
    (fbeta_counts(&total.counts, config.beta), total, total.unresolved == 0)
}

pub fn f1_vessel(pairs: &[(&DetectionRecord, &LabelRecord)], beta: f64) -> (f64, Counts) {
    let c = vessel_counts(pairs);
    (fbeta_counts(&c, beta), c)
}

pub fn f1_fishing(pairs: &[(&DetectionRecord, &LabelRecord)], beta: f64) -> (f64, Counts) {
    let c = fishing_counts(pairs);
    (fbeta_counts(&c, beta), c)
}

fn scene_counts(scene: &SceneMatch<'_>, config: &ScoreConfig) -> (MetricCounts, u64) {
    let pairs: Vec<_> = scene.matched().collect();
    let shore = shore_counts(scene, config);
    let counts = MetricCounts {
        detection: detection_counts(scene),
        shore: shore.counts,
        vessel: vessel_counts(&pairs),
        fishing: fishing_counts(&pairs),
    };
    (counts, shore.unresolved)
}

fn f1s(counts: &MetricCounts, beta: f64) -> [f64; 5] {
    let d = fbeta_counts(&counts.detection, beta);
    let s = fbeta_counts(&counts.shore, beta);
    let v = fbeta_counts(&counts.vessel, beta);
    let f = fbeta_counts(&counts.fishing, beta);
    [d, s, v, f, avg_f1(d, s, v, f)]
}

/// Score in-memory records against the given scenes.
///
/// Labels for scenes outside `scenes` are ignored; predictions for such
/// scenes are an error. Runs scene matching on the current rayon pool.
pub fn score_records(
    predictions: &[DetectionRecord],
    labels: &[LabelRecord],
    scenes: &[SceneContext],
    config: &ScoreConfig,
) -> Result<MetricsReport> {
    config.validate()?;
    let mut by_scene: BTreeMap<&str, (&SceneContext, Vec<&DetectionRecord>, Vec<&LabelRecord>)> = BTreeMap::new();
    for ctx in scenes {
        if by_scene.insert(&ctx.scene_id, (ctx, Vec::new(), Vec::new())).is_some() {
            return Err(Error::Manifest(format!("duplicate scene id `{}`", ctx.scene_id)));
        }
    }
    for d in predictions {
        d.check()?;
        let slot = by_scene
            .get_mut(d.scene_id.as_str())
            .ok_or_else(|| Error::UnknownScene(d.scene_id.clone()))?;
        let g = &slot.0.geometry;
        if !(d.row >= 0.0 && d.col >= 0.0 && d.row < g.height as f64 && d.col < g.width as f64) {
            return Err(Error::InvalidLabel(format!(
                "prediction ({}, {}) lies outside the {}x{} scene {}",
                d.row, d.col, g.width, g.height, d.scene_id
            )));
        }
        slot.1.push(d);
    }
    let mut skipped = 0usize;
    for l in labels {
        match by_scene.get_mut(l.scene_id.as_str()) {
            Some(slot) => {
                l.check_in_scene(&slot.0.geometry)?;
                slot.2.push(l);
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        tracing::warn!(skipped, "labels reference scenes missing from the manifest");
    }

    let groups: Vec<_> = by_scene.into_values().collect();
    let per_scene: Vec<(String, MetricCounts, u64)> = groups
        .into_par_iter()
        .map(|(ctx, preds, labs)| {
            let m = SceneMatch::new(ctx, preds, labs, config);
            let (counts, unresolved) = scene_counts(&m, config);
            (ctx.scene_id.clone(), counts, unresolved)
        })
        .collect();

    let mut total = MetricCounts::default();
    let mut unresolved = 0;
    let mut scenes_out = BTreeMap::new();
    for (id, counts, u) in per_scene {
        total += counts;
        unresolved += u;
        let [f1_d, f1_s, f1_v, f1_f, avg] = f1s(&counts, config.beta);
        scenes_out.insert(
            id,
            SceneScore {
                f1_d,
                f1_s,
                f1_v,
                f1_f,
                avg_f1: avg,
                counts,
                f1_s_computable: u == 0,
                shore_fp_unresolved: u,
            },
        );
    }
    let [f1_d, f1_s, f1_v, f1_f, avg] = f1s(&total, config.beta);
    Ok(MetricsReport {
        f1_d,
        f1_s,
        f1_v,
        f1_f,
        avg_f1: avg,
        counts: total,
        f1_s_computable: unresolved == 0,
        shore_fp_unresolved: unresolved,
        per_scene: scenes_out,
        settings: config.settings(),
    })
}

/// Load a manifest and both CSV files, then score.
pub fn score_run(
    predictions_path: &Path,
    labels_path: &Path,
    manifest_path: &Path,
    config: &ScoreConfig,
) -> Result<MetricsReport> {
    config.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let contexts = manifest
        .scenes
        .par_iter()
        .map(load_scene_context)
        .collect::<Result<Vec<_>>>()?;
    let predictions = read_predictions_file(predictions_path)?;
    let labels = read_labels_file(labels_path)?;
    score_records(&predictions, &labels, &contexts, config)
}

/// Plain-text metric table with one row per run name.
pub fn format_table(rows: &[(&str, &MetricsReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
        "Method", "F1_D", "F1_S", "F1_V", "F1_F", "Avg-F1"
    );
    let _ = writeln!(out, "{}", "-".repeat(name_w + 50));
    let mut footnote = false;
    for (name, r) in rows {
        let shore = if r.f1_s_computable {
            format!("{:.5}", r.f1_s)
        } else {
            footnote = true;
            format!("{:.5}*", r.f1_s)
        };
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>8.5}  {:>8}  {:>8.5}  {:>8.5}  {:>8.5}",
            name, r.f1_d, shore, r.f1_v, r.f1_f, r.avg_f1
        );
    }
    if footnote {
        let _ = writeln!(
            out,
            "* some false alarms had no shore distance and were left out of F1_S"
        );
    }
    out
}

/// Count breakdown printed under the table.
pub fn format_counts(report: &MetricsReport) -> String {
    let c = &report.counts;
    let mut out = String::new();
    for (name, k) in [
        ("detection", c.detection),
        ("shore", c.shore),
        ("vessel", c.vessel),
        ("fishing", c.fishing),
    ] {
        let _ = writeln!(out, "{name:<10} tp={:<6} fp={:<6} fn={}", k.tp, k.fp, k.fn_);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Raster, SceneGeometry};

    fn ctx(shore: Option<Raster>) -> SceneContext {
        SceneContext {
            scene_id: "s".into(),
            geometry: SceneGeometry {
                width: 100,
                height: 100,
                pixel_spacing_m: 10.0,
            },
            shore_distance: shore,
        }
    }

    fn label(id: &str, row: usize, col: usize, shore_km: f64) -> LabelRecord {
        LabelRecord {
            detect_id: id.into(),
            scene_id: "s".into(),
            row,
            col,
            is_vessel: Some(true),
            is_fishing: Some(true),
            vessel_length_m: None,
            confidence: Confidence::High,
            distance_from_shore_km: Some(shore_km),
            source: "manual".into(),
        }
    }

    fn pred(row: f64, col: f64, vessel: bool, fishing: bool) -> DetectionRecord {
        DetectionRecord {
            scene_id: "s".into(),
            row,
            col,
            is_vessel: vessel,
            is_fishing: fishing,
            score: 1.0,
        }
    }

    /// Shore distance grows by 0.1 km per column from column 0.
    fn gradient() -> Raster {
        let mut r = Raster::filled(100, 100, 0.0).unwrap();
        for row in 0..100 {
            for col in 0..100 {
                r.set(row, col, col as f32 * 0.1);
            }
        }
        r
    }

    #[test]
    fn closed_form_over_small_grid() {
        for tp in 0..=20u64 {
            for fp in 0..=20u64 {
                for fn_ in 0..=20u64 {
                    let expected = if tp + fp + fn_ == 0 {
                        0.0
                    } else {
                        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
                    };
                    assert_eq!(fbeta(tp, fp, fn_, 1.0), expected);
                }
            }
        }
    }

    #[test]
    fn shore_fixture() {
        // three shore labels, one missed; one stray prediction near the shore
        // and one stray far offshore
        let labels = [
            label("a", 10, 5, 0.5),
            label("b", 30, 5, 0.5),
            label("c", 50, 5, 0.5),
            label("d", 70, 80, 8.0),
        ];
        let preds = [
            pred(10.0, 6.0, true, true),
            pred(30.0, 5.0, true, true),
            pred(90.0, 10.0, true, true),
            pred(70.0, 80.0, true, true),
            pred(90.0, 90.0, true, true),
        ];
        let c = ctx(Some(gradient()));
        let m = SceneMatch::new(
            &c,
            preds.iter().collect(),
            labels.iter().collect(),
            &ScoreConfig::default(),
        );
        let s = shore_counts(&m, &ScoreConfig::default());
        assert_eq!(s.counts, Counts { tp: 2, fp: 1, fn_: 1 });
        assert_eq!(s.unresolved, 0);
        assert!((fbeta_counts(&s.counts, 1.0) - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn offshore_labels_give_zero_shore_f1() {
        let labels = vec![label("a", 10, 50, 10.0)];
        let preds = vec![pred(10.0, 50.0, true, true)];
        let r = score_records(&preds, &labels, &[ctx(Some(gradient()))], &ScoreConfig::default()).unwrap();
        assert_eq!(r.counts.shore, Counts::default());
        assert_eq!(r.f1_s, 0.0);
        assert_eq!(r.f1_d, 1.0);
    }

    #[test]
    fn missing_raster_marks_shore_uncomputable() {
        let labels = vec![label("a", 10, 5, 0.5)];
        let preds = vec![pred(10.0, 5.0, true, true), pred(80.0, 80.0, true, true)];
        let r = score_records(&preds, &labels, &[ctx(None)], &ScoreConfig::default()).unwrap();
        assert!(!r.f1_s_computable);
        assert_eq!(r.shore_fp_unresolved, 1);
        assert_eq!(r.counts.shore, Counts { tp: 1, fp: 0, fn_: 0 });

        let r = score_records(&preds[..1], &labels, &[ctx(None)], &ScoreConfig::default()).unwrap();
        assert!(r.f1_s_computable);
        assert_eq!(r.f1_s, 1.0);
    }

    #[test]
    fn vessel_mixed_pairs() {
        let mut not_vessel = label("b", 0, 0, 5.0);
        not_vessel.is_vessel = Some(false);
        not_vessel.is_fishing = None;
        let l = [label("a", 0, 0, 5.0), not_vessel, label("c", 0, 0, 5.0)];
        let d = [
            pred(0.0, 0.0, true, false),
            pred(0.0, 0.0, true, false),
            pred(0.0, 0.0, false, false),
        ];
        let pairs: Vec<_> = d.iter().zip(l.iter()).collect();
        let (f, c) = f1_vessel(&pairs, 1.0);
        assert_eq!(c, Counts { tp: 1, fp: 1, fn_: 1 });
        assert_eq!(f, 0.5);
        assert_eq!(f1_vessel(&[], 1.0).0, 0.0);
    }

    #[test]
    fn fishing_skips_non_vessel_labels() {
        let mut not_vessel = label("b", 0, 0, 5.0);
        not_vessel.is_vessel = Some(false);
        not_vessel.is_fishing = None;
        let l = [label("a", 0, 0, 5.0), not_vessel];
        let d = [pred(0.0, 0.0, true, true), pred(0.0, 0.0, true, true)];
        let pairs: Vec<_> = d.iter().zip(l.iter()).collect();
        assert_eq!(fishing_counts(&pairs), Counts { tp: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn low_confidence_labels_are_neutral() {
        let mut low = label("low", 50, 50, 9.0);
        low.confidence = Confidence::Low;
        let labels = [label("a", 10, 50, 9.0), low];
        let preds = [pred(10.0, 50.0, true, true), pred(50.0, 51.0, true, true)];
        let c = ctx(None);
        let m = SceneMatch::new(
            &c,
            preds.iter().collect(),
            labels.iter().collect(),
            &ScoreConfig::default(),
        );
        assert_eq!(detection_counts(&m), Counts { tp: 1, fp: 0, fn_: 0 });
        assert_eq!(m.ignored_predictions, vec![1]);

        let cfg = ScoreConfig {
            min_confidence_gt: Confidence::Low,
            ..ScoreConfig::default()
        };
        let m = SceneMatch::new(&c, preds.iter().collect(), labels.iter().collect(), &cfg);
        assert_eq!(detection_counts(&m), Counts { tp: 2, fp: 0, fn_: 0 });
    }

    #[test]
    fn unknown_prediction_scene_is_an_error() {
        let mut p = pred(1.0, 1.0, true, true);
        p.scene_id = "other".into();
        let err = score_records(&[p], &[], &[ctx(None)], &ScoreConfig::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownScene(_)));
    }

    #[test]
    fn empty_predictions_score_zero() {
        let labels = vec![label("a", 10, 5, 0.5)];
        let r = score_records(&[], &labels, &[ctx(Some(gradient()))], &ScoreConfig::default()).unwrap();
        assert_eq!(r.f1_d, 0.0);
        assert_eq!(r.avg_f1, 0.0);
        assert_eq!(r.counts.detection.fn_, 1);
    }

    #[test]
    fn micro_average_pools_counts() {
        let mut c2 = ctx(None);
        c2.scene_id = "t".into();
        let mut l2 = label("x", 20, 20, 9.0);
        l2.scene_id = "t".into();
        let labels = vec![label("a", 10, 50, 9.0), l2];
        // scene s: one hit; scene t: one miss and two false alarms
        let mut p2 = pred(80.0, 80.0, true, true);
        p2.scene_id = "t".into();
        let mut p3 = pred(90.0, 10.0, true, true);
        p3.scene_id = "t".into();
        let preds = vec![pred(10.0, 50.0, true, true), p2, p3];
        let r = score_records(&preds, &labels, &[ctx(None), c2], &ScoreConfig::default()).unwrap();
        assert_eq!(r.counts.detection, Counts { tp: 1, fp: 2, fn_: 1 });
        assert!((r.f1_d - 2.0 / 5.0).abs() < 1e-12);
        assert_eq!(r.per_scene["s"].f1_d, 1.0);
        assert_eq!(r.per_scene["t"].f1_d, 0.0);
    }

    #[test]
    fn table_has_header_and_rows() {
        let r = score_records(&[], &[], &[ctx(None)], &ScoreConfig::default()).unwrap();
        let t = format_table(&[("baseline", &r)]);
        let lines: Vec<_> = t.lines().collect();
        assert!(lines[0].contains("F1_D") && lines[0].contains("Avg-F1"));
        assert!(lines[2].starts_with("baseline"));
    }
}
