//! Label and prediction CSV files.
//!
//! Column names follow the dataset convention. Extra columns are ignored,
//! blank optional fields become `None`, booleans accept
//! `true/false/True/False/1/0` and are written as lowercase `true/false`.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{Confidence, DetectionRecord, LabelRecord};

pub const LABEL_COLUMNS: [&str; 10] = [
    "detect_id",
    "scene_id",
    "detect_scene_row",
    "detect_scene_column",
    "is_vessel",
    "is_fishing",
    "vessel_length_m",
    "confidence",
    "distance_from_shore_km",
    "source",
];

const LABEL_REQUIRED: [&str; 5] = [
    "detect_id",
    "scene_id",
    "detect_scene_row",
    "detect_scene_column",
    "confidence",
];

pub const PREDICTION_COLUMNS: [&str; 6] = [
    "scene_id",
    "detect_scene_row",
    "detect_scene_column",
    "is_vessel",
    "is_fishing",
    "score",
];

const PREDICTION_REQUIRED: [&str; 3] = ["scene_id", "detect_scene_row", "detect_scene_column"];

struct Columns(HashMap<String, usize>);

impl Columns {
    fn from_headers(headers: &csv::StringRecord, required: &[&str]) -> Result<Self> {
        let map: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().trim_start_matches('\u{feff}').to_string(), i))
            .collect();
        if let Some(missing) = required.iter().find(|c| !map.contains_key(**c)) {
            return Err(Error::CsvSchema((*missing).to_string()));
        }
        Ok(Self(map))
    }

    fn field<'r>(&self, record: &'r csv::StringRecord, name: &str) -> Option<&'r str> {
        self.0
            .get(name)
            .and_then(|&i| record.get(i))
            .map(str::trim)
            .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("nan"))
    }
}

struct RowCtx {
    row: usize,
}

impl RowCtx {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::RowParse {
            row: self.row,
            message: message.into(),
        }
    }

    fn required<'a>(&self, value: Option<&'a str>, name: &str) -> Result<&'a str> {
        value.ok_or_else(|| self.err(format!("`{name}` is blank")))
    }

    fn index(&self, value: Option<&str>, name: &str) -> Result<usize> {
        let s = self.required(value, name)?;
        if let Ok(v) = s.parse::<usize>() {
            return Ok(v);
        }
        match s.parse::<f64>() {
            Ok(f) if f >= 0.0 && f.fract() == 0.0 && f < usize::MAX as f64 => Ok(f as usize),
            _ => Err(self.err(format!("`{name}` is not a pixel index: `{s}`"))),
        }
    }

    fn float(&self, value: Option<&str>, name: &str) -> Result<Option<f64>> {
        value
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|f| f.is_finite())
                    .ok_or_else(|| self.err(format!("`{name}` is not a number: `{s}`")))
            })
            .transpose()
    }

    fn boolean(&self, value: Option<&str>, name: &str) -> Result<Option<bool>> {
        value
            .map(|s| match s {
                "1" => Ok(true),
                "0" => Ok(false),
                _ if s.eq_ignore_ascii_case("true") => Ok(true),
                _ if s.eq_ignore_ascii_case("false") => Ok(false),
                _ => Err(self.err(format!("`{name}` is not a boolean: `{s}`"))),
            })
            .transpose()
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input)
}

fn record_error(row: usize, e: csv::Error) -> Error {
    if e.is_io_error() {
        Error::Csv(e)
    } else {
        Error::RowParse {
            row,
            message: e.to_string(),
        }
    }
}

/// Parse a ground-truth label CSV. Row numbers in errors are 1-based data rows.
pub fn parse_labels<R: Read>(input: R) -> Result<Vec<LabelRecord>> {
    let mut rdr = reader(input);
    let cols = Columns::from_headers(rdr.headers()?, &LABEL_REQUIRED)?;
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let ctx = RowCtx { row: i + 1 };
        let record = record.map_err(|e| record_error(ctx.row, e))?;
        let f = |name| cols.field(&record, name);
        let confidence_text = ctx.required(f("confidence"), "confidence")?;
        let confidence = confidence_text
            .parse::<Confidence>()
            .map_err(|_| ctx.err(format!("unknown confidence `{confidence_text}`")))?;
        let label = LabelRecord {
            detect_id: ctx.required(f("detect_id"), "detect_id")?.to_string(),
            scene_id: ctx.required(f("scene_id"), "scene_id")?.to_string(),
            row: ctx.index(f("detect_scene_row"), "detect_scene_row")?,
            col: ctx.index(f("detect_scene_column"), "detect_scene_column")?,
            is_vessel: ctx.boolean(f("is_vessel"), "is_vessel")?,
            is_fishing: ctx.boolean(f("is_fishing"), "is_fishing")?,
            vessel_length_m: ctx.float(f("vessel_length_m"), "vessel_length_m")?,
            confidence,
            distance_from_shore_km: ctx.float(f("distance_from_shore_km"), "distance_from_shore_km")?,
            source: f("source").unwrap_or_default().to_string(),
        };
        label.check_flags().map_err(|e| ctx.err(e.to_string()))?;
        out.push(label);
    }
    Ok(out)
}

/// Parse a prediction CSV. A missing or blank `score` defaults to 1.0 and
/// blank class flags to `false`.
pub fn parse_predictions<R: Read>(input: R) -> Result<Vec<DetectionRecord>> {
    let mut rdr = reader(input);
    let cols = Columns::from_headers(rdr.headers()?, &PREDICTION_REQUIRED)?;
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let ctx = RowCtx { row: i + 1 };
        let record = record.map_err(|e| record_error(ctx.row, e))?;
        let f = |name| cols.field(&record, name);
        let coordinate = |name| -> Result<f64> {
            ctx.float(f(name), name)?
                .ok_or_else(|| ctx.err(format!("`{name}` is blank")))
        };
        let det = DetectionRecord {
            scene_id: ctx.required(f("scene_id"), "scene_id")?.to_string(),
            row: coordinate("detect_scene_row")?,
            col: coordinate("detect_scene_column")?,
            is_vessel: ctx.boolean(f("is_vessel"), "is_vessel")?.unwrap_or(false),
            is_fishing: ctx.boolean(f("is_fishing"), "is_fishing")?.unwrap_or(false),
            score: ctx.float(f("score"), "score")?.unwrap_or(1.0),
        };
        det.check().map_err(|e| ctx.err(e.to_string()))?;
        out.push(det);
    }
    Ok(out)
}

fn opt_bool(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

fn opt_float(v: Option<f64>) -> String {
    v.map(|f| f.to_string()).unwrap_or_default()
}

pub fn write_labels<W: Write>(labels: &[LabelRecord], output: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(LABEL_COLUMNS)?;
    for l in labels {
        w.write_record([
            l.detect_id.clone(),
            l.scene_id.clone(),
            l.row.to_string(),
            l.col.to_string(),
            opt_bool(l.is_vessel),
            opt_bool(l.is_fishing),
            opt_float(l.vessel_length_m),
            l.confidence.to_string(),
            opt_float(l.distance_from_shore_km),
            l.source.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_predictions<W: Write>(predictions: &[DetectionRecord], output: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(PREDICTION_COLUMNS)?;
    for d in predictions {
        w.write_record([
            d.scene_id.clone(),
            d.row.to_string(),
            d.col.to_string(),
            d.is_vessel.to_string(),
            d.is_fishing.to_string(),
            d.score.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
