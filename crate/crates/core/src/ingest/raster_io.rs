//! Single-band raster files.
//!
//! Two on-disk layouts are supported, chosen by file extension:
//!
//! * `.tif` / `.tiff`: single-band GeoTIFF. Float32 is written; float32,
//!   float64 and 8/16/32-bit integer samples are read. Pixel spacing comes
//!   from `ModelPixelScaleTag`, nodata from `GDAL_NODATA`.
//! * `.json`: a header `{width, height, pixel_spacing_m, nodata, data}` where
//!   `data` names a raw little-endian `f32` row-major file next to it
//!   (default: the header's stem with a `.bin` extension).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype::Gray32Float, TiffEncoder};
use tiff::tags::Tag;
use tiff::ColorType;

use crate::error::{Error, Result};
use crate::model::{Raster, DEFAULT_NODATA, DEFAULT_PIXEL_SPACING_M};

/// Scale values below this are taken to be angular units, not meters.
const MIN_METRIC_PIXEL_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterFormat {
    GeoTiff,
    Raw,
}

impl RasterFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("tif" | "tiff") => Ok(RasterFormat::GeoTiff),
            Some("json") => Ok(RasterFormat::Raw),
            _ => Err(Error::UnsupportedFormat(path.display().to_string())),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            RasterFormat::GeoTiff => "tif",
            RasterFormat::Raw => "json",
        }
    }
}

impl std::str::FromStr for RasterFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tif" | "tiff" | "geotiff" => Ok(RasterFormat::GeoTiff),
            "raw" | "json" => Ok(RasterFormat::Raw),
            _ => Err(Error::Config(format!("unknown raster format `{s}`"))),
        }
    }
}

/// Size, spacing and nodata of a raster file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_spacing")]
    pub pixel_spacing_m: f64,
    #[serde(default = "default_nodata")]
    pub nodata: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

fn default_spacing() -> f64 {
    DEFAULT_PIXEL_SPACING_M
}

fn default_nodata() -> f32 {
    DEFAULT_NODATA
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    match RasterFormat::from_path(path)? {
        RasterFormat::GeoTiff => read_geotiff(path),
        RasterFormat::Raw => read_raw(path),
    }
}

pub fn write_raster(raster: &Raster, path: &Path) -> Result<()> {
    match RasterFormat::from_path(path)? {
        RasterFormat::GeoTiff => write_geotiff(raster, path),
        RasterFormat::Raw => write_raw(raster, path),
    }
}

/// Reads only the header (no pixel data).
pub fn read_raster_header(path: &Path) -> Result<RasterHeader> {
    match RasterFormat::from_path(path)? {
        RasterFormat::GeoTiff => {
            let mut decoder = open_tiff(path)?;
            let (width, height) = decoder.dimensions()?;
            let (pixel_spacing_m, nodata) = tiff_georef(&mut decoder, path)?;
            Ok(RasterHeader {
                width: width as usize,
                height: height as usize,
                pixel_spacing_m,
                nodata,
                data: None,
            })
        }
        RasterFormat::Raw => read_raw_header(path),
    }
}

fn open_tiff(path: &Path) -> Result<Decoder<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(Decoder::new(BufReader::new(file))?.with_limits(Limits::unlimited()))
}

fn tiff_georef(decoder: &mut Decoder<BufReader<File>>, path: &Path) -> Result<(f64, f32)> {
    let mut spacing = DEFAULT_PIXEL_SPACING_M;
    if let Some(value) = decoder.find_tag(Tag::ModelPixelScaleTag)? {
        let scale = value.into_f64_vec()?;
        match scale.first() {
            Some(&sx) if sx >= MIN_METRIC_PIXEL_SCALE => spacing = sx,
            Some(&sx) => tracing::warn!(
                path = %path.display(),
                scale = sx,
                "pixel scale looks angular; using default spacing {DEFAULT_PIXEL_SPACING_M} m"
            ),
            None => {}
        }
    }
    let mut nodata = DEFAULT_NODATA;
    if let Some(value) = decoder.find_tag(Tag::GdalNodata)? {
        let text = value.into_string()?;
        let text = text.trim_matches(char::from(0)).trim();
        nodata = text
            .parse::<f32>()
            .map_err(|_| Error::InvalidRaster(format!("{}: bad GDAL_NODATA `{text}`", path.display())))?;
    }
    Ok((spacing, nodata))
}

fn read_geotiff(path: &Path) -> Result<Raster> {
    let mut decoder = open_tiff(path)?;
    let (width, height) = decoder.dimensions()?;
    match decoder.colortype()? {
        ColorType::Gray(_) => {}
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: expected a single-band image, found {other:?}",
                path.display()
            )))
        }
    }
    let (spacing, nodata) = tiff_georef(&mut decoder, path)?;
    let values: Vec<f32> = match decoder.read_image()? {
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: unsupported sample type",
                path.display()
            )))
        }
    };
    Raster::new(width as usize, height as usize, spacing, nodata, values)
}

fn write_geotiff(raster: &Raster, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = TiffEncoder::new(BufWriter::new(file))?;
    let mut image = encoder.new_image::<Gray32Float>(raster.width() as u32, raster.height() as u32)?;
    let spacing = raster.pixel_spacing_m();
    image
        .encoder()
        .write_tag(Tag::ModelPixelScaleTag, &[spacing, spacing, 0.0][..])?;
    image
        .encoder()
        .write_tag(Tag::GdalNodata, format!("{}", raster.nodata()).as_str())?;
    image.write_data(raster.values())?;
    Ok(())
}

fn raw_data_path(header_path: &Path, header: &RasterHeader) -> PathBuf {
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    match &header.data {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => dir.join(p),
        None => header_path.with_extension("bin"),
    }
}

fn read_raw_header(path: &Path) -> Result<RasterHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_raw(path: &Path) -> Result<Raster> {
    let header = read_raw_header(path)?;
    let data_path = raw_data_path(path, &header);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expected = header.width * header.height * 4;
    if bytes.len() != expected {
        return Err(Error::InvalidRaster(format!(
            "{}: expected {expected} bytes for {}x{} float32, found {}",
            data_path.display(),
            header.width,
            header.height,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Raster::new(
        header.width,
        header.height,
        header.pixel_spacing_m,
        header.nodata,
        values,
    )
}

fn write_raw(raster: &Raster, path: &Path) -> Result<()> {
    let data_name = path
        .with_extension("bin")
        .file_name()
        .map(PathBuf::from)
        .ok_or_else(|| Error::InvalidRaster(format!("bad raster path {}", path.display())))?;
    let header = RasterHeader {
        width: raster.width(),
        height: raster.height(),
        pixel_spacing_m: raster.pixel_spacing_m(),
        nodata: raster.nodata(),
        data: Some(data_name),
    };
    let data_path = raw_data_path(path, &header);
    let bytes: Vec<u8> = raster.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))?;
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
