//! Label-map images (16-bit grayscale PNG, or binary PGM by extension) and
//! centre CSV files.

use super::{CenterSet, InstanceLabelMap, MaskError, MAX_LABEL};
use crate::geometry::Point;
use image::{ImageBuffer, ImageFormat, Luma};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MaskError + '_ {
    move |source| MaskError::Io { path: path.display().to_string(), source }
}

fn unsupported(path: &Path, reason: impl ToString) -> MaskError {
    MaskError::UnsupportedFormat { path: path.display().to_string(), reason: reason.to_string() }
}

fn format_for(path: &Path) -> Result<ImageFormat, MaskError> {
    match ImageFormat::from_path(path) {
        Ok(f @ (ImageFormat::Png | ImageFormat::Pnm)) => Ok(f),
        Ok(other) => Err(unsupported(path, format!("{other:?} is not a label-map format"))),
        Err(e) => Err(unsupported(path, e)),
    }
}

pub fn load_label_map(path: impl AsRef<Path>) -> Result<InstanceLabelMap, MaskError> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let file = File::open(path).map_err(io_err(path))?;
    let img = image::load(BufReader::new(file), format).map_err(|e| unsupported(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<u32> = match img {
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        other => return Err(unsupported(path, format!("expected single-channel image, got {:?}", other.color()))),
    };
    InstanceLabelMap::from_vec(w, h, labels)
}

pub fn save_label_map(map: &InstanceLabelMap, path: impl AsRef<Path>) -> Result<(), MaskError> {
    let path = path.as_ref();
    let format = format_for(path)?;
    if let Some(&l) = map.labels().iter().find(|&&l| l > MAX_LABEL) {
        return Err(MaskError::LabelOverflow(l));
    }
    let raw: Vec<u16> = map.labels().iter().map(|&l| l as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, raw).expect("buffer matches dimensions");
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    buf.write_to(&mut out, format).map_err(|e| unsupported(path, e))?;
    out.flush().map_err(io_err(path))
}

fn csv_err(path: &Path, e: csv::Error) -> MaskError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => MaskError::Io { path: path.display().to_string(), source },
        kind => MaskError::ParseError { path: path.display().to_string(), line, reason: format!("{kind:?}") },
    }
}

/// Reads `x_px,y_px[,label]` records.
pub fn load_centers_csv(path: impl AsRef<Path>) -> Result<CenterSet, MaskError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(file));
    let parse_err = |line: u64, reason: String| MaskError::ParseError { path: path.display().to_string(), line, reason };

    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let with_labels = match names.as_slice() {
        [] | [""] => return Ok(CenterSet::default()),
        ["x_px", "y_px"] => false,
        ["x_px", "y_px", "label"] => true,
        _ => return Err(parse_err(1, format!("expected header x_px,y_px[,label], got {}", names.join(",")))),
    };

    let mut points = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).map(str::trim).ok_or_else(|| parse_err(line, format!("missing column {}", i + 1)));
        let coord = |i: usize| -> Result<f64, MaskError> {
            let s = field(i)?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("invalid coordinate {s:?}")))
        };
        points.push(Point::new(coord(0)?, coord(1)?));
        if with_labels {
            let s = field(2)?;
            labels.push(s.parse::<u32>().map_err(|_| parse_err(line, format!("invalid label {s:?}")))?);
        }
    }
    Ok(CenterSet { points, labels: with_labels.then_some(labels) })
}

pub fn save_centers_csv(centers: &CenterSet, path: impl AsRef<Path>) -> Result<(), MaskError> {
    let path = path.as_ref();
    if let Some(l) = &centers.labels {
        if l.len() != centers.points.len() {
            return Err(MaskError::BufferSize { got: l.len(), expected: centers.points.len() });
        }
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(file));
    let write = |w: &mut csv::Writer<_>, rec: &[String]| w.write_record(rec).map_err(|e| csv_err(path, e));
    match &centers.labels {
        Some(labels) => {
            write(&mut w, &["x_px".into(), "y_px".into(), "label".into()])?;
            for (p, l) in centers.points.iter().zip(labels) {
                write(&mut w, &[p.x.to_string(), p.y.to_string(), l.to_string()])?;
            }
        }
        None => {
            write(&mut w, &["x_px".into(), "y_px".into()])?;
            for p in &centers.points {
                write(&mut w, &[p.x.to_string(), p.y.to_string()])?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}
