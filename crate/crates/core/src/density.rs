//! Cone density and mean cone area per image, and the eccentricity grouping
//! used for reporting.
//!
//! Density is `N / (h * w * (mu / s_f)^2)`: with `mu` in microns per pixel and
//! the default `s_f = 1000` the window area is in mm² and the density in
//! cones/mm². Mean cone area is `sum(p * mu^2) / N` in µm².

use crate::maskops::{instance_pixel_counts, InstanceLabelMap};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Microns to millimetres.
pub const DEFAULT_SCALING_FACTOR: f64 = 1000.0;
/// Largest supported |eccentricity|, degrees.
pub const MAX_ECCENTRICITY_DEG: f64 = 15.0;
/// Central fovea / parafovea split, degrees.
pub const GROUP_BOUNDARY_DEG: f64 = 4.5;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("{what} must be positive, got {value}")]
    NonPositiveDimension { what: &'static str, value: f64 },
    #[error("no cone pixel counts given")]
    EmptyInput,
    #[error("eccentricity {0}° outside ±{MAX_ECCENTRICITY_DEG}°")]
    OutOfRange(f64),
    #[error("label map is {map_w}x{map_h} but metadata says {meta_w}x{meta_h}")]
    DimensionMismatch { map_w: usize, map_h: usize, meta_w: usize, meta_h: usize },
    #[error("unknown modality {0:?}")]
    UnknownModality(String),
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: u64, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Confocal,
    Calculated,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Confocal => "confocal",
            Modality::Calculated => "calculated",
        })
    }
}

impl FromStr for Modality {
    type Err = DensityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "confocal" => Ok(Modality::Confocal),
            "calculated" => Ok(Modality::Calculated),
            _ => Err(DensityError::UnknownModality(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub participant_id: String,
    pub modality: Modality,
    /// Signed; negative is nasal.
    pub eccentricity_deg: f64,
    pub microns_per_pixel: f64,
    pub scaling_factor: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySample {
    pub participant_id: String,
    pub modality: Modality,
    pub eccentricity_deg: f64,
    /// Cones per mm² (for the default scaling factor).
    pub density: f64,
    /// µm²; absent when the image has no cones.
    pub mean_area_um2: Option<f64>,
    pub n_cones: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EccentricityGroup {
    CentralFovea,
    Parafovea,
}

impl fmt::Display for EccentricityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EccentricityGroup::CentralFovea => "central_fovea",
            EccentricityGroup::Parafovea => "parafovea",
        })
    }
}

fn positive(what: &'static str, value: f64) -> Result<f64, DensityError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(DensityError::NonPositiveDimension { what, value })
    }
}

/// Window area in the squared unit of `microns_per_pixel / scaling_factor`.
pub fn window_area(width: usize, height: usize, microns_per_pixel: f64, scaling_factor: f64) -> f64 {
    let px = (height * width) as f64;
    px * microns_per_pixel * microns_per_pixel / (scaling_factor * scaling_factor)
}

pub fn cone_density(
    n_cones: u64,
    width: usize,
    height: usize,
    microns_per_pixel: f64,
    scaling_factor: f64,
) -> Result<f64, DensityError> {
    positive("width", width as f64)?;
    positive("height", height as f64)?;
    let mu = positive("microns_per_pixel", microns_per_pixel)?;
    let sf = positive("scaling_factor", scaling_factor)?;
    // N / (h w (mu/sf)^2), rearranged so exact decimal inputs stay exact
    Ok(n_cones as f64 * (sf * sf) / ((height * width) as f64 * (mu * mu)))
}

pub fn mean_cone_area(pixel_counts: &[u64], microns_per_pixel: f64) -> Result<f64, DensityError> {
    if pixel_counts.is_empty() {
        return Err(DensityError::EmptyInput);
    }
    let mu = positive("microns_per_pixel", microns_per_pixel)?;
    let total: u64 = pixel_counts.iter().sum();
    Ok(total as f64 * (mu * mu) / pixel_counts.len() as f64)
}

/// `|r| <= 4.5°` is central fovea, anything further out is parafovea.
pub fn eccentricity_group(eccentricity_deg: f64) -> Result<EccentricityGroup, DensityError> {
    let r = eccentricity_deg.abs();
    if !(r <= MAX_ECCENTRICITY_DEG) {
        return Err(DensityError::OutOfRange(eccentricity_deg));
    }
    Ok(if r <= GROUP_BOUNDARY_DEG { EccentricityGroup::CentralFovea } else { EccentricityGroup::Parafovea })
}

pub fn analyze_image(map: &InstanceLabelMap, meta: &ImageMeta) -> Result<DensitySample, DensityError> {
    if map.width() != meta.width || map.height() != meta.height {
        return Err(DensityError::DimensionMismatch {
            map_w: map.width(),
            map_h: map.height(),
            meta_w: meta.width,
            meta_h: meta.height,
        });
    }
    if !(meta.eccentricity_deg.abs() <= MAX_ECCENTRICITY_DEG) {
        return Err(DensityError::OutOfRange(meta.eccentricity_deg));
    }
    let counts: Vec<u64> = instance_pixel_counts(map).into_values().collect();
    let n = counts.len() as u64;
    let density = cone_density(n, meta.width, meta.height, meta.microns_per_pixel, meta.scaling_factor)?;
    let mean_area_um2 = if counts.is_empty() { None } else { Some(mean_cone_area(&counts, meta.microns_per_pixel)?) };
    Ok(DensitySample {
        participant_id: meta.participant_id.clone(),
        modality: meta.modality,
        eccentricity_deg: meta.eccentricity_deg,
        density,
        mean_area_um2,
        n_cones: n,
    })
}

pub const DENSITY_TABLE_HEADER: [&str; 6] =
    ["participant", "modality", "eccentricity_deg", "n_cones", "density_per_mm2", "mean_area_um2"];

/// Writes samples in the given order.
pub fn save_density_table(samples: &[DensitySample], path: impl AsRef<Path>) -> Result<(), DensityError> {
    let path = path.as_ref();
    let io = |source| DensityError::Io { path: path.display().to_string(), source };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| io(e.into()))?;
    w.write_record(DENSITY_TABLE_HEADER).map_err(|e| io(e.into()))?;
    for s in samples {
        w.write_record([
            s.participant_id.clone(),
            s.modality.to_string(),
            s.eccentricity_deg.to_string(),
            s.n_cones.to_string(),
            s.density.to_string(),
            s.mean_area_um2.map(|a| a.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

pub fn load_density_table(path: impl AsRef<Path>) -> Result<Vec<DensitySample>, DensityError> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| DensityError::Io { path: p.clone(), source: e.into() })?;
    let parse = |line: u64, reason: String| DensityError::Parse { path: p.clone(), line, reason };
    let headers = rdr.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != DENSITY_TABLE_HEADER {
        return Err(parse(1, format!("expected header {}", DENSITY_TABLE_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse(e.position().map_or(0, |q| q.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |q| q.line());
        let num = |i: usize| -> Result<f64, DensityError> {
            let s = rec.get(i).unwrap_or("").trim();
            s.parse::<f64>().map_err(|_| parse(line, format!("invalid {} {s:?}", DENSITY_TABLE_HEADER[i])))
        };
        let area = rec.get(5).unwrap_or("").trim();
        out.push(DensitySample {
            participant_id: rec.get(0).unwrap_or("").trim().to_string(),
            modality: rec.get(1).unwrap_or("").parse().map_err(|e: DensityError| parse(line, e.to_string()))?,
            eccentricity_deg: num(2)?,
            n_cones: rec
                .get(3)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| parse(line, "invalid n_cones".to_string()))?,
            density: num(4)?,
            mean_area_um2: if area.is_empty() { None } else { Some(num(5)?) },
        });
    }
    Ok(out)
}
