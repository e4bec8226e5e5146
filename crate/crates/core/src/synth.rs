//! Synthetic cone mosaics with known density, and synthetic density profiles
//! drawn from the power-law model.

use crate::density::{cone_density, window_area, DensitySample, Modality, DEFAULT_SCALING_FACTOR};
use crate::fit::{eval_log_density, FitError, PowerFitParams, RandomEffects};
use crate::geometry::{build_voronoi, BoundingBox, GeometryError, Point, VoronoiTessellation};
use crate::maskops::{
    instance_pixel_counts, rasterize_voronoi, save_centers_csv, save_label_map, CenterSet, InstanceLabelMap, MaskError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Smallest lattice spacing that still gives every cone its own pixels.
pub const MIN_SPACING_PX: f64 = 3.0;
pub const POISSON_RADIUS_FRACTION: f64 = 0.8;
/// Dart-throwing radius never shrinks below this fraction of the spacing.
pub const POISSON_MIN_RADIUS_FRACTION: f64 = 0.5;
const POISSON_SHRINK: f64 = 0.95;
const POISSON_MAX_FAILURES: usize = 100;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid mosaic spec: {0}")]
    InvalidSpec(String),
    #[error(
        "density {density} cones/mm² needs a {spacing_px:.3} px spacing at {microns_per_pixel} µm/px; \
         minimum spacing is {MIN_SPACING_PX} px ({max_density:.1} cones/mm² at most)"
    )]
    UnresolvableDensity { density: f64, microns_per_pixel: f64, spacing_px: f64, max_density: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Hexagonal,
    JitteredHex,
    PoissonDisc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosaicSpec {
    /// Cones per mm².
    pub target_density: f64,
    pub width: usize,
    pub height: usize,
    pub microns_per_pixel: f64,
    pub layout: Layout,
    /// Jitter radius as a fraction of the spacing, in `[0, 0.5]`.
    pub jitter_fraction: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic {
    pub centers: CenterSet,
    pub label_map: InstanceLabelMap,
    pub achieved_density: f64,
    pub spacing_px: f64,
    /// Mean area of cells that do not touch the window edge, µm².
    pub interior_mean_area_um2: Option<f64>,
}

/// Ground truth written next to a generated mosaic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: MosaicSpec,
    pub n_cones: usize,
    pub achieved_density: f64,
    pub spacing_px: f64,
    pub interior_mean_area_um2: Option<f64>,
}

/// Hexagonal spacing in mm for `density` cones/mm²: `density = 2 / (√3 s²)`.
pub fn hex_spacing_mm(density: f64) -> f64 {
    (2.0 / (3f64.sqrt() * density)).sqrt()
}

pub fn hex_spacing_px(density: f64, microns_per_pixel: f64) -> f64 {
    hex_spacing_mm(density) * DEFAULT_SCALING_FACTOR / microns_per_pixel
}

/// Highest density whose lattice spacing is still `MIN_SPACING_PX`.
pub fn max_resolvable_density(microns_per_pixel: f64) -> f64 {
    let s_mm = MIN_SPACING_PX * microns_per_pixel / DEFAULT_SCALING_FACTOR;
    2.0 / (3f64.sqrt() * s_mm * s_mm)
}

fn validate(spec: &MosaicSpec) -> Result<f64, SynthError> {
    let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
    if !(spec.target_density > 0.0 && spec.target_density.is_finite()) {
        return bad("target_density must be positive");
    }
    if !(spec.microns_per_pixel > 0.0 && spec.microns_per_pixel.is_finite()) {
        return bad("microns_per_pixel must be positive");
    }
    if spec.width == 0 || spec.height == 0 {
        return bad("window must be non-empty");
    }
    if !(0.0..=0.5).contains(&spec.jitter_fraction) {
        return bad("jitter_fraction must lie in [0, 0.5]");
    }
    let s = hex_spacing_px(spec.target_density, spec.microns_per_pixel);
    if s < MIN_SPACING_PX {
        return Err(SynthError::UnresolvableDensity {
            density: spec.target_density,
            microns_per_pixel: spec.microns_per_pixel,
            spacing_px: s,
            max_density: max_resolvable_density(spec.microns_per_pixel),
        });
    }
    Ok(s)
}

/// Rows of `round(w / s)` points, `round(h / (s√3/2))` rows, odd rows shifted
/// by half a spacing, centred in the window.
pub fn hex_lattice(width: f64, height: f64, s: f64) -> Vec<Point> {
    let dy = s * 3f64.sqrt() / 2.0;
    let cols = (width / s).round().max(1.0) as usize;
    let rows = (height / dy).round().max(1.0) as usize;
    let x0 = (width - (cols as f64 - 0.5) * s) / 2.0;
    let y0 = (height - (rows as f64 - 1.0) * dy) / 2.0;
    let mut pts = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let shift = if r % 2 == 1 { s / 2.0 } else { 0.0 };
        for c in 0..cols {
            pts.push(Point::new(x0 + shift + c as f64 * s, y0 + r as f64 * dy));
        }
    }
    pts
}

fn jitter(points: &mut [Point], bounds: &BoundingBox, radius: f64, rng: &mut ChaCha8Rng) {
    for p in points {
        let rr = radius * rng.gen::<f64>().sqrt();
        let t = std::f64::consts::TAU * rng.gen::<f64>();
        let q = Point::new(p.x + rr * t.cos(), p.y + rr * t.sin());
        if bounds.contains(q) {
            *p = q;
        }
    }
}

fn poisson_disc(width: f64, height: f64, s: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let min_r = POISSON_MIN_RADIUS_FRACTION * s;
    let cell = min_r / 2f64.sqrt();
    let gw = (width / cell).ceil() as usize + 1;
    let gh = (height / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); gw * gh];
    let mut pts: Vec<Point> = Vec::with_capacity(count);
    let mut radius = POISSON_RADIUS_FRACTION * s;
    let mut failures = 0;
    while pts.len() < count {
        let p = Point::new(rng.gen_range(0.0..width), rng.gen_range(0.0..height));
        let (cx, cy) = ((p.x / cell) as usize, (p.y / cell) as usize);
        let reach = (radius / cell).ceil() as usize;
        let r2 = radius * radius;
        let mut free = true;
        'scan: for gy in cy.saturating_sub(reach)..=(cy + reach).min(gh - 1) {
            for gx in cx.saturating_sub(reach)..=(cx + reach).min(gw - 1) {
                if grid[gy * gw + gx].iter().any(|&k| pts[k].dist2(p) < r2) {
                    free = false;
                    break 'scan;
                }
            }
        }
        if free {
            grid[cy * gw + cx].push(pts.len());
            pts.push(p);
            failures = 0;
        } else {
            failures += 1;
            if failures >= POISSON_MAX_FAILURES && radius > min_r {
                radius = (radius * POISSON_SHRINK).max(min_r);
                failures = 0;
            }
        }
    }
    pts
}

pub fn generate_centers(spec: &MosaicSpec) -> Result<Vec<Point>, SynthError> {
    let s = validate(spec)?;
    let (w, h) = (spec.width as f64, spec.height as f64);
    let bounds = BoundingBox::new(w, h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    Ok(match spec.layout {
        Layout::Hexagonal => hex_lattice(w, h, s),
        Layout::JitteredHex => {
            let mut pts = hex_lattice(w, h, s);
            jitter(&mut pts, &bounds, spec.jitter_fraction * s, &mut rng);
            pts
        }
        Layout::PoissonDisc => {
            let area = window_area(spec.width, spec.height, spec.microns_per_pixel, DEFAULT_SCALING_FACTOR);
            let n = (spec.target_density * area).round() as usize;
            poisson_disc(w, h, s, n, &mut rng)
        }
    })
}

fn interior_mean_area(tess: &VoronoiTessellation, map: &InstanceLabelMap, mu: f64) -> Option<f64> {
    let counts = instance_pixel_counts(map);
    let interior: Vec<u64> = tess
        .cells
        .iter()
        .filter(|c| !c.touches_boundary())
        .filter_map(|c| counts.get(&(c.seed_index as u32 + 1)).copied())
        .collect();
    if interior.is_empty() {
        None
    } else {
        Some(interior.iter().sum::<u64>() as f64 * mu * mu / interior.len() as f64)
    }
}

/// Centres, their Voronoi label map and the density the centre count gives.
pub fn generate_mosaic(spec: &MosaicSpec) -> Result<Mosaic, SynthError> {
    let spacing_px = validate(spec)?;
    let points = generate_centers(spec)?;
    let bounds = BoundingBox::new(spec.width as f64, spec.height as f64)?;
    let tess = build_voronoi(&points, bounds)?;
    let label_map = rasterize_voronoi(&tess, spec.width, spec.height)?;
    let achieved_density = cone_density(
        points.len() as u64,
        spec.width,
        spec.height,
        spec.microns_per_pixel,
        DEFAULT_SCALING_FACTOR,
    )
    .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let interior_mean_area_um2 = interior_mean_area(&tess, &label_map, spec.microns_per_pixel);
    Ok(Mosaic {
        centers: CenterSet::from_points(points),
        label_map,
        achieved_density,
        spacing_px,
        interior_mean_area_um2,
    })
}

pub struct WrittenMosaic {
    pub label_map: PathBuf,
    pub centers: PathBuf,
    pub ground_truth: PathBuf,
}

/// Writes `<stem>.png`, `<stem>_centers.csv` and `<stem>.truth.json` in `dir`.
pub fn write_mosaic(mosaic: &Mosaic, spec: &MosaicSpec, dir: &Path, stem: &str) -> Result<WrittenMosaic, SynthError> {
    let out = WrittenMosaic {
        label_map: dir.join(format!("{stem}.png")),
        centers: dir.join(format!("{stem}_centers.csv")),
        ground_truth: dir.join(format!("{stem}.truth.json")),
    };
    save_label_map(&mosaic.label_map, &out.label_map)?;
    save_centers_csv(&mosaic.centers, &out.centers)?;
    let truth = GroundTruth {
        spec: spec.clone(),
        n_cones: mosaic.centers.len(),
        achieved_density: mosaic.achieved_density,
        spacing_px: mosaic.spacing_px,
        interior_mean_area_um2: mosaic.interior_mean_area_um2,
    };
    let mut json = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    json.push('\n');
    std::fs::write(&out.ground_truth, json)
        .map_err(|source| SynthError::Io { path: out.ground_truth.display().to_string(), source })?;
    Ok(out)
}

/// Image window the synthetic profile samples are attributed to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileWindow {
    pub width: usize,
    pub height: usize,
    pub microns_per_pixel: f64,
    pub modality: Modality,
}

/// One sample per participant and grid point, in that order. With
/// `sigma > 0` each log density gets independent `N(0, sigma²)` noise.
///
/// `n_cones` is the density times the window area, rounded, and the mean area
/// is the area per cone of that density.
pub fn generate_profile(
    params: &PowerFitParams,
    participants: &BTreeMap<String, RandomEffects>,
    r_grid: &[f64],
    window: &ProfileWindow,
    sigma: f64,
    seed: u64,
) -> Result<Vec<DensitySample>, SynthError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("noise sigma {sigma} must be non-negative")));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area = window_area(window.width, window.height, window.microns_per_pixel, DEFAULT_SCALING_FACTOR);
    let mut out = Vec::with_capacity(participants.len() * r_grid.len());
    for (id, effects) in participants {
        for &r in r_grid {
            let mut f = eval_log_density(params, effects, r)?;
            if sigma > 0.0 {
                f += noise.sample(&mut rng);
            }
            let density = f.exp();
            let n_cones = (density * area).round() as u64;
            out.push(DensitySample {
                participant_id: id.clone(),
                modality: window.modality,
                eccentricity_deg: r,
                density,
                mean_area_um2: Some(1e6 / density),
                n_cones,
            });
        }
    }
    Ok(out)
}
