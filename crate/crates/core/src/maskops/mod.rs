//! Instance label maps: construction, measurement and rasterisation.

mod io;

pub use io::{load_centers_csv, load_label_map, save_centers_csv, save_label_map};

use crate::geometry::{CircleAnnotation, Point, VoronoiTessellation};
use std::collections::BTreeMap;
use thiserror::Error;

/// Largest label value representable in the 16-bit interchange format.
pub const MAX_LABEL: u32 = u16::MAX as u32;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("label map dimensions must be positive (got {width}x{height})")]
    InvalidDimensions { width: usize, height: usize },
    #[error("label buffer has {got} values, expected {expected}")]
    BufferSize { got: usize, expected: usize },
    #[error("binary mask contains value {value} at ({x}, {y})")]
    NonBinaryInput { x: usize, y: usize, value: u32 },
    #[error("circle {index} centre ({x}, {y}) outside the {width}x{height} map")]
    OutOfBoundsCenter { index: usize, x: f64, y: f64, width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label {0} exceeds the 16-bit limit of {MAX_LABEL}")]
    LabelOverflow(u32),
    #[error("unsupported or corrupt image {path}: {reason}")]
    UnsupportedFormat { path: String, reason: String },
    #[error("{path}:{line}: {reason}")]
    ParseError { path: String, line: u64, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major grid of instance labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl InstanceLabelMap {
    pub fn new(width: usize, height: usize) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::InvalidDimensions { width, height });
        }
        Ok(InstanceLabelMap { width, height, labels: vec![0; width * height] })
    }

    pub fn from_vec(width: usize, height: usize, labels: Vec<u32>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::InvalidDimensions { width, height });
        }
        if labels.len() != width * height {
            return Err(MaskError::BufferSize { got: labels.len(), expected: width * height });
        }
        Ok(InstanceLabelMap { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u32) {
        self.labels[y * self.width + x] = label;
    }

    pub fn same_shape(&self, other: &InstanceLabelMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Distinct nonzero labels, ascending.
    pub fn distinct_labels(&self) -> Vec<u32> {
        instance_pixel_counts(self).into_keys().collect()
    }
}

/// Centre coordinates, optionally tagged with the label they came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CenterSet {
    pub points: Vec<Point>,
    pub labels: Option<Vec<u32>>,
}

impl CenterSet {
    pub fn from_points(points: Vec<Point>) -> Self {
        CenterSet { points, labels: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Labels 4-connected foreground components `1..=K` in row-major order of
/// first encounter.
pub fn connected_components(binary: &InstanceLabelMap) -> Result<InstanceLabelMap, MaskError> {
    let (w, h) = (binary.width, binary.height);
    if let Some(i) = binary.labels.iter().position(|&v| v > 1) {
        return Err(MaskError::NonBinaryInput { x: i % w, y: i / w, value: binary.labels[i] });
    }
    let mut out = InstanceLabelMap::new(w, h)?;
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if binary.labels[start] == 0 || out.labels[start] != 0 {
            continue;
        }
        next += 1;
        out.labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if binary.labels[j] == 1 && out.labels[j] == 0 {
                    out.labels[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    Ok(out)
}

/// Per-label mean pixel position, ordered by label.
pub fn centroids(map: &InstanceLabelMap) -> CenterSet {
    let mut acc: BTreeMap<u32, (f64, f64, u64)> = BTreeMap::new();
    for (i, &l) in map.labels.iter().enumerate() {
        if l != 0 {
            let e = acc.entry(l).or_insert((0.0, 0.0, 0));
            e.0 += (i % map.width) as f64;
            e.1 += (i / map.width) as f64;
            e.2 += 1;
        }
    }
    let mut points = Vec::with_capacity(acc.len());
    let mut labels = Vec::with_capacity(acc.len());
    for (l, (sx, sy, n)) in acc {
        points.push(Point::new(sx / n as f64, sy / n as f64));
        labels.push(l);
    }
    CenterSet { points, labels: Some(labels) }
}

pub fn instance_pixel_counts(map: &InstanceLabelMap) -> BTreeMap<u32, u64> {
    let mut counts = BTreeMap::new();
    for &l in &map.labels {
        if l != 0 {
            *counts.entry(l).or_insert(0) += 1;
        }
    }
    counts
}

/// Pixel `(i, j)` gets label `k + 1` when it lies within circle `k`.
/// Overlaps go to the nearest centre, then to the lowest index.
pub fn rasterize_circles(
    circles: &[CircleAnnotation],
    width: usize,
    height: usize,
) -> Result<InstanceLabelMap, MaskError> {
    let mut map = InstanceLabelMap::new(width, height)?;
    for (k, c) in circles.iter().enumerate() {
        let p = c.center;
        if !(p.x >= 0.0 && p.x <= width as f64 && p.y >= 0.0 && p.y <= height as f64 && c.radius >= 0.0) {
            return Err(MaskError::OutOfBoundsCenter { index: k, x: p.x, y: p.y, width, height });
        }
    }
    let mut best = vec![f64::INFINITY; width * height];
    for (k, c) in circles.iter().enumerate() {
        let r2 = c.radius * c.radius;
        let x0 = (c.center.x - c.radius).ceil().max(0.0) as usize;
        let y0 = (c.center.y - c.radius).ceil().max(0.0) as usize;
        let x1 = ((c.center.x + c.radius).floor() as usize).min(width - 1);
        let y1 = ((c.center.y + c.radius).floor() as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = c.center.dist2(Point::new(x as f64, y as f64));
                let i = y * width + x;
                if d2 <= r2 && d2 < best[i] {
                    best[i] = d2;
                    map.labels[i] = k as u32 + 1;
                }
            }
        }
    }
    Ok(map)
}

/// Labels every pixel with `seed_index + 1` of its nearest seed, ties to the
/// lowest index.
///
/// Pixels are claimed through the cell polygons; pixels claimed by more than
/// one cell (those on or next to a ridge) are settled by comparing seed
/// distances directly.
pub fn rasterize_voronoi(
    tess: &VoronoiTessellation,
    width: usize,
    height: usize,
) -> Result<InstanceLabelMap, MaskError> {
    if tess.bounds.width != width as f64 || tess.bounds.height != height as f64 {
        return Err(MaskError::DimensionMismatch(format!(
            "tessellation window {}x{} vs raster {}x{}",
            tess.bounds.width, tess.bounds.height, width, height
        )));
    }
    let mut map = InstanceLabelMap::new(width, height)?;
    let mut best = vec![f64::INFINITY; width * height];
    for cell in &tess.cells {
        let seed = tess.seeds[cell.seed_index];
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &cell.vertices {
            lo_x = lo_x.min(v.x);
            lo_y = lo_y.min(v.y);
            hi_x = hi_x.max(v.x);
            hi_y = hi_y.max(v.y);
        }
        let x0 = (lo_x - 1e-6).ceil().max(0.0) as usize;
        let y0 = (lo_y - 1e-6).ceil().max(0.0) as usize;
        let x1 = ((hi_x + 1e-6).floor().max(0.0) as usize).min(width - 1);
        let y1 = ((hi_y + 1e-6).floor().max(0.0) as usize).min(height - 1);
        let label = cell.seed_index as u32 + 1;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = Point::new(x as f64, y as f64);
                if !cell.contains(p, true) {
                    continue;
                }
                let i = y * width + x;
                let d2 = seed.dist2(p);
                // cells are visited in index order, so strict `<` keeps the lower label on ties
                if d2 < best[i] {
                    best[i] = d2;
                    map.labels[i] = label;
                }
            }
        }
    }
    // Anything missed by the polygon tests (rounding at shared vertices).
    for (i, l) in map.labels.iter_mut().enumerate() {
        if *l == 0 {
            let p = Point::new((i % width) as f64, (i / width) as f64);
            let mut nearest = (f64::INFINITY, 0usize);
            for (k, s) in tess.seeds.iter().enumerate() {
                let d2 = s.dist2(p);
                if d2 < nearest.0 {
                    nearest = (d2, k);
                }
            }
            *l = nearest.1 as u32 + 1;
        }
    }
    Ok(map)
}
