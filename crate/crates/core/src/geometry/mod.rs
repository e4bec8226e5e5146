//! Voronoi tessellation of cone centres clipped to the image window, and the
//! circle conversions derived from it.
//!
//! Cells are built by clipping the window rectangle against the bisector
//! half-planes of each seed's Delaunay neighbours (Sutherland–Hodgman on a
//! convex polygon). Every edge of the result remembers which half-plane cut
//! it, which yields the ridge/neighbour structure for free.

mod delaunay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum separation between two seeds, in pixels.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("no seeds given")]
    EmptyInput,
    #[error("seeds {first} and {second} are closer than {DUPLICATE_TOLERANCE} px")]
    DuplicateSeeds { first: usize, second: usize },
    #[error("seed {index} at ({x}, {y}) is not strictly inside the {width}x{height} window")]
    SeedOutOfBounds { index: usize, x: f64, y: f64, width: f64, height: f64 },
    #[error("invalid window {width}x{height}")]
    InvalidBounds { width: f64, height: f64 },
    #[error("seed index {index} out of range ({len} seeds)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("cell {0} has no ridge shared with another seed")]
    NoRidges(usize),
    #[error("degenerate polygon")]
    DegeneratePolygon,
}

/// A sub-pixel position; pixel `(i, j)` sits at `x = i`, `y = j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

/// Image window `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(width: f64, height: f64) -> Result<Self, GeometryError> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(GeometryError::InvalidBounds { width, height });
        }
        Ok(BoundingBox { width, height })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn contains_strictly(&self, p: Point) -> bool {
        p.x > 0.0 && p.x < self.width && p.y > 0.0 && p.y < self.height
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    fn corners(&self) -> [Point; 4] {
        [
            Point::new(0.0, 0.0),
            Point::new(self.width, 0.0),
            Point::new(self.width, self.height),
            Point::new(0.0, self.height),
        ]
    }
}

/// What lies on the other side of a cell edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Neighbor {
    Seed(usize),
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    /// Indices into the owning cell's vertex list.
    pub vertices: (usize, usize),
    pub neighbor: Neighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiCell {
    pub seed_index: usize,
    /// Convex polygon, counter-clockwise.
    pub vertices: Vec<Point>,
    /// `ridges[k]` joins `vertices[k]` and `vertices[k + 1]` (cyclically).
    pub ridges: Vec<Ridge>,
}

impl VoronoiCell {
    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices).unwrap_or(0.0)
    }

    /// Whether any edge of the cell lies on the window boundary.
    pub fn touches_boundary(&self) -> bool {
        self.ridges.iter().any(|r| r.neighbor == Neighbor::Boundary)
    }

    /// Endpoints of a ridge.
    pub fn ridge_segment(&self, ridge: &Ridge) -> (Point, Point) {
        (self.vertices[ridge.vertices.0], self.vertices[ridge.vertices.1])
    }

    /// Point-in-convex-polygon test; boundary points count as inside when
    /// `inclusive`.
    pub fn contains(&self, p: Point, inclusive: bool) -> bool {
        let n = self.vertices.len();
        (0..n).all(|k| {
            let a = self.vertices[k];
            let b = self.vertices[(k + 1) % n];
            let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
            if inclusive {
                cross >= -1e-9 * (1.0 + a.dist(b))
            } else {
                cross > 0.0
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiTessellation {
    pub seeds: Vec<Point>,
    pub cells: Vec<VoronoiCell>,
    pub bounds: BoundingBox,
}

impl VoronoiTessellation {
    pub fn cell(&self, seed_index: usize) -> Result<&VoronoiCell, GeometryError> {
        self.cells
            .get(seed_index)
            .ok_or(GeometryError::IndexOutOfRange { index: seed_index, len: self.cells.len() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleAnnotation {
    pub center: Point,
    pub radius: f64,
    pub seed_index: usize,
}

/// Shoelace area; positive for counter-clockwise vertex order.
pub fn polygon_area(vertices: &[Point]) -> Result<f64, GeometryError> {
    if vertices.len() < 3 {
        return Err(GeometryError::DegeneratePolygon);
    }
    let n = vertices.len();
    let mut twice = 0.0;
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    // Translate to the first vertex to limit cancellation.
    let o = vertices[0];
    for k in 0..n {
        let a = vertices[k];
        let b = vertices[(k + 1) % n];
        twice += (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
        min_x = min_x.min(a.x);
        min_y = min_y.min(a.y);
        max_x = max_x.max(a.x);
        max_y = max_y.max(a.y);
    }
    let extent = (max_x - min_x).max(max_y - min_y);
    let area = 0.5 * twice;
    if !area.is_finite() || area.abs() <= 1e-14 * extent * extent {
        return Err(GeometryError::DegeneratePolygon);
    }
    Ok(area)
}

/// Polygon under construction: `edges[k]` labels the edge starting at `verts[k]`.
struct LabeledPolygon {
    verts: Vec<Point>,
    edges: Vec<Neighbor>,
}

impl LabeledPolygon {
    /// Keeps the side of the bisector between `seed` and `other` that holds `seed`.
    fn clip(&mut self, seed: Point, other: Point, label: Neighbor) {
        let n = self.verts.len();
        if n == 0 {
            return;
        }
        let m = seed.midpoint(other);
        let dx = other.x - seed.x;
        let dy = other.y - seed.y;
        let side = |p: Point| (p.x - m.x) * dx + (p.y - m.y) * dy;

        let vals: Vec<f64> = self.verts.iter().map(|&p| side(p)).collect();
        if vals.iter().all(|&v| v <= 0.0) {
            return;
        }
        let mut verts = Vec::with_capacity(n + 1);
        let mut edges = Vec::with_capacity(n + 1);
        for k in 0..n {
            let j = (k + 1) % n;
            let (a, b) = (self.verts[k], self.verts[j]);
            let (fa, fb) = (vals[k], vals[j]);
            let a_in = fa <= 0.0;
            let b_in = fb <= 0.0;
            if a_in {
                verts.push(a);
                edges.push(self.edges[k]);
            }
            if a_in != b_in {
                let t = fa / (fa - fb);
                let x = Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
                verts.push(x);
                // Leaving the half-plane: the next edge runs along the bisector.
                edges.push(if a_in { label } else { self.edges[k] });
            }
        }
        self.verts = verts;
        self.edges = edges;
    }

    /// Drops zero-length edges left behind by cuts through existing vertices.
    fn dedup(&mut self, tol: f64) {
        let tol2 = tol * tol;
        let mut changed = true;
        while changed && self.verts.len() > 1 {
            changed = false;
            let n = self.verts.len();
            for k in 0..n {
                let j = (k + 1) % n;
                if self.verts[k].dist2(self.verts[j]) <= tol2 {
                    // edge k vanishes; vertex k inherits the label of edge j
                    self.edges[k] = self.edges[j];
                    self.verts.remove(j);
                    self.edges.remove(j);
                    changed = true;
                    break;
                }
            }
        }
    }
}

fn validate_seeds(seeds: &[Point], bounds: &BoundingBox) -> Result<(), GeometryError> {
    if seeds.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    for (i, &p) in seeds.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite()) || !bounds.contains_strictly(p) {
            return Err(GeometryError::SeedOutOfBounds {
                index: i,
                x: p.x,
                y: p.y,
                width: bounds.width,
                height: bounds.height,
            });
        }
    }
    // Sort by x and sweep a DUPLICATE_TOLERANCE-wide window.
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.sort_by(|&a, &b| seeds[a].x.total_cmp(&seeds[b].x));
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if seeds[j].x - seeds[i].x > DUPLICATE_TOLERANCE {
                break;
            }
            if seeds[i].dist(seeds[j]) <= DUPLICATE_TOLERANCE {
                let (first, second) = (i.min(j), i.max(j));
                return Err(GeometryError::DuplicateSeeds { first, second });
            }
        }
    }
    Ok(())
}

/// Voronoi tessellation of `seeds` clipped to `bounds`, one cell per seed in
/// input order.
pub fn build_voronoi(seeds: &[Point], bounds: BoundingBox) -> Result<VoronoiTessellation, GeometryError> {
    let bounds = BoundingBox::new(bounds.width, bounds.height)?;
    validate_seeds(seeds, &bounds)?;

    let n = seeds.len();
    let neighbors: Vec<Vec<usize>> = if n <= 2 || delaunay::all_collinear(seeds) {
        (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect()
    } else {
        delaunay::delaunay_neighbors(seeds)
    };

    let tol = 1e-9 * bounds.width.max(bounds.height);
    let corners = bounds.corners();
    let cells = (0..n)
        .map(|i| {
            let mut poly = LabeledPolygon { verts: corners.to_vec(), edges: vec![Neighbor::Boundary; 4] };
            // Nearest neighbours first keeps the working polygon small.
            let mut nb = neighbors[i].clone();
            nb.sort_by(|&a, &b| {
                seeds[i].dist2(seeds[a]).total_cmp(&seeds[i].dist2(seeds[b])).then(a.cmp(&b))
            });
            for j in nb {
                poly.clip(seeds[i], seeds[j], Neighbor::Seed(j));
            }
            poly.dedup(tol);
            let k = poly.verts.len();
            let ridges = (0..k)
                .map(|e| Ridge { vertices: (e, (e + 1) % k), neighbor: poly.edges[e] })
                .collect();
            VoronoiCell { seed_index: i, vertices: poly.verts, ridges }
        })
        .collect();

    Ok(VoronoiTessellation { seeds: seeds.to_vec(), cells, bounds })
}

/// Circle centred on the seed whose radius reaches the nearest cell vertex
/// (window corners and edge intersections included).
pub fn closest_vertex_circle(
    tess: &VoronoiTessellation,
    seed_index: usize,
) -> Result<CircleAnnotation, GeometryError> {
    let cell = tess.cell(seed_index)?;
    let center = tess.seeds[seed_index];
    let radius = cell
        .vertices
        .iter()
        .map(|&v| center.dist(v))
        .min_by(f64::total_cmp)
        .ok_or(GeometryError::DegeneratePolygon)?;
    Ok(CircleAnnotation { center, radius, seed_index })
}

/// Circle centred on the seed whose radius reaches the nearest midpoint of a
/// ridge shared with another seed. Midpoints are taken on the clipped ridge.
pub fn closest_ridge_midpoint_circle(
    tess: &VoronoiTessellation,
    seed_index: usize,
) -> Result<CircleAnnotation, GeometryError> {
    let cell = tess.cell(seed_index)?;
    let center = tess.seeds[seed_index];
    let radius = cell
        .ridges
        .iter()
        .filter(|r| matches!(r.neighbor, Neighbor::Seed(_)))
        .map(|r| {
            let (a, b) = cell.ridge_segment(r);
            center.dist(a.midpoint(b))
        })
        .min_by(f64::total_cmp)
        .ok_or(GeometryError::NoRidges(seed_index))?;
    Ok(CircleAnnotation { center, radius, seed_index })
}
