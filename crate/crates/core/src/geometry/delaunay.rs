//! Incremental Bowyer–Watson Delaunay triangulation.
//!
//! Only the seed adjacency is exported: the Voronoi cell of a seed is the
//! intersection of the bisector half-planes of its Delaunay neighbours, so
//! the cell builder needs nothing else from the triangulation.
//!
//! Orientation and in-circle tests use Shewchuk's adaptive predicates, so the
//! combinatorics are exact for any finite input. Points are inserted in
//! lexicographic `(x, y)` order and a query point lying exactly on a
//! circumcircle does not invalidate that triangle; together these give a
//! deterministic resolution of cocircular configurations.

use super::Point;
use robust::{incircle, orient2d, Coord};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Triangle {
    /// Counter-clockwise vertex indices.
    v: [usize; 3],
    /// `n[i]` is the triangle across the edge opposite `v[i]`.
    n: [usize; 3],
    alive: bool,
}

struct Triangulation {
    pts: Vec<Coord<f64>>,
    tris: Vec<Triangle>,
    free: Vec<usize>,
    last: usize,
    // scratch buffers reused across insertions
    mark: Vec<u32>,
    epoch: u32,
}

fn coord(p: Point) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

impl Triangulation {
    fn new(points: &[Point]) -> Self {
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        let cx = 0.5 * (min_x + max_x);
        let cy = 0.5 * (min_y + max_y);
        // Far enough that no circle of box-diagonal radius centred inside the
        // point hull can reach a super vertex.
        let span = (max_x - min_x).max(max_y - min_y).max(1.0) * 1e7;

        let mut pts: Vec<Coord<f64>> = points.iter().map(|&p| coord(p)).collect();
        let s0 = pts.len();
        pts.push(Coord { x: cx - 3.0 * span, y: cy - 3.0 * span });
        pts.push(Coord { x: cx + 3.0 * span, y: cy - 3.0 * span });
        pts.push(Coord { x: cx, y: cy + 3.0 * span });

        let root = Triangle { v: [s0, s0 + 1, s0 + 2], n: [NONE; 3], alive: true };
        Triangulation { pts, tris: vec![root], free: Vec::new(), last: 0, mark: vec![0], epoch: 0 }
    }

    fn alloc(&mut self, t: Triangle) -> usize {
        if let Some(i) = self.free.pop() {
            self.tris[i] = t;
            i
        } else {
            self.tris.push(t);
            self.mark.push(0);
            self.tris.len() - 1
        }
    }

    /// Visibility walk from the most recently created triangle.
    fn locate(&self, p: Coord<f64>) -> usize {
        let mut t = self.last;
        let mut steps = 0usize;
        let limit = 4 * self.tris.len() + 16;
        'walk: loop {
            let tri = &self.tris[t];
            // rotate the starting edge so the walk cannot cycle on a fixed pattern
            for k in 0..3 {
                let i = (k + steps) % 3;
                let a = self.pts[tri.v[(i + 1) % 3]];
                let b = self.pts[tri.v[(i + 2) % 3]];
                if orient2d(a, b, p) < 0.0 && tri.n[i] != NONE {
                    t = tri.n[i];
                    steps += 1;
                    if steps > limit {
                        break 'walk;
                    }
                    continue 'walk;
                }
            }
            return t;
        }
        // Fallback: exhaustive search.
        self.tris
            .iter()
            .enumerate()
            .find(|(_, tri)| {
                tri.alive
                    && (0..3).all(|i| {
                        let a = self.pts[tri.v[(i + 1) % 3]];
                        let b = self.pts[tri.v[(i + 2) % 3]];
                        orient2d(a, b, p) >= 0.0
                    })
            })
            .map(|(i, _)| i)
            .expect("point lies inside the super triangle")
    }

    fn in_circumcircle(&self, t: usize, p: Coord<f64>) -> bool {
        let v = self.tris[t].v;
        incircle(self.pts[v[0]], self.pts[v[1]], self.pts[v[2]], p) > 0.0
    }

    fn insert(&mut self, pi: usize) {
        let p = self.pts[pi];
        let start = self.locate(p);

        self.epoch += 1;
        let epoch = self.epoch;
        let mut cavity = vec![start];
        self.mark[start] = epoch;
        let mut head = 0;
        while head < cavity.len() {
            let t = cavity[head];
            head += 1;
            for i in 0..3 {
                let nb = self.tris[t].n[i];
                if nb != NONE && self.mark[nb] != epoch && self.in_circumcircle(nb, p) {
                    self.mark[nb] = epoch;
                    cavity.push(nb);
                }
            }
        }

        // Boundary edges (a, b, outside neighbour), oriented as in the cavity triangles.
        let mut boundary = Vec::new();
        for &t in &cavity {
            let tri = self.tris[t];
            for i in 0..3 {
                let nb = tri.n[i];
                if nb == NONE || self.mark[nb] != epoch {
                    boundary.push((tri.v[(i + 1) % 3], tri.v[(i + 2) % 3], nb));
                }
            }
        }

        for &t in &cavity {
            self.tris[t].alive = false;
            self.free.push(t);
        }

        let mut created = Vec::with_capacity(boundary.len());
        for &(a, b, outside) in &boundary {
            let id = self.alloc(Triangle { v: [pi, a, b], n: [outside, NONE, NONE], alive: true });
            if outside != NONE {
                let o = &mut self.tris[outside];
                let slot = (0..3).find(|&j| o.v[j] != a && o.v[j] != b).expect("shared edge");
                o.n[slot] = id;
            }
            created.push((a, b, id));
        }

        // Link the fan around p: edge (b -> p) of [p, a, b] is shared with the
        // triangle whose second vertex is b; edge (p -> a) with the one whose
        // third vertex is a.
        for k in 0..created.len() {
            let (a, b, id) = created[k];
            let across_bp = created.iter().find(|c| c.0 == b).map(|c| c.2).unwrap_or(NONE);
            let across_pa = created.iter().find(|c| c.1 == a).map(|c| c.2).unwrap_or(NONE);
            self.tris[id].n[1] = across_bp;
            self.tris[id].n[2] = across_pa;
        }
        self.last = created[0].2;
    }
}

/// Delaunay neighbour lists for `points` (which must be pairwise distinct).
///
/// Neighbour lists are sorted ascending; super-triangle vertices are dropped.
pub(crate) fn delaunay_neighbors(points: &[Point]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a].x.total_cmp(&points[b].x).then(points[a].y.total_cmp(&points[b].y))
    });

    let mut tri = Triangulation::new(points);
    for &i in &order {
        tri.insert(i);
    }

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in tri.tris.iter().filter(|t| t.alive) {
        for i in 0..3 {
            let a = t.v[i];
            let b = t.v[(i + 1) % 3];
            if a < n && b < n {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// True when all points lie on one line (exactly, by the orientation predicate).
pub(crate) fn all_collinear(points: &[Point]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let a = coord(points[0]);
    let b = coord(points[1]);
    points[2..].iter().all(|&p| orient2d(a, b, coord(p)) == 0.0)
}
