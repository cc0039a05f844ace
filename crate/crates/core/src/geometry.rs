//! Polygonal workspace and (limited-range) Voronoi tessellation.
//!
//! Cells are built by Sutherland–Hodgman clipping of the boundary polygon
//! against a convex window: the perpendicular-bisector half-planes of the
//! neighbors and, for limited-range cells, an inscribed regular polygon
//! approximating the sensing ball. Density integrals over cells use a fixed
//! global midpoint lattice so that sums over a partition tile exactly.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::GaussianMixture;
use crate::Vec2;

/// Default number of sides of the polygon approximating a sensing ball.
pub const DEFAULT_BALL_SIDES: usize = 32;
/// Cells whose density mass is at or below this are treated as empty.
pub const MASS_EPSILON: f64 = 1e-9;
/// Magnitude of the deterministic perturbation applied to coincident sites.
pub const TIE_BREAK_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has zero area")]
    Degenerate,
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("obstacle {index} has negative radius {radius}")]
    NegativeRadius { index: usize, radius: f64 },
    #[error("obstacle {index} center ({x}, {y}) is outside the boundary")]
    ObstacleOutside { index: usize, x: f64, y: f64 },
    #[error("non-finite coordinate in polygon")]
    NonFinite,
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Shrinks every side by `margin`, collapsing to the center if too small.
    pub fn shrink(&self, margin: f64) -> Aabb {
        let c = (self.min + self.max) * 0.5;
        let hx = (self.width() * 0.5 - margin).max(0.0);
        let hy = (self.height() * 0.5 - margin).max(0.0);
        Aabb::new(Vec2::new(c.x - hx, c.y - hy), Vec2::new(c.x + hx, c.y + hy))
    }
}

/// Polygon with vertices in counter-clockwise order.
///
/// Results of clipping may be empty or degenerate; only [`Polygon::new`]
/// validates simplicity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

impl Polygon {
    /// Validates a simple polygon and reorients it counter-clockwise.
    pub fn new(mut vertices: Vec<Vec2>) -> Result<Self, GeometryError> {
        if vertices
            .iter()
            .any(|v| !v.x.is_finite() || !v.y.is_finite())
        {
            return Err(GeometryError::NonFinite);
        }
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        let signed = signed_area(&vertices);
        if signed.abs() < 1e-12 {
            return Err(GeometryError::Degenerate);
        }
        if signed < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // adjacent edges share a vertex
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(GeometryError::SelfIntersecting(i, j));
                }
            }
        }
        Ok(Self { vertices })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Regular `sides`-gon inscribed in the circle of `radius` around `center`.
    pub fn regular(center: Vec2, radius: f64, sides: usize) -> Self {
        let sides = sides.max(3);
        let vertices = (0..sides)
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / sides as f64;
                center + Vec2::new(a.cos(), a.sin()) * radius
            })
            .collect();
        Self { vertices }
    }

    pub fn rectangle(aabb: &Aabb) -> Self {
        Self {
            vertices: vec![
                aabb.min,
                Vec2::new(aabb.max.x, aabb.min.y),
                aabb.max,
                Vec2::new(aabb.min.x, aabb.max.y),
            ],
        }
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    pub fn area(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            signed_area(&self.vertices)
        }
    }

    pub fn aabb(&self) -> Aabb {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            min = min.inf(v);
            max = max.sup(v);
        }
        Aabb::new(min, max)
    }

    /// Even-odd point containment.
    pub fn contains(&self, q: &Vec2) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[j]);
            if (a.y > q.y) != (b.y > q.y) {
                let x = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if q.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Keeps the part of the polygon where `normal · q <= offset`.
    pub fn clip_half_plane(&self, normal: &Vec2, offset: f64) -> Polygon {
        let n = self.vertices.len();
        if n == 0 {
            return Polygon::empty();
        }
        let mut out = Vec::with_capacity(n + 2);
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let da = normal.dot(&a) - offset;
            let db = normal.dot(&b) - offset;
            if da <= 0.0 {
                out.push(a);
            }
            if (da <= 0.0) != (db <= 0.0) {
                let t = da / (da - db);
                out.push(a + (b - a) * t);
            }
        }
        dedup_vertices(&mut out);
        Polygon { vertices: out }
    }

    /// Intersection with a convex polygon, which must be counter-clockwise.
    ///
    /// `self` may be non-convex; the result then can contain zero-width
    /// bridges along the clip lines, which do not affect area or containment.
    pub fn clip_convex(&self, window: &Polygon) -> Polygon {
        let w = window.vertices();
        let mut out = self.clone();
        for i in 0..w.len() {
            if out.is_empty() {
                return Polygon::empty();
            }
            let a = w[i];
            let b = w[(i + 1) % w.len()];
            let e = b - a;
            // outward normal of a CCW edge
            let normal = Vec2::new(e.y, -e.x);
            out = out.clip_half_plane(&normal, normal.dot(&a));
        }
        out
    }

    /// Distance from `q` to the nearest edge.
    pub fn distance_to_boundary(&self, q: &Vec2) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| segment_distance(q, &self.vertices[i], &self.vertices[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Visits every global lattice point `((i + ½)h, (j + ½)h)` inside the
    /// polygon. Rows are scanned with half-open crossing intervals, so
    /// polygons sharing an edge never both claim the same point.
    pub fn for_each_lattice_point<F: FnMut(Vec2)>(&self, pitch: f64, mut f: F) {
        if self.is_empty() || pitch <= 0.0 {
            return;
        }
        let bb = self.aabb();
        let j0 = (bb.min.y / pitch - 0.5).floor() as i64;
        let j1 = (bb.max.y / pitch - 0.5).ceil() as i64;
        let n = self.vertices.len();
        let mut xs: Vec<f64> = Vec::with_capacity(8);
        for j in j0..=j1 {
            let y = (j as f64 + 0.5) * pitch;
            xs.clear();
            for i in 0..n {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                if (a.y > y) != (b.y > y) {
                    xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
                }
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                let i_start = (pair[0] / pitch - 0.5).ceil() as i64;
                let mut i = i_start;
                loop {
                    let x = (i as f64 + 0.5) * pitch;
                    if x >= pair[1] {
                        break;
                    }
                    if x >= pair[0] {
                        f(Vec2::new(x, y));
                    }
                    i += 1;
                }
            }
        }
    }
}

fn signed_area(v: &[Vec2]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

fn dedup_vertices(v: &mut Vec<Vec2>) {
    v.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    while v.len() > 1 && (v[0] - v[v.len() - 1]).norm() < 1e-12 {
        v.pop();
    }
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = cross(b - a, c - a);
    let d2 = cross(b - a, d - a);
    let d3 = cross(d - c, a - c);
    let d4 = cross(d - c, b - c);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2, o: f64| {
        o == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(a, b, c, d1) || on(a, b, d, d2) || on(c, d, a, d3) || on(c, d, b, d4)
}

pub(crate) fn segment_distance(q: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((q - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (q - (a + ab * t)).norm()
}

/// Disc obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
}

impl Obstacle {
    pub fn new(center: Vec2, radius: f64) -> Self {
        Self { center, radius }
    }

    /// Distance from `p` to the obstacle surface (negative inside).
    pub fn surface_distance(&self, p: &Vec2) -> f64 {
        (p - self.center).norm() - self.radius
    }
}

/// Bounded polygonal workspace with disc obstacles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentRepr", into = "EnvironmentRepr")]
pub struct Environment {
    boundary: Polygon,
    obstacles: Vec<Obstacle>,
}

#[derive(Serialize, Deserialize)]
struct EnvironmentRepr {
    boundary: Vec<Vec2>,
    obstacles: Vec<Obstacle>,
}

impl TryFrom<EnvironmentRepr> for Environment {
    type Error = GeometryError;

    fn try_from(r: EnvironmentRepr) -> Result<Self, Self::Error> {
        Environment::new(r.boundary, r.obstacles)
    }
}

impl From<Environment> for EnvironmentRepr {
    fn from(e: Environment) -> Self {
        EnvironmentRepr {
            boundary: e.boundary.vertices,
            obstacles: e.obstacles,
        }
    }
}

impl Environment {
    pub fn new(boundary: Vec<Vec2>, obstacles: Vec<Obstacle>) -> Result<Self, GeometryError> {
        let boundary = Polygon::new(boundary)?;
        for (index, o) in obstacles.iter().enumerate() {
            if !(o.radius >= 0.0) {
                return Err(GeometryError::NegativeRadius {
                    index,
                    radius: o.radius,
                });
            }
            if !boundary.contains(&o.center) {
                return Err(GeometryError::ObstacleOutside {
                    index,
                    x: o.center.x,
                    y: o.center.y,
                });
            }
        }
        Ok(Self {
            boundary,
            obstacles,
        })
    }

    /// Axis-aligned rectangular arena without obstacles.
    pub fn rectangle(min: Vec2, max: Vec2) -> Self {
        Self {
            boundary: Polygon::rectangle(&Aabb::new(min, max)),
            obstacles: Vec::new(),
        }
    }

    pub fn with_obstacles(mut self, obstacles: Vec<Obstacle>) -> Result<Self, GeometryError> {
        let boundary = std::mem::take(&mut self.boundary);
        Environment::new(boundary.vertices, obstacles)
    }

    pub fn boundary(&self) -> &Polygon {
        &self.boundary
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        self.boundary.contains(p)
    }
}

/// Voronoi cell of one robot, optionally limited to its sensing ball.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiCell {
    pub owner: Vec2,
    pub polygon: Polygon,
    /// Ball radius `r`; infinite for unlimited cells.
    pub range: f64,
}

/// Density moments of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMoments {
    /// ∫ φ
    pub mass: f64,
    /// ∫ q φ
    pub first_moment: Vec2,
    /// ∫ ‖q‖² φ
    pub second_moment: f64,
    pub centroid: Vec2,
    pub empty: bool,
}

impl CellMoments {
    /// ∫ ‖q − p‖² φ expressed through the moments.
    pub fn cost_at(&self, p: &Vec2) -> f64 {
        self.second_moment - 2.0 * self.first_moment.dot(p) + self.mass * p.norm_squared()
    }

    /// Gradient of [`CellMoments::cost_at`], equal to −2M(C − p).
    pub fn cost_gradient(&self, p: &Vec2) -> Vec2 {
        2.0 * self.mass * p - 2.0 * self.first_moment
    }
}

fn bisector(p: &Vec2, q: &Vec2) -> (Vec2, f64) {
    let normal = q - p;
    (normal, 0.5 * (q.norm_squared() - p.norm_squared()))
}

fn is_coincident(p: &Vec2, q: &Vec2) -> bool {
    (p - q).norm() < 1e-12
}

/// Limited-range Voronoi cell of `owner`: boundary ∩ bisector half-planes ∩
/// inscribed `ball_sides`-gon of radius `range`.
///
/// Neighbors are expected to be pre-filtered to the sensing range; a neighbor
/// coincident with the owner contributes no constraint.
pub fn limited_voronoi_cell(
    owner: &Vec2,
    neighbors: &[Vec2],
    boundary: &Polygon,
    range: f64,
    ball_sides: usize,
) -> VoronoiCell {
    let mut window = Polygon::regular(*owner, range, ball_sides);
    for q in neighbors {
        if is_coincident(owner, q) {
            log::warn!(
                "neighbor coincident with cell owner at ({}, {}); ignored",
                q.x,
                q.y
            );
            continue;
        }
        let (n, c) = bisector(owner, q);
        window = window.clip_half_plane(&n, c);
    }
    VoronoiCell {
        owner: *owner,
        polygon: boundary.clip_convex(&window),
        range,
    }
}

/// Bounded Voronoi partition (no range limit). Coincident sites are pushed
/// apart by [`TIE_BREAK_EPSILON`] along a direction drawn from `seed`.
pub fn unlimited_voronoi_partition(
    positions: &[Vec2],
    boundary: &Polygon,
    seed: u64,
) -> Vec<VoronoiCell> {
    let sites = separate_coincident(positions, seed);
    sites
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut poly = boundary.clone();
            for (j, q) in sites.iter().enumerate() {
                if i == j {
                    continue;
                }
                let (n, c) = bisector(p, q);
                poly = poly.clip_half_plane(&n, c);
            }
            VoronoiCell {
                owner: *p,
                polygon: poly,
                range: f64::INFINITY,
            }
        })
        .collect()
}

pub(crate) fn separate_coincident(positions: &[Vec2], seed: u64) -> Vec<Vec2> {
    let mut sites = positions.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 1..sites.len() {
        while sites[..i].iter().any(|q| is_coincident(&sites[i], q)) {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            sites[i] += Vector2::new(a.cos(), a.sin()) * TIE_BREAK_EPSILON;
        }
    }
    sites
}

/// Midpoint-lattice density moments of a cell.
pub fn cell_moments(cell: &VoronoiCell, phi: &GaussianMixture, grid_res: f64) -> CellMoments {
    let area = grid_res * grid_res;
    let mut mass = 0.0;
    let mut first = Vec2::zeros();
    let mut second = 0.0;
    cell.polygon.for_each_lattice_point(grid_res, |q| {
        let w = phi.eval(&q) * area;
        mass += w;
        first += q * w;
        second += q.norm_squared() * w;
    });
    let empty = mass <= MASS_EPSILON;
    let centroid = if empty { cell.owner } else { first / mass };
    CellMoments {
        mass,
        first_moment: first,
        second_moment: second,
        centroid,
        empty,
    }
}

/// Direct lattice evaluation of ∫_cell ‖q − p‖² φ dq.
pub fn cell_quadratic_cost(
    cell: &VoronoiCell,
    phi: &GaussianMixture,
    grid_res: f64,
    p: &Vec2,
) -> f64 {
    let area = grid_res * grid_res;
    let mut total = 0.0;
    cell.polygon.for_each_lattice_point(grid_res, |q| {
        total += (q - p).norm_squared() * phi.eval(&q) * area;
    });
    total
}
