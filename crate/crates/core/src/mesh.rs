//! Simplicial meshes of intervals and polygons.
//!
//! A [`Mesh`] stores vertex coordinates, element connectivity and the
//! oriented boundary edges of the domain it partitions. Degrees of freedom
//! live on interior vertices only; boundary vertices carry the homogeneous
//! Dirichlet value zero. One-dimensional meshes store points as `[x, 0.0]`.
//!
//! Meshes produced by [`Mesh::refine_uniform`] remember where every fine
//! vertex came from, which makes prolongation of piecewise-linear functions
//! exact (see [`Mesh::prolongate`]).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

pub(crate) fn scale(a: Point, t: f64) -> Point {
    [a[0] * t, a[1] * t]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub(crate) fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Distance from `x` to the segment `[a, b]`.
pub(crate) fn dist_to_segment(x: Point, a: Point, b: Point) -> f64 {
    let e = sub(b, a);
    let l2 = dot(e, e);
    let t = if l2 > 0.0 {
        (dot(sub(x, a), e) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(x, add(a, scale(e, t)))
}

/// Domains supported by the mesh generators.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    /// The open interval `(a, b)`.
    Interval { a: f64, b: f64 },
    /// The square `(-side/2, side/2)^2`.
    Square { side: f64 },
    /// `(-0.5, 0.5)^2` minus `[0, 0.5) x (-0.5, 0]`; the reentrant corner is the origin.
    LShape,
}

impl DomainSpec {
    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Interval { .. } => 1,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DomainSpec::Interval { a, b } if !(a < b) || !a.is_finite() || !b.is_finite() => Err(
                Error::param(format!("interval requires a < b, got ({a}, {b})")),
            ),
            DomainSpec::Square { side } if !(side > 0.0) || !side.is_finite() => Err(Error::param(
                format!("square side must be positive, got {side}"),
            )),
            _ => Ok(()),
        }
    }

    /// Boundary polygon in counter-clockwise order (2D only).
    pub fn polygon(&self) -> Vec<Point> {
        match *self {
            DomainSpec::Interval { .. } => Vec::new(),
            DomainSpec::Square { side } => {
                let r = 0.5 * side;
                vec![[-r, -r], [r, -r], [r, r], [-r, r]]
            }
            DomainSpec::LShape => vec![
                [-0.5, -0.5],
                [0.0, -0.5],
                [0.0, 0.0],
                [0.5, 0.0],
                [0.5, 0.5],
                [-0.5, 0.5],
            ],
        }
    }

    pub fn measure(&self) -> f64 {
        match *self {
            DomainSpec::Interval { a, b } => b - a,
            DomainSpec::Square { side } => side * side,
            DomainSpec::LShape => 0.75,
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            DomainSpec::Interval { a, b } => b - a,
            DomainSpec::Square { side } => side * std::f64::consts::SQRT_2,
            DomainSpec::LShape => std::f64::consts::SQRT_2,
        }
    }

    /// Half of the shortest bounding-box side; the length scale of the grading law.
    fn half_width(&self) -> f64 {
        match *self {
            DomainSpec::Interval { a, b } => 0.5 * (b - a),
            DomainSpec::Square { side } => 0.5 * side,
            DomainSpec::LShape => 0.5,
        }
    }

    /// Distance from `x` to the boundary.
    pub fn dist_to_boundary(&self, x: Point) -> f64 {
        match *self {
            DomainSpec::Interval { a, b } => (x[0] - a).abs().min((b - x[0]).abs()),
            _ => {
                let poly = self.polygon();
                (0..poly.len())
                    .map(|i| dist_to_segment(x, poly[i], poly[(i + 1) % poly.len()]))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// Origin of a vertex of a uniformly refined mesh.
#[derive(Debug, Clone)]
struct Lineage {
    coarse_fingerprint: u64,
    /// `(i, i)` for an inherited coarse vertex, `(i, j)` for the midpoint of edge `ij`.
    origin: Vec<(usize, usize)>,
}

/// Result of a star query.
#[derive(Debug, Clone, PartialEq)]
pub enum Star {
    /// A patch of elements.
    Elements(Vec<usize>),
    /// Extended star: element patch plus balls `B(x_T, C h_T)` replacing the
    /// stars of boundary-touching elements.
    Extended {
        elements: Vec<usize>,
        balls: Vec<Ball>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

/// A conforming simplicial mesh.
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<Point>,
    cells: Vec<usize>,
    /// Boundary edges oriented with the domain on the left (2D), or the two
    /// endpoint vertices (1D, stored as `[v, v]`).
    boundary_edges: Vec<[usize; 2]>,
    on_boundary: Vec<bool>,
    dof_of_vertex: Vec<Option<usize>>,
    vertex_of_dof: Vec<usize>,
    diam: Vec<f64>,
    measure: Vec<f64>,
    vertex_cells: Vec<Vec<usize>>,
    mu: f64,
    nominal_h: f64,
    lineage: Option<Lineage>,
    fingerprint: u64,
    locator: OnceLock<Locator>,
    star_radius: OnceLock<f64>,
}

impl Mesh {
    /// Builds a mesh from raw data, deriving boundary information from topology.
    pub fn from_parts(dim: usize, vertices: Vec<Point>, cells: Vec<usize>) -> Result<Mesh> {
        Self::assemble(dim, vertices, cells, 1.0, f64::NAN, None)
    }

    fn assemble(
        dim: usize,
        vertices: Vec<Point>,
        mut cells: Vec<usize>,
        mu: f64,
        nominal_h: f64,
        lineage: Option<Lineage>,
    ) -> Result<Mesh> {
        if dim != 1 && dim != 2 {
            return Err(Error::param(format!("dimension must be 1 or 2, got {dim}")));
        }
        let nv = dim + 1;
        if cells.len() % nv != 0 || cells.is_empty() {
            return Err(Error::Geometry("connectivity length mismatch".into()));
        }
        if let Some(&bad) = cells.iter().find(|&&v| v >= vertices.len()) {
            return Err(Error::Geometry(format!("vertex index {bad} out of range")));
        }
        let ne = cells.len() / nv;
        let mut diam = Vec::with_capacity(ne);
        let mut measure = Vec::with_capacity(ne);
        for e in 0..ne {
            let c = &mut cells[e * nv..(e + 1) * nv];
            if dim == 1 {
                let (a, b) = (vertices[c[0]][0], vertices[c[1]][0]);
                if b < a {
                    c.swap(0, 1);
                }
                let len = (a - b).abs();
                if !(len > 0.0) {
                    return Err(Error::Geometry(format!("element {e} has zero length")));
                }
                diam.push(len);
                measure.push(len);
            } else {
                let (p0, p1, p2) = (vertices[c[0]], vertices[c[1]], vertices[c[2]]);
                let mut area = 0.5 * cross(sub(p1, p0), sub(p2, p0));
                if area < 0.0 {
                    c.swap(1, 2);
                    area = -area;
                }
                if !(area > 0.0) {
                    return Err(Error::Geometry(format!("element {e} is degenerate")));
                }
                diam.push(dist(p0, p1).max(dist(p1, p2)).max(dist(p2, p0)));
                measure.push(area);
            }
        }

        let mut vertex_cells = vec![Vec::new(); vertices.len()];
        for e in 0..ne {
            for &v in &cells[e * nv..(e + 1) * nv] {
                vertex_cells[v].push(e);
            }
        }

        let mut on_boundary = vec![false; vertices.len()];
        let mut boundary_edges = Vec::new();
        if dim == 1 {
            for (v, cs) in vertex_cells.iter().enumerate() {
                if cs.len() == 1 {
                    on_boundary[v] = true;
                    boundary_edges.push([v, v]);
                }
            }
        } else {
            let mut edge_count: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
            for e in 0..ne {
                let c = &cells[e * 3..e * 3 + 3];
                for k in 0..3 {
                    let (a, b) = (c[k], c[(k + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    let entry = edge_count.entry(key).or_insert((0, [a, b]));
                    entry.0 += 1;
                }
            }
            let mut edges: Vec<[usize; 2]> = edge_count
                .into_values()
                .filter(|(n, _)| *n == 1)
                .map(|(_, e)| e)
                .collect();
            edges.sort_unstable();
            for e in &edges {
                on_boundary[e[0]] = true;
                on_boundary[e[1]] = true;
            }
            boundary_edges = edges;
        }
        let isolated = vertex_cells.iter().position(|c| c.is_empty());
        if let Some(v) = isolated {
            return Err(Error::Geometry(format!("vertex {v} belongs to no element")));
        }

        let mut dof_of_vertex = vec![None; vertices.len()];
        let mut vertex_of_dof = Vec::new();
        for v in 0..vertices.len() {
            if !on_boundary[v] {
                dof_of_vertex[v] = Some(vertex_of_dof.len());
                vertex_of_dof.push(v);
            }
        }

        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        dim.hash(&mut hasher);
        for p in &vertices {
            p[0].to_bits().hash(&mut hasher);
            p[1].to_bits().hash(&mut hasher);
        }
        cells.hash(&mut hasher);
        let fingerprint = hasher.finish();

        let nominal_h = if nominal_h.is_nan() {
            diam.iter().copied().fold(0.0, f64::max)
        } else {
            nominal_h
        };

        Ok(Mesh {
            dim,
            vertices,
            cells,
            boundary_edges,
            on_boundary,
            dof_of_vertex,
            vertex_of_dof,
            diam,
            measure,
            vertex_cells,
            mu,
            nominal_h,
            lineage,
            fingerprint,
            locator: OnceLock::new(),
            star_radius: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.diam.len()
    }

    /// Number of interior vertices (degrees of freedom).
    pub fn num_dofs(&self) -> usize {
        self.vertex_of_dof.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    /// Vertex indices of element `e`.
    pub fn element(&self, e: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.cells[e * nv..(e + 1) * nv]
    }

    pub fn element_points(&self, e: usize) -> [Point; 3] {
        let c = self.element(e);
        let p0 = self.vertices[c[0]];
        let p1 = self.vertices[c[1]];
        let p2 = if self.dim == 2 {
            self.vertices[c[2]]
        } else {
            p1
        };
        [p0, p1, p2]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.on_boundary[v]
    }

    pub fn dof(&self, v: usize) -> Option<usize> {
        self.dof_of_vertex[v]
    }

    pub fn dof_vertex(&self, i: usize) -> usize {
        self.vertex_of_dof[i]
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    /// Diameter `h_T` of element `e`.
    pub fn diameter(&self, e: usize) -> f64 {
        self.diam[e]
    }

    pub fn element_measure(&self, e: usize) -> f64 {
        self.measure[e]
    }

    pub fn measure(&self) -> f64 {
        self.measure.iter().sum()
    }

    /// Global mesh size `max h_T`.
    pub fn h_max(&self) -> f64 {
        self.diam.iter().copied().fold(0.0, f64::max)
    }

    pub fn h_min(&self) -> f64 {
        self.diam.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// The mesh-size parameter the generator was called with.
    pub fn nominal_h(&self) -> f64 {
        self.nominal_h
    }

    pub fn grading(&self) -> f64 {
        self.mu
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn barycenter(&self, e: usize) -> Point {
        let c = self.element(e);
        let k = c.len() as f64;
        let mut x = [0.0, 0.0];
        for &v in c {
            x = add(x, self.vertices[v]);
        }
        scale(x, 1.0 / k)
    }

    pub fn touches_boundary(&self, e: usize) -> bool {
        self.element(e).iter().any(|&v| self.on_boundary[v])
    }

    pub fn elements_of_vertex(&self, v: usize) -> &[usize] {
        &self.vertex_cells[v]
    }

    /// Axis-aligned bounding box `(min, max)` of the mesh.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Distance from `x` to the boundary of the meshed domain.
    pub fn dist_to_boundary(&self, x: Point) -> f64 {
        if self.dim == 1 {
            self.boundary_edges
                .iter()
                .map(|e| (x[0] - self.vertices[e[0]][0]).abs())
                .fold(f64::INFINITY, f64::min)
        } else {
            self.boundary_edges
                .iter()
                .map(|e| dist_to_segment(x, self.vertices[e[0]], self.vertices[e[1]]))
                .fold(f64::INFINITY, f64::min)
        }
    }

    /// Lower bound on the distance between elements `a` and `b`
    /// (exact in 1D, circumscribed-disc bound in 2D).
    pub fn element_distance(&self, a: usize, b: usize) -> f64 {
        if self.dim == 1 {
            let (pa, pb) = (self.element_points(a), self.element_points(b));
            let (a0, a1) = (pa[0][0], pa[1][0]);
            let (b0, b1) = (pb[0][0], pb[1][0]);
            (b0 - a1).max(a0 - b1).max(0.0)
        } else {
            let d = dist(self.barycenter(a), self.barycenter(b));
            (d - 2.0 / 3.0 * (self.diam[a] + self.diam[b])).max(0.0)
        }
    }

    /// Shape-regularity constant `max_T h_T / rho_T`, `rho_T` the inscribed-ball diameter.
    pub fn shape_regularity(&self) -> Result<f64> {
        if self.dim == 1 {
            return Ok(1.0);
        }
        let mut sigma: f64 = 0.0;
        for e in 0..self.num_elements() {
            sigma = sigma.max(triangle_shape_ratio(self.element_points(e))?);
        }
        Ok(sigma)
    }

    /// Number of elements sharing at least one vertex with element `e` (including `e`).
    fn first_ring(&self, e: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .element(e)
            .iter()
            .flat_map(|&v| self.vertex_cells[v].iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn patch_ring(&self, patch: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = patch.iter().flat_map(|&t| self.first_ring(t)).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Smallest radius multiplier `C` with `S_T^1 ⊂ B(x_T, C h_T)` over all
    /// boundary-touching elements.
    pub fn extended_star_constant(&self) -> f64 {
        *self.star_radius.get_or_init(|| {
            let mut c: f64 = 0.0;
            for e in 0..self.num_elements() {
                if !self.touches_boundary(e) {
                    continue;
                }
                let xt = self.barycenter(e);
                for t in self.first_ring(e) {
                    for &v in self.element(t) {
                        c = c.max(dist(self.vertices[v], xt) / self.diam[e]);
                    }
                }
            }
            c
        })
    }

    fn star_ball(&self, e: usize) -> Ball {
        Ball {
            center: self.barycenter(e),
            radius: self.extended_star_constant() * self.diam[e],
        }
    }

    /// First or second ring of element `e`, optionally in the extended form
    /// where boundary-touching elements contribute a ball instead of their patch.
    pub fn element_star(&self, e: usize, ring: u8, extended: bool) -> Result<Star> {
        if e >= self.num_elements() {
            return Err(Error::param(format!("element {e} out of range")));
        }
        let s1 = self.first_ring(e);
        match (ring, extended) {
            (1, false) => Ok(Star::Elements(s1)),
            (2, false) => Ok(Star::Elements(self.patch_ring(&s1))),
            (1, true) => {
                if self.touches_boundary(e) {
                    Ok(Star::Extended {
                        elements: Vec::new(),
                        balls: vec![self.star_ball(e)],
                    })
                } else {
                    Ok(Star::Extended {
                        elements: s1,
                        balls: Vec::new(),
                    })
                }
            }
            (2, true) => {
                let mut elements = Vec::new();
                let mut balls = Vec::new();
                for t in self.patch_ring(&s1) {
                    if self.touches_boundary(t) {
                        balls.push(self.star_ball(t));
                    } else {
                        elements.extend(self.first_ring(t));
                    }
                }
                elements.sort_unstable();
                elements.dedup();
                Ok(Star::Extended { elements, balls })
            }
            _ => Err(Error::param(format!("ring must be 1 or 2, got {ring}"))),
        }
    }

    /// Uniform refinement: midpoint bisection in 1D, red refinement in 2D.
    pub fn refine_uniform(&self) -> Mesh {
        let mut vertices = self.vertices.clone();
        let mut origin: Vec<(usize, usize)> = (0..vertices.len()).map(|i| (i, i)).collect();
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *mids.entry(key).or_insert_with(|| {
                vertices.push(scale(add(vertices[a], vertices[b]), 0.5));
                origin.push(key);
                vertices.len() - 1
            })
        };
        let mut cells = Vec::with_capacity(self.cells.len() * 4);
        for e in 0..self.num_elements() {
            let c = self.element(e).to_vec();
            if self.dim == 1 {
                let m = midpoint(c[0], c[1], &mut vertices);
                cells.extend_from_slice(&[c[0], m, m, c[1]]);
            } else {
                let m01 = midpoint(c[0], c[1], &mut vertices);
                let m12 = midpoint(c[1], c[2], &mut vertices);
                let m20 = midpoint(c[2], c[0], &mut vertices);
                cells.extend_from_slice(&[
                    c[0], m01, m20, m01, c[1], m12, m20, m12, c[2], m01, m12, m20,
                ]);
            }
        }
        let lineage = Lineage {
            coarse_fingerprint: self.fingerprint,
            origin,
        };
        Mesh::assemble(
            self.dim,
            vertices,
            cells,
            self.mu,
            0.5 * self.nominal_h,
            Some(lineage),
        )
        .expect("refinement of a valid mesh is valid")
    }

    /// Whether `self` is the uniform refinement of `coarse`.
    pub fn is_refinement_of(&self, coarse: &Mesh) -> bool {
        self.lineage
            .as_ref()
            .is_some_and(|l| l.coarse_fingerprint == coarse.fingerprint)
    }

    /// Exact prolongation of vertex values from `coarse` to this refined mesh.
    pub fn prolongate(&self, coarse: &Mesh, coarse_values: &[f64]) -> Result<Vec<f64>> {
        let lineage = self
            .lineage
            .as_ref()
            .filter(|l| l.coarse_fingerprint == coarse.fingerprint)
            .ok_or_else(|| {
                Error::NotNested(
                    "fine mesh is not the uniform refinement of the coarse mesh".into(),
                )
            })?;
        if coarse_values.len() != coarse.num_vertices() {
            return Err(Error::MeshMismatch(
                "coarse vertex values have the wrong length".into(),
            ));
        }
        Ok(lineage
            .origin
            .iter()
            .map(|&(a, b)| 0.5 * (coarse_values[a] + coarse_values[b]))
            .collect())
    }

    /// Element containing `x` and the barycentric coordinates of `x` in it.
    pub fn locate(&self, x: Point) -> Option<(usize, [f64; 3])> {
        let loc = self.locator.get_or_init(|| Locator::new(self));
        loc.locate(self, x)
    }

    /// Plain-text export: header `dim n_vertices n_elements`, coordinates, connectivity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} {}",
            self.dim,
            self.num_vertices(),
            self.num_elements()
        );
        for p in &self.vertices {
            if self.dim == 1 {
                let _ = writeln!(s, "{:?}", p[0]);
            } else {
                let _ = writeln!(s, "{:?} {:?}", p[0], p[1]);
            }
        }
        for e in 0..self.num_elements() {
            let c: Vec<String> = self.element(e).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", c.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Mesh> {
        let bad = |m: &str| Error::Config(format!("mesh file: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("empty"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad header")))
            .collect::<Result<_>>()?;
        let [dim, nv, ne] = header[..] else {
            return Err(bad("header must be `dim n_vertices n_elements`"));
        };
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let vals: Vec<f64> = lines
                .next()
                .ok_or_else(|| bad("missing vertex"))?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("bad coordinate")))
                .collect::<Result<_>>()?;
            if vals.len() != dim {
                return Err(bad("coordinate count does not match dimension"));
            }
            vertices.push([vals[0], if dim == 2 { vals[1] } else { 0.0 }]);
        }
        let mut cells = Vec::with_capacity(ne * (dim + 1));
        for _ in 0..ne {
            let ids: Vec<usize> = lines
                .next()
                .ok_or_else(|| bad("missing element"))?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("bad index")))
                .collect::<Result<_>>()?;
            if ids.len() != dim + 1 {
                return Err(bad("element arity does not match dimension"));
            }
            cells.extend(ids);
        }
        Mesh::from_parts(dim, vertices, cells)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// `h_T / rho_T` for a triangle.
pub fn triangle_shape_ratio(p: [Point; 3]) -> Result<f64> {
    let area = 0.5 * cross(sub(p[1], p[0]), sub(p[2], p[0])).abs();
    let (a, b, c) = (dist(p[1], p[2]), dist(p[2], p[0]), dist(p[0], p[1]));
    if !(area > 1e-300) {
        return Err(Error::Geometry("degenerate triangle".into()));
    }
    let rho = 4.0 * area / (a + b + c);
    Ok(a.max(b).max(c) / rho)
}

/// Uniform mesh of `(a, b)` with `n` elements.
pub fn uniform_mesh_1d(a: f64, b: f64, n: usize) -> Result<Mesh> {
    DomainSpec::Interval { a, b }.validate()?;
    if n < 2 {
        return Err(Error::param("need at least two elements"));
    }
    let vertices = (0..=n)
        .map(|j| [a + (b - a) * j as f64 / n as f64, 0.0])
        .collect();
    let cells = (0..n).flat_map(|j| [j, j + 1]).collect();
    Mesh::assemble(1, vertices, cells, 1.0, (b - a) / n as f64, None)
}

/// Boundary-graded mesh of `(a, b)`.
///
/// Nodes on each half follow `x_j = b - (b - a)/2 (1 - j/M)^mu` with
/// `M = ceil((b - a) / (2h))`, mirrored about the midpoint, so boundary
/// elements have size `~ h^mu` and interior ones `~ h dist^{(mu-1)/mu}`.
pub fn build_graded_mesh_1d(a: f64, b: f64, h: f64, mu: f64) -> Result<Mesh> {
    DomainSpec::Interval { a, b }.validate()?;
    if !(h > 0.0 && h < 0.5 * (b - a)) {
        return Err(Error::param(format!("h must lie in (0, (b-a)/2), got {h}")));
    }
    if !(mu >= 1.0) {
        return Err(Error::param(format!(
            "grading exponent must be >= 1, got {mu}"
        )));
    }
    let half = 0.5 * (b - a);
    let m = (half / h - 1e-9).ceil().max(1.0) as usize;
    let mid = 0.5 * (a + b);
    // Right half, graded towards b; the left half is its mirror image.
    let right: Vec<f64> = (0..=m)
        .map(|j| b - half * (1.0 - j as f64 / m as f64).powf(mu))
        .collect();
    let mut all: Vec<f64> = right.iter().rev().map(|x| a + (b - x)).collect();
    all.extend(right.iter().skip(1));
    all[m] = mid;
    all[0] = a;
    all[2 * m] = b;
    let n = all.len() - 1;
    let vertices = all.into_iter().map(|x| [x, 0.0]).collect();
    let cells = (0..n).flat_map(|j| [j, j + 1]).collect();
    Mesh::assemble(1, vertices, cells, mu, h, None)
}

/// Triangulation of a polygonal domain with mesh size `h` and boundary
/// grading `mu`.
///
/// The coarse mesh is a structured grid of spacing `h` whose cell diagonals
/// are mirrored across the coordinate axes. For `mu > 1` elements are then
/// refined by longest-edge bisection (with conforming propagation) until
/// `h_T <= h min(1, (dist(x_T, ∂Ω)/L)^{(mu-1)/mu})`, with `L` half the width
/// of the domain.
pub fn build_mesh_2d(domain: &DomainSpec, h: f64, mu: f64) -> Result<Mesh> {
    domain.validate()?;
    if domain.dim() != 2 {
        return Err(Error::param("build_mesh_2d requires a planar domain"));
    }
    if !(mu >= 1.0) {
        return Err(Error::param(format!(
            "grading exponent must be >= 1, got {mu}"
        )));
    }
    let (lo, width) = match *domain {
        DomainSpec::Square { side } => (-0.5 * side, side),
        DomainSpec::LShape => (-0.5, 1.0),
        DomainSpec::Interval { .. } => unreachable!(),
    };
    let mut n = (width / h - 1e-9).ceil() as usize;
    if n % 2 == 1 {
        n += 1;
    }
    if !(h > 0.0) || n < 2 || n > 20_000 {
        return Err(Error::param(format!(
            "mesh size {h} cannot resolve the domain"
        )));
    }
    let spacing = width / n as f64;
    let mut index = vec![usize::MAX; (n + 1) * (n + 1)];
    let mut vertices = Vec::new();
    let keep_cell = |i: usize, j: usize| -> bool {
        let xc = lo + (i as f64 + 0.5) * spacing;
        let yc = lo + (j as f64 + 0.5) * spacing;
        !(matches!(domain, DomainSpec::LShape) && xc > 0.0 && yc < 0.0)
    };
    let mut cells = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if !keep_cell(i, j) {
                continue;
            }
            let mut id = |ii: usize, jj: usize, vertices: &mut Vec<Point>| -> usize {
                let k = jj * (n + 1) + ii;
                if index[k] == usize::MAX {
                    index[k] = vertices.len();
                    vertices.push([lo + ii as f64 * spacing, lo + jj as f64 * spacing]);
                }
                index[k]
            };
            let v00 = id(i, j, &mut vertices);
            let v10 = id(i + 1, j, &mut vertices);
            let v11 = id(i + 1, j + 1, &mut vertices);
            let v01 = id(i, j + 1, &mut vertices);
            let xc = lo + (i as f64 + 0.5) * spacing;
            let yc = lo + (j as f64 + 0.5) * spacing;
            if xc * yc > 0.0 {
                cells.extend_from_slice(&[v00, v10, v11, v00, v11, v01]);
            } else {
                cells.extend_from_slice(&[v00, v10, v01, v10, v11, v01]);
            }
        }
    }
    if mu > 1.0 {
        let scale_len = domain_half_width(domain);
        let target = |x: Point, dom: &DomainSpec| -> f64 {
            let d = dom.dist_to_boundary(x);
            h * (d / scale_len).powf((mu - 1.0) / mu).min(1.0)
        };
        let mut refiner = Bisection::new(vertices, cells);
        loop {
            let marked: Vec<usize> = (0..refiner.cells.len())
                .filter(|&e| refiner.alive[e])
                .filter(|&e| {
                    let c = refiner.cells[e];
                    let p = [
                        refiner.vertices[c[0]],
                        refiner.vertices[c[1]],
                        refiner.vertices[c[2]],
                    ];
                    let hc = dist(p[0], p[1]).max(dist(p[1], p[2])).max(dist(p[2], p[0]));
                    let xc = scale(add(add(p[0], p[1]), p[2]), 1.0 / 3.0);
                    hc > target(xc, domain) * (1.0 + 1e-12)
                })
                .collect();
            if marked.is_empty() {
                break;
            }
            for e in marked {
                refiner.refine(e);
            }
        }
        let (v, c) = refiner.finish();
        vertices = v;
        cells = c;
    }
    Mesh::assemble(2, vertices, cells, mu, h, None)
}

fn domain_half_width(domain: &DomainSpec) -> f64 {
    domain.half_width()
}

/// Conforming longest-edge (LEPP) bisection.
struct Bisection {
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    alive: Vec<bool>,
    edge_cells: HashMap<(usize, usize), Vec<usize>>,
    midpoints: HashMap<(usize, usize), usize>,
}

fn ekey(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl Bisection {
    fn new(vertices: Vec<Point>, flat: Vec<usize>) -> Self {
        let cells: Vec<[usize; 3]> = flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let mut s = Bisection {
            vertices,
            alive: vec![true; cells.len()],
            cells: Vec::new(),
            edge_cells: HashMap::new(),
            midpoints: HashMap::new(),
        };
        for (e, c) in cells.iter().enumerate() {
            s.cells.push(*c);
            s.register(e);
        }
        s
    }

    fn register(&mut self, e: usize) {
        let c = self.cells[e];
        for k in 0..3 {
            self.edge_cells
                .entry(ekey(c[k], c[(k + 1) % 3]))
                .or_default()
                .push(e);
        }
    }

    fn unregister(&mut self, e: usize) {
        let c = self.cells[e];
        for k in 0..3 {
            let key = ekey(c[k], c[(k + 1) % 3]);
            if let Some(v) = self.edge_cells.get_mut(&key) {
                v.retain(|&x| x != e);
            }
        }
    }

    /// Local index `k` such that edge `(c[k], c[k+1])` is the longest, ties
    /// broken by the smaller sorted vertex pair.
    fn longest_edge(&self, e: usize) -> usize {
        let c = self.cells[e];
        let mut best = 0;
        let mut best_len = -1.0;
        let mut best_key = (usize::MAX, usize::MAX);
        for k in 0..3 {
            let (a, b) = (c[k], c[(k + 1) % 3]);
            let len = dist(self.vertices[a], self.vertices[b]);
            let key = ekey(a, b);
            if len > best_len * (1.0 + 1e-12)
                || ((len - best_len).abs() <= 1e-12 * len && key < best_key)
            {
                best = k;
                best_len = len;
                best_key = key;
            }
        }
        best
    }

    fn neighbor(&self, e: usize, k: usize) -> Option<usize> {
        let c = self.cells[e];
        let key = ekey(c[k], c[(k + 1) % 3]);
        self.edge_cells
            .get(&key)
            .and_then(|v| v.iter().copied().find(|&x| x != e))
    }

    fn refine(&mut self, target: usize) {
        while self.alive[target] {
            // Walk the longest-edge propagation path.
            let mut t = target;
            let mut guard = 0;
            loop {
                guard += 1;
                assert!(guard < 10_000, "LEPP walk did not terminate");
                let k = self.longest_edge(t);
                match self.neighbor(t, k) {
                    None => {
                        self.bisect(t, k);
                        break;
                    }
                    Some(nb) => {
                        let kn = self.longest_edge(nb);
                        let c = self.cells[t];
                        let cn = self.cells[nb];
                        if ekey(c[k], c[(k + 1) % 3]) == ekey(cn[kn], cn[(kn + 1) % 3]) {
                            self.bisect(t, k);
                            let kn = self.local_edge(nb, ekey(c[k], c[(k + 1) % 3]));
                            if let Some(kn) = kn {
                                self.bisect(nb, kn);
                            }
                            break;
                        }
                        t = nb;
                    }
                }
            }
        }
    }

    fn local_edge(&self, e: usize, key: (usize, usize)) -> Option<usize> {
        let c = self.cells[e];
        (0..3).find(|&k| ekey(c[k], c[(k + 1) % 3]) == key)
    }

    fn bisect(&mut self, e: usize, k: usize) {
        let c = self.cells[e];
        let (a, b, o) = (c[k], c[(k + 1) % 3], c[(k + 2) % 3]);
        let key = ekey(a, b);
        let m = match self.midpoints.get(&key) {
            Some(&m) => m,
            None => {
                self.vertices
                    .push(scale(add(self.vertices[a], self.vertices[b]), 0.5));
                let m = self.vertices.len() - 1;
                self.midpoints.insert(key, m);
                m
            }
        };
        self.unregister(e);
        self.alive[e] = false;
        for child in [[a, m, o], [m, b, o]] {
            self.cells.push(child);
            self.alive.push(true);
            let id = self.cells.len() - 1;
            self.register(id);
        }
    }

    fn finish(self) -> (Vec<Point>, Vec<usize>) {
        let cells = self
            .cells
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .flat_map(|(c, _)| c.iter().copied())
            .collect();
        (self.vertices, cells)
    }
}

/// Bucket grid for point location.
#[derive(Debug, Clone)]
struct Locator {
    lo: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn new(mesh: &Mesh) -> Locator {
        let (lo, hi) = mesh.bounding_box();
        let ne = mesh.num_elements().max(1);
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-300);
        let per_side = if mesh.dim == 1 {
            ne as f64
        } else {
            (ne as f64).sqrt()
        };
        let cell = extent / per_side.max(1.0);
        let nx = (((hi[0] - lo[0]) / cell).ceil() as usize).max(1);
        let ny = if mesh.dim == 1 {
            1
        } else {
            (((hi[1] - lo[1]) / cell).ceil() as usize).max(1)
        };
        let mut buckets = vec![Vec::new(); nx * ny];
        for e in 0..mesh.num_elements() {
            let c = mesh.element(e);
            let mut elo = [f64::INFINITY; 2];
            let mut ehi = [f64::NEG_INFINITY; 2];
            for &v in c {
                let p = mesh.vertices[v];
                for k in 0..2 {
                    elo[k] = elo[k].min(p[k]);
                    ehi[k] = ehi[k].max(p[k]);
                }
            }
            let i0 = (((elo[0] - lo[0]) / cell).floor().max(0.0) as usize).min(nx - 1);
            let i1 = (((ehi[0] - lo[0]) / cell).floor().max(0.0) as usize).min(nx - 1);
            let (j0, j1) = if mesh.dim == 1 {
                (0, 0)
            } else {
                (
                    (((elo[1] - lo[1]) / cell).floor().max(0.0) as usize).min(ny - 1),
                    (((ehi[1] - lo[1]) / cell).floor().max(0.0) as usize).min(ny - 1),
                )
            };
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(e);
                }
            }
        }
        Locator {
            lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    fn locate(&self, mesh: &Mesh, x: Point) -> Option<(usize, [f64; 3])> {
        let fi = (x[0] - self.lo[0]) / self.cell;
        let fj = if mesh.dim == 1 {
            0.0
        } else {
            (x[1] - self.lo[1]) / self.cell
        };
        if fi < -1e-9 || fj < -1e-9 {
            return None;
        }
        let i = (fi.floor().max(0.0) as usize).min(self.nx - 1);
        let j = (fj.floor().max(0.0) as usize).min(self.ny - 1);
        let tol = 1e-12;
        for &e in &self.buckets[j * self.nx + i] {
            let c = mesh.element(e);
            if mesh.dim == 1 {
                let (a, b) = (mesh.vertices[c[0]][0], mesh.vertices[c[1]][0]);
                let t = (x[0] - a) / (b - a);
                if (-tol..=1.0 + tol).contains(&t) {
                    return Some((e, [1.0 - t, t, 0.0]));
                }
            } else {
                let [p0, p1, p2] = mesh.element_points(e);
                let det = cross(sub(p1, p0), sub(p2, p0));
                let l1 = cross(sub(x, p0), sub(p2, p0)) / det;
                let l2 = cross(sub(p1, p0), sub(x, p0)) / det;
                let l0 = 1.0 - l1 - l2;
                if l0 >= -tol && l1 >= -tol && l2 >= -tol {
                    return Some((e, [l0, l1, l2]));
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_graded_mesh_for_mu_one() {
        let m = build_graded_mesh_1d(-1.0, 1.0, 0.125, 1.0).unwrap();
        assert_eq!(m.num_elements(), 16);
        for e in 0..16 {
            assert!((m.diameter(e) - 0.125).abs() < 1e-14);
        }
        assert_eq!(m.num_dofs(), 15);
    }

    #[test]
    fn graded_mesh_boundary_and_interior_sizes() {
        let h = 0.125;
        let m = build_graded_mesh_1d(-1.0, 1.0, h, 2.0).unwrap();
        // first element has size h^2 on a half-width-one interval
        assert!((m.diameter(0) - h * h).abs() < 1e-14);
        let last = m.num_elements() - 1;
        assert!((m.diameter(last) - h * h).abs() < 1e-14);
        // interior element near distance 0.5: size ~ C h sqrt(0.5) with C = 2
        let e = (0..m.num_elements())
            .min_by(|&a, &b| {
                let da = (m.barycenter(a)[0] + 0.5).abs();
                let db = (m.barycenter(b)[0] + 0.5).abs();
                da.total_cmp(&db)
            })
            .unwrap();
        let ratio = m.diameter(e) / (h * 0.5f64.sqrt());
        assert!((1.0..3.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn graded_mesh_is_symmetric() {
        let m = build_graded_mesh_1d(-1.0, 1.0, 1.0 / 16.0, 2.0).unwrap();
        let n = m.num_vertices();
        for i in 0..n {
            assert!((m.vertex(i)[0] + m.vertex(n - 1 - i)[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn graded_vertex_count_doubles() {
        let counts: Vec<usize> = (3..=6)
            .map(|k| {
                build_graded_mesh_1d(-1.0, 1.0, 2f64.powi(-k), 2.0)
                    .unwrap()
                    .num_vertices()
            })
            .collect();
        for w in counts.windows(2) {
            let r = w[1] as f64 / w[0] as f64;
            assert!((r - 2.0).abs() < 0.1, "{counts:?}");
        }
    }

    #[test]
    fn graded_mesh_rejects_bad_parameters() {
        assert!(build_graded_mesh_1d(1.0, -1.0, 0.1, 1.0).is_err());
        assert!(build_graded_mesh_1d(-1.0, 1.0, 1.5, 1.0).is_err());
        assert!(build_graded_mesh_1d(-1.0, 1.0, 0.1, 0.5).is_err());
    }

    #[test]
    fn partition_property_2d() {
        for dom in [DomainSpec::Square { side: 1.0 }, DomainSpec::LShape] {
            for mu in [1.0, 2.0] {
                let m = build_mesh_2d(&dom, 0.125, mu).unwrap();
                let rel = (m.measure() - dom.measure()).abs() / dom.measure();
                assert!(rel < 1e-12, "{dom:?} mu={mu}: {rel}");
            }
        }
    }

    #[test]
    fn quasi_uniform_square() {
        let h = 0.125;
        let m = build_mesh_2d(&DomainSpec::Square { side: 1.0 }, h, 1.0).unwrap();
        for e in 0..m.num_elements() {
            let ht = m.diameter(e);
            assert!(ht >= h / 2.0 && ht <= 2.0 * h);
        }
        assert_eq!(m.num_dofs(), 49);
    }

    #[test]
    fn grading_keeps_shape_regularity() {
        let dom = DomainSpec::Square { side: 1.0 };
        let s1 = build_mesh_2d(&dom, 0.125, 1.0)
            .unwrap()
            .shape_regularity()
            .unwrap();
        let s2 = build_mesh_2d(&dom, 0.125, 2.0)
            .unwrap()
            .shape_regularity()
            .unwrap();
        assert!((s2 / s1 - 1.0).abs() <= 0.1, "{s1} {s2}");
    }

    #[test]
    fn shape_ratio_reference_triangles() {
        let eq = [[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]];
        let r = triangle_shape_ratio(eq).unwrap();
        // inradius h/(2 sqrt 3): rho = h/sqrt 3, ratio sqrt 3
        assert!((r - 3f64.sqrt()).abs() < 1e-12);
        let right = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let r = triangle_shape_ratio(right).unwrap();
        let inr = (2.0 - 2f64.sqrt()) / 2.0;
        assert!((r - 2f64.sqrt() / (2.0 * inr)).abs() < 1e-12);
        assert!(triangle_shape_ratio([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).is_err());
    }

    #[test]
    fn stars_in_1d() {
        let m = uniform_mesh_1d(0.0, 1.0, 8).unwrap();
        assert_eq!(
            m.element_star(4, 1, false).unwrap(),
            Star::Elements(vec![3, 4, 5])
        );
        assert_eq!(
            m.element_star(4, 2, false).unwrap(),
            Star::Elements(vec![2, 3, 4, 5, 6])
        );
        match m.element_star(0, 1, true).unwrap() {
            Star::Extended { elements, balls } => {
                assert!(elements.is_empty());
                assert_eq!(balls.len(), 1);
                assert!((balls[0].center[0] - 1.0 / 16.0).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        assert!(m.element_star(99, 1, false).is_err());
    }

    #[test]
    fn refine_and_prolongate() {
        let m = build_mesh_2d(&DomainSpec::LShape, 0.25, 1.0).unwrap();
        let f = m.refine_uniform();
        assert_eq!(f.num_elements(), 4 * m.num_elements());
        assert!(f.is_refinement_of(&m));
        let vals: Vec<f64> = m
            .vertices()
            .iter()
            .map(|p| 2.0 * p[0] - p[1] + 0.3)
            .collect();
        let fine = f.prolongate(&m, &vals).unwrap();
        for (p, v) in f.vertices().iter().zip(&fine) {
            assert!((2.0 * p[0] - p[1] + 0.3 - v).abs() < 1e-14);
        }
        assert!(m.prolongate(&f, &fine).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = build_mesh_2d(&DomainSpec::LShape, 0.25, 2.0).unwrap();
        let back = Mesh::from_text(&m.to_text()).unwrap();
        assert_eq!(back.fingerprint(), m.fingerprint());
        assert_eq!(back.num_dofs(), m.num_dofs());
    }

    #[test]
    fn locate_points() {
        let m = build_mesh_2d(&DomainSpec::LShape, 0.125, 2.0).unwrap();
        let (e, l) = m.locate([-0.31, 0.27]).unwrap();
        let [p0, p1, p2] = m.element_points(e);
        let x = add(add(scale(p0, l[0]), scale(p1, l[1])), scale(p2, l[2]));
        assert!(dist(x, [-0.31, 0.27]) < 1e-14);
        assert!(m.locate([0.25, -0.25]).is_none());
    }
}
