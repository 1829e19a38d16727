//! Quadrature for element-pair double integrals and exterior tails.
//!
//! Pairs of elements sharing at least one vertex are integrated with
//! homogeneous "cone" rules: the product domain is written as a union of
//! cones `{(B + ζX, B + ζY)}` with apex on the shared simplex, so that for
//! piecewise-linear `u` both `x - y` and `u(x) - u(y)` scale linearly in `ζ`.
//! The radial integral `∫ ζ^m (1-ζ)^n ψ(ζℓ/δ) ζ^{p-d-sp} dζ` is evaluated in
//! closed form (pure and truncated kernels) or by Gauss-Jacobi, leaving only
//! smooth angular integrals to quadrature.
//!
//! The exterior tail `T(x) = ∫_{Ω^c} ψ |x-y|^{-d-sp} dy` is evaluated
//! exactly in 1D and as a signed sum over the straight sides of the polygon
//! in 2D.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelFamily};
use crate::mesh::{add, cross, dist, dot, norm, scale, sub, Mesh, Point};
use crate::special::{cos_power_integral, gauss_jacobi, gauss_legendre, graded_rule};

/// Geometric relation between two elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairClass {
    Identical,
    VertexTouching,
    EdgeTouching,
    Disjoint,
}

/// Quadrature orders and far-field controls.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadParams {
    /// Gauss points per direction for the closest disjoint pairs.
    pub order_disjoint: usize,
    /// Angular Gauss points per direction for touching and identical pairs.
    pub order_singular: usize,
    /// Pairs farther apart than this multiple of the larger diameter use the far rule.
    pub far_field_factor: f64,
    /// Outer radius `R` of the exterior split, as a multiple of the domain diameter.
    pub outer_radius_factor: f64,
    /// Polynomial degree of the per-element far-field rule in 2D; in 1D the
    /// far rule has `order_far + 1` Gauss points.
    pub order_far: usize,
}

impl Default for QuadParams {
    fn default() -> Self {
        QuadParams {
            order_disjoint: 6,
            order_singular: 8,
            far_field_factor: 5.0,
            outer_radius_factor: 2.0,
            order_far: 2,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (1..=32).contains(&self.order_disjoint)
            && (2..=32).contains(&self.order_singular)
            && (1..=12).contains(&self.order_far)
            && self.far_field_factor >= 1.0
            && self.outer_radius_factor >= 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("quadrature parameters out of range: {self:?}")))
        }
    }

    /// Gauss points per direction for a disjoint pair at distance ratio
    /// `dist / max(h_A, h_B)`; `None` selects the far-field rule. In 2D the
    /// order drops by 2 beyond ratio 1 and by 3 beyond ratio 2.
    pub(crate) fn disjoint_order(&self, ratio: f64, dim: usize) -> Option<usize> {
        let k = self.order_disjoint;
        if ratio >= self.far_field_factor {
            None
        } else if dim == 1 || ratio < 1.0 {
            Some(k)
        } else if ratio < 2.0 {
            Some(k.saturating_sub(2).max(2))
        } else {
            Some(k.saturating_sub(3).max(2))
        }
    }
}

/// Classifies an element pair by the number of shared vertices.
pub fn classify_pair(mesh: &Mesh, a: usize, b: usize) -> Result<PairClass> {
    let ne = mesh.num_elements();
    if a >= ne || b >= ne {
        return Err(Error::param(format!("element id out of range ({a}, {b})")));
    }
    if a == b {
        return Ok(PairClass::Identical);
    }
    let shared = shared_vertices(mesh, a, b);
    Ok(match (mesh.dim(), shared) {
        (_, 0) => PairClass::Disjoint,
        (1, _) | (2, 1) => PairClass::VertexTouching,
        _ => PairClass::EdgeTouching,
    })
}

pub(crate) fn shared_vertices(mesh: &Mesh, a: usize, b: usize) -> usize {
    let eb = mesh.element(b);
    mesh.element(a).iter().filter(|v| eb.contains(v)).count()
}

/// Collapsed Gauss rule on the reference triangle, exact to degree `2k - 1`;
/// weights sum to 1/2.
pub fn triangle_rule(k: usize) -> Vec<([f64; 2], f64)> {
    let gu = gauss_jacobi(k, 1.0, 0.0);
    let gv = gauss_legendre(k);
    let mut out = Vec::with_capacity(k * k);
    for (u, wu) in gu.iter() {
        for (v, wv) in gv.iter() {
            out.push(([u, (1.0 - u) * v], wu * wv));
        }
    }
    out
}

/// Triangle rule exact to polynomial degree `deg`.
pub(crate) fn triangle_rule_degree(deg: usize) -> Vec<([f64; 2], f64)> {
    match deg {
        0 | 1 => vec![([1.0 / 3.0, 1.0 / 3.0], 0.5)],
        2 => vec![
            ([1.0 / 6.0, 1.0 / 6.0], 1.0 / 6.0),
            ([2.0 / 3.0, 1.0 / 6.0], 1.0 / 6.0),
            ([1.0 / 6.0, 2.0 / 3.0], 1.0 / 6.0),
        ],
        _ => triangle_rule(deg.div_ceil(2)),
    }
}

/// Points of an element rule: position, weight (including the element
/// measure) and the values of the element's nodal basis functions.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ElementPoint {
    pub x: Point,
    pub w: f64,
    pub phi: [f64; 3],
}

/// Gauss rule on element `e`: `k` points in 1D, `k^2` collapsed points in 2D.
pub(crate) fn element_rule(mesh: &Mesh, e: usize, k: usize) -> Vec<ElementPoint> {
    let [p0, p1, p2] = mesh.element_points(e);
    let meas = mesh.element_measure(e);
    if mesh.dim() == 1 {
        gauss_legendre(k)
            .iter()
            .map(|(t, w)| ElementPoint {
                x: [p0[0] + t * (p1[0] - p0[0]), 0.0],
                w: w * meas,
                phi: [1.0 - t, t, 0.0],
            })
            .collect()
    } else {
        map_triangle_rule(&triangle_rule(k), p0, p1, p2, meas)
    }
}

/// Far-field element rule of polynomial degree `deg`.
pub(crate) fn element_rule_degree(mesh: &Mesh, e: usize, deg: usize) -> Vec<ElementPoint> {
    if mesh.dim() == 1 {
        element_rule(mesh, e, deg + 1)
    } else {
        let [p0, p1, p2] = mesh.element_points(e);
        map_triangle_rule(&triangle_rule_degree(deg), p0, p1, p2, mesh.element_measure(e))
    }
}

fn map_triangle_rule(rule: &[([f64; 2], f64)], p0: Point, p1: Point, p2: Point, meas: f64) -> Vec<ElementPoint> {
    rule.iter()
        .map(|&([a, b], w)| ElementPoint {
            x: add(p0, add(scale(sub(p1, p0), a), scale(sub(p2, p0), b))),
            w: 2.0 * meas * w,
            phi: [1.0 - a - b, a, b],
        })
        .collect()
}

/// One angular node of a cone rule.
#[derive(Debug, Clone)]
pub(crate) struct ConeNode {
    /// `x - y` at `ζ = 1`.
    pub dx: Point,
    /// `φ_i(x) - φ_i(y)` at `ζ = 1` for the local vertices of the pair.
    pub dphi: [f64; 6],
    /// Angular weight including the physical Jacobian.
    pub weight: f64,
    /// Base point, `X` and `Y` directions and weight of the overlap
    /// parametrization (filled only when a point rule is materialized).
    pub spread: Vec<(Point, Point, Point, f64)>,
}

/// Homogeneous rule `Σ_nodes weight ∫_0^1 ζ^m (1-ζ)^n F(B + ζX, B + ζY) dζ`.
#[derive(Debug, Clone)]
pub(crate) struct Cone {
    pub m: u32,
    pub n: u32,
    /// Mesh vertices the `dphi` entries refer to.
    pub verts: [usize; 6],
    pub nloc: usize,
    pub nodes: Vec<ConeNode>,
}

/// Cone rule for a touching or identical pair with `k` angular points per
/// direction. `spread` requests the overlap parametrization with that order.
/// `kinks` lists distances where the kernel is not smooth; the 1D touching
/// rule splits its angular interval there.
pub(crate) fn cone_rule(mesh: &Mesh, a: usize, b: usize, k: usize, spread: Option<usize>, kinks: &[f64]) -> Cone {
    let class = classify_pair(mesh, a, b).expect("valid element ids");
    match (mesh.dim(), class) {
        (1, PairClass::Identical) => identical_1d(mesh, a, spread),
        (1, PairClass::VertexTouching) => touching_1d(mesh, a, b, k, spread.is_some(), kinks),
        (2, PairClass::Identical) => identical_2d(mesh, a, k, spread),
        (2, PairClass::EdgeTouching) => edge_2d(mesh, a, b, k, spread),
        (2, PairClass::VertexTouching) => vertex_2d(mesh, a, b, k, spread.is_some()),
        _ => unreachable!("cone rules apply to touching pairs only"),
    }
}

fn verts6(list: &[usize]) -> [usize; 6] {
    let mut v = [usize::MAX; 6];
    v[..list.len()].copy_from_slice(list);
    v
}

fn identical_1d(mesh: &Mesh, e: usize, spread: Option<usize>) -> Cone {
    let c = mesh.element(e);
    let [p0, p1, _] = mesh.element_points(e);
    let h = p1[0] - p0[0];
    let taus = spread.map(gauss_legendre);
    let mut nodes = Vec::with_capacity(2);
    for sign in [1.0, -1.0] {
        let dx = [sign * h, 0.0];
        let mut dphi = [0.0; 6];
        dphi[0] = -sign;
        dphi[1] = sign;
        let mut sp = Vec::new();
        if let Some(r) = &taus {
            for (tau, w) in r.iter() {
                let base = [p0[0] + tau * h, 0.0];
                let x = if sign > 0.0 { [h * (1.0 - tau), 0.0] } else { [-h * tau, 0.0] };
                sp.push((base, x, sub(x, dx), w));
            }
        }
        nodes.push(ConeNode { dx, dphi, weight: h * h, spread: sp });
    }
    Cone { m: 0, n: 1, verts: verts6(&[c[0], c[1]]), nloc: 2, nodes }
}

fn touching_1d(mesh: &Mesh, a: usize, b: usize, k: usize, want: bool, kinks: &[f64]) -> Cone {
    let (ca, cb) = (mesh.element(a), mesh.element(b));
    let v = *ca.iter().find(|x| cb.contains(x)).expect("shared vertex");
    let oa = *ca.iter().find(|&&x| x != v).unwrap();
    let ob = *cb.iter().find(|&&x| x != v).unwrap();
    let pv = mesh.vertex(v);
    let da = sub(mesh.vertex(oa), pv);
    let db = sub(mesh.vertex(ob), pv);
    let (la, lb) = (norm(da), norm(db));
    let w0 = la * lb;
    let gl = gauss_legendre(k);
    let mut nodes = Vec::with_capacity(2 * k);
    // region |ξ| ≥ |η|: X = dA, Y = t dB, and the mirrored region
    for (first, lfix, lvar) in [(true, la, lb), (false, lb, la)] {
        let mut cuts = vec![0.0];
        cuts.extend(kinks.iter().map(|&r| (r - lfix) / lvar).filter(|&t| t > 0.0 && t < 1.0));
        cuts.push(1.0);
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for seg in cuts.windows(2) {
            let (t0, t1) = (seg[0], seg[1]);
            for (x, w) in gl.iter() {
                let t = t0 + (t1 - t0) * x;
                let (xx, yy, dphi) = if first {
                    (da, scale(db, t), [-1.0 + t, 1.0, -t, 0.0, 0.0, 0.0])
                } else {
                    (scale(da, t), db, [-t + 1.0, t, -1.0, 0.0, 0.0, 0.0])
                };
                nodes.push(ConeNode {
                    dx: sub(xx, yy),
                    dphi,
                    weight: w0 * w * (t1 - t0),
                    spread: if want { vec![(pv, xx, yy, 1.0)] } else { Vec::new() },
                });
            }
        }
    }
    Cone { m: 1, n: 0, verts: verts6(&[v, oa, ob]), nloc: 3, nodes }
}

const HEXAGON: [[f64; 2]; 6] = [[1.0, 0.0], [0.0, 1.0], [-1.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [1.0, -1.0]];

fn identical_2d(mesh: &Mesh, e: usize, k: usize, spread: Option<usize>) -> Cone {
    let c = mesh.element(e);
    let p = mesh.element_points(e);
    let (j1, j2) = (sub(p[1], p[0]), sub(p[2], p[0]));
    let area = mesh.element_measure(e);
    let mus = spread.map(|s| triangle_rule(s.max(1)));
    let mut nodes = Vec::with_capacity(6 * k);
    for s in 0..6 {
        let (v0, v1) = (HEXAGON[s], HEXAGON[(s + 1) % 6]);
        for (a, w) in gauss_legendre(k).iter() {
            let q = [v0[0] + a * (v1[0] - v0[0]), v0[1] + a * (v1[1] - v0[1])];
            let dx = add(scale(j1, q[0]), scale(j2, q[1]));
            let chat = [-q[0] - q[1], q[0], q[1]];
            let mut dphi = [0.0; 6];
            dphi[..3].copy_from_slice(&chat);
            let mut sp = Vec::new();
            if let Some(rule) = &mus {
                let mhat = chat.map(|c| c.max(0.0));
                for &([u1, u2], wm) in rule {
                    let mu = [1.0 - u1 - u2, u1, u2];
                    let base = combo(&p, mu);
                    let x = combo(&p, [mhat[0] - mu[0], mhat[1] - mu[1], mhat[2] - mu[2]]);
                    sp.push((base, x, sub(x, dx), 2.0 * wm));
                }
            }
            nodes.push(ConeNode { dx, dphi, weight: 4.0 * area * area * 0.5 * w, spread: sp });
        }
    }
    Cone { m: 1, n: 2, verts: verts6(c), nloc: 3, nodes }
}

fn combo(p: &[Point; 3], l: [f64; 3]) -> Point {
    add(add(scale(p[0], l[0]), scale(p[1], l[1])), scale(p[2], l[2]))
}

fn edge_2d(mesh: &Mesh, a: usize, b: usize, k: usize, spread: Option<usize>) -> Cone {
    let (ca, cb) = (mesh.element(a), mesh.element(b));
    let shared: Vec<usize> = ca.iter().copied().filter(|v| cb.contains(v)).collect();
    let (v0, v1) = (shared[0], shared[1]);
    let oa = *ca.iter().find(|v| !shared.contains(v)).unwrap();
    let ob = *cb.iter().find(|v| !shared.contains(v)).unwrap();
    let p0 = mesh.vertex(v0);
    let e = sub(mesh.vertex(v1), p0);
    let fa = sub(mesh.vertex(oa), p0);
    let fb = sub(mesh.vertex(ob), p0);
    let w0 = 4.0 * mesh.element_measure(a) * mesh.element_measure(b);
    let gl = gauss_legendre(k);
    let tri = triangle_rule(k);
    let mut faces: Vec<([f64; 3], f64)> = Vec::with_capacity(4 * k * k);
    for (x, wx) in gl.iter() {
        for (y, wy) in gl.iter() {
            faces.push(([x, 1.0 - x, y], wx * wy));
            faces.push(([-x, y, 1.0 - x], wx * wy));
        }
    }
    for &([x, y], w) in &tri {
        faces.push(([x, y, 1.0], w));
        faces.push(([-x, 1.0, y], w));
    }
    let taus = spread.map(gauss_legendre);
    let nodes = faces
        .into_iter()
        .map(|([z, s2, t2], w)| {
            let dx = sub(add(scale(e, z), scale(fa, s2)), scale(fb, t2));
            let dphi = [-z - s2 + t2, z, s2, -t2, 0.0, 0.0];
            let mut sp = Vec::new();
            if let Some(r) = &taus {
                for (tau, wt) in r.iter() {
                    let base = add(p0, scale(e, tau));
                    let x = add(scale(e, z.max(0.0) - tau), scale(fa, s2));
                    let y = add(scale(e, z.max(0.0) - z - tau), scale(fb, t2));
                    sp.push((base, x, y, wt));
                }
            }
            ConeNode { dx, dphi, weight: w0 * w, spread: sp }
        })
        .collect();
    Cone { m: 2, n: 1, verts: verts6(&[v0, v1, oa, ob]), nloc: 4, nodes }
}

fn vertex_2d(mesh: &Mesh, a: usize, b: usize, k: usize, want: bool) -> Cone {
    let (ca, cb) = (mesh.element(a), mesh.element(b));
    let v = *ca.iter().find(|x| cb.contains(x)).expect("shared vertex");
    let others = |c: &[usize]| -> [usize; 2] {
        let o: Vec<usize> = c.iter().copied().filter(|&x| x != v).collect();
        [o[0], o[1]]
    };
    let [a1, a2] = others(ca);
    let [b1, b2] = others(cb);
    let pv = mesh.vertex(v);
    let (ea1, ea2) = (sub(mesh.vertex(a1), pv), sub(mesh.vertex(a2), pv));
    let (eb1, eb2) = (sub(mesh.vertex(b1), pv), sub(mesh.vertex(b2), pv));
    let w0 = 4.0 * mesh.element_measure(a) * mesh.element_measure(b);
    let gl = gauss_legendre(k);
    let tri = triangle_rule(k);
    let mut nodes = Vec::with_capacity(2 * k * k * k);
    for (t, wt) in gl.iter() {
        for &([b_1, b_2], wb) in &tri {
            let w = w0 * wt * wb;
            // region I: x on the far edge of A's cone
            let (xh, yh) = ([1.0 - t, t], [b_1, b_2]);
            for (xh, yh) in [(xh, yh), (yh, xh)] {
                let x = add(scale(ea1, xh[0]), scale(ea2, xh[1]));
                let y = add(scale(eb1, yh[0]), scale(eb2, yh[1]));
                nodes.push(ConeNode {
                    dx: sub(x, y),
                    dphi: [-(xh[0] + xh[1]) + (yh[0] + yh[1]), xh[0], xh[1], -yh[0], -yh[1], 0.0],
                    weight: w,
                    spread: if want { vec![(pv, x, y, 1.0)] } else { Vec::new() },
                });
            }
        }
    }
    Cone { m: 3, n: 0, verts: verts6(&[v, a1, a2, b1, b2]), nloc: 5, nodes }
}

/// A materialized rule `Σ w F(x, y) ≈ ∫_A ∫_B F(x, y) dy dx`.
#[derive(Debug, Clone)]
pub struct PairRule {
    pub class: PairClass,
    pub order: usize,
    pub nodes: Vec<(Point, Point, f64)>,
}

impl PairRule {
    pub fn integrate(&self, f: impl Fn(Point, Point) -> f64) -> f64 {
        self.nodes.iter().map(|&(x, y, w)| w * f(x, y)).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.2).sum()
    }
}

/// Point rule for the pair `(a, b)` with order `k`.
///
/// Touching pairs get cone rules with a geometrically graded radial rule, so
/// integrands behaving like `|x - y|^{-d-sp} |u(x) - u(y)|^p` are resolved;
/// disjoint pairs get tensor Gauss rules exact for polynomials of degree
/// `2k - 1` in each variable.
pub fn pair_rule(mesh: &Mesh, a: usize, b: usize, k: usize) -> Result<PairRule> {
    if !(1..=32).contains(&k) {
        return Err(Error::param(format!("quadrature order {k} out of range 1..=32")));
    }
    let class = classify_pair(mesh, a, b)?;
    if class != PairClass::Disjoint && k < 2 {
        return Err(Error::param("cone rules need order at least 2"));
    }
    let mut nodes = Vec::new();
    if class == PairClass::Disjoint {
        let (ra, rb) = (element_rule(mesh, a, k), element_rule(mesh, b, k));
        for pa in &ra {
            for pb in &rb {
                nodes.push((pa.x, pb.x, pa.w * pb.w));
            }
        }
    } else {
        let spread = if mesh.dim() == 1 { k } else { k.div_ceil(2) };
        let cone = cone_rule(mesh, a, b, k, Some(spread), &[]);
        let radial = graded_rule(24, k, 0.3);
        for node in &cone.nodes {
            for (z, wz) in radial.iter() {
                let wr = wz * z.powi(cone.m as i32) * (1.0 - z).powi(cone.n as i32);
                for &(base, x, y, ws) in &node.spread {
                    nodes.push((add(base, scale(x, z)), add(base, scale(y, z)), node.weight * wr * ws));
                }
            }
        }
    }
    Ok(PairRule { class, order: k, nodes })
}

/// One node of an exterior-tail rule.
#[derive(Debug, Clone, Copy)]
pub struct TailNode {
    pub element: usize,
    pub x: Point,
    /// Nodal basis values of `element` at `x`.
    pub phi: [f64; 3],
    /// Weight with `Σ kappa |u(x)|^p ≈ ∫_Ω |u|^p T dx` for P1 functions vanishing on ∂Ω.
    pub kappa: f64,
    /// `T(x)`.
    pub tail: f64,
    /// Part of `T(x)` coming from outside the ball `B_R` (2D only).
    pub outer: f64,
}

/// Quadrature for the exterior interaction `∫_Ω |u|^p T dx`.
#[derive(Debug, Clone)]
pub struct TailRule {
    pub nodes: Vec<TailNode>,
    /// Outer radius used for the near/far split (2D).
    pub radius: Option<f64>,
}

/// Exact exterior tail `T(x)` for `x` in the interval `(a, b)`.
pub fn tail_value_1d(kernel: &Kernel, a: f64, b: f64, x: f64) -> f64 {
    kernel.tail_radial(x - a) + kernel.tail_radial(b - x)
}

const TAIL_ORDER: usize = 16;

/// Tail rule for a 1D mesh.
pub fn tail_rule_1d(mesh: &Mesh, kernel: &Kernel) -> Result<TailRule> {
    if mesh.dim() != 1 || kernel.dim() != 1 {
        return Err(Error::MeshMismatch("tail_rule_1d needs a 1D mesh and kernel".into()));
    }
    let (lo, hi) = mesh.bounding_box();
    let (a, b) = (lo[0], hi[0]);
    let beta = kernel.p() * (1.0 - kernel.s());
    let sp = kernel.s() * kernel.p();
    let horizon = kernel.horizon();
    let gl = gauss_legendre(TAIL_ORDER);
    let gj_sing = gauss_jacobi(TAIL_ORDER, 0.0, beta);
    let gj_reg = gauss_jacobi(TAIL_ORDER, 0.0, kernel.p());
    let mut nodes = Vec::new();
    for e in 0..mesh.num_elements() {
        let c = mesh.element(e);
        let (x0, x1) = (mesh.vertex(c[0])[0], mesh.vertex(c[1])[0]);
        let (b0, b1) = (mesh.is_boundary_vertex(c[0]), mesh.is_boundary_vertex(c[1]));
        if b0 && b1 {
            continue;
        }
        if horizon.is_finite() && (x0 - a).min(b - x1) >= horizon {
            continue;
        }
        let h = x1 - x0;
        if b0 || b1 {
            // u = t u_1 with t the relative distance to the boundary vertex;
            // T splits into the near-side power (dist)^{-sp}/sp and a remainder.
            let (v, dir) = if b0 { (x0, 1.0) } else { (x1, -1.0) };
            let point = |t: f64| v + dir * t * h;
            let phi = |t: f64| if b0 { [1.0 - t, t, 0.0] } else { [t, 1.0 - t, 0.0] };
            let near = |t: f64| if b0 { point(t) - a } else { b - point(t) };
            let singular = |t: f64| near(t).powf(-sp) / sp;
            let remainder = |t: f64| tail_value_1d(kernel, a, b, point(t)) - singular(t);
            let mut node = |t: f64, kappa: f64| {
                let x = point(t);
                let tail = tail_value_1d(kernel, a, b, x);
                nodes.push(TailNode { element: e, x: [x, 0.0], phi: phi(t), kappa, tail, outer: 0.0 });
            };
            for (t, w) in gj_sing.iter() {
                node(t, w * h * t.powf(-beta) * singular(t));
            }
            let mut cuts = vec![0.0, 1.0];
            if horizon.is_finite() {
                cuts.extend([horizon / h, (b - a - horizon) / h].into_iter().filter(|&t| t > 0.0 && t < 1.0));
            }
            cuts.sort_by(f64::total_cmp);
            for (i, seg) in cuts.windows(2).enumerate() {
                let (t0, t1) = (seg[0], seg[1]);
                if i == 0 {
                    for (y, w) in gj_reg.iter() {
                        node(t1 * y, w * t1 * h * y.powf(-kernel.p()) * remainder(t1 * y));
                    }
                } else {
                    for (y, w) in gl.iter() {
                        let t = t0 + (t1 - t0) * y;
                        node(t, w * (t1 - t0) * h * remainder(t));
                    }
                }
            }
        } else {
            let mut cuts = vec![x0];
            if horizon.is_finite() {
                for k in [a + horizon, b - horizon] {
                    if k > x0 && k < x1 {
                        cuts.push(k);
                    }
                }
            }
            cuts.push(x1);
            cuts.sort_by(f64::total_cmp);
            for seg in cuts.windows(2) {
                for (y, w) in gl.iter() {
                    let x = seg[0] + (seg[1] - seg[0]) * y;
                    let tail = tail_value_1d(kernel, a, b, x);
                    if tail == 0.0 {
                        continue;
                    }
                    let t = (x - x0) / h;
                    nodes.push(TailNode {
                        element: e,
                        x: [x, 0.0],
                        phi: [1.0 - t, t, 0.0],
                        kappa: w * (seg[1] - seg[0]) * tail,
                        tail,
                        outer: 0.0,
                    });
                }
            }
        }
    }
    Ok(TailRule { nodes, radius: None })
}

/// Straight sides of the meshed polygon, oriented with the domain on the left.
pub(crate) fn boundary_sides(mesh: &Mesh) -> Vec<(Point, Point)> {
    let edges = mesh.boundary_edges();
    let mut next = std::collections::HashMap::new();
    for e in edges {
        next.insert(e[0], e[1]);
    }
    let mut visited = std::collections::HashSet::new();
    let mut sides = Vec::new();
    for e in edges {
        if visited.contains(&e[0]) {
            continue;
        }
        // walk one boundary loop, merging collinear consecutive edges
        let start = e[0];
        let mut loop_pts = Vec::new();
        let mut v = start;
        loop {
            visited.insert(v);
            loop_pts.push(mesh.vertex(v));
            v = next[&v];
            if v == start {
                break;
            }
        }
        let n = loop_pts.len();
        let corner = |i: usize| -> bool {
            let prev = loop_pts[(i + n - 1) % n];
            let cur = loop_pts[i];
            let nxt = loop_pts[(i + 1) % n];
            let (u, w) = (sub(cur, prev), sub(nxt, cur));
            cross(u, w).abs() > 1e-12 * norm(u) * norm(w)
        };
        let corners: Vec<usize> = (0..n).filter(|&i| corner(i)).collect();
        for (j, &i) in corners.iter().enumerate() {
            let k = corners[(j + 1) % corners.len()];
            sides.push((loop_pts[i], loop_pts[k]));
        }
    }
    sides
}

/// `∫_{Ω^c} ψ(|x-y|/δ) |x-y|^{-2-sp} dy` for `x` inside the polygon bounded by `sides`.
pub fn tail_value_2d(kernel: &Kernel, sides: &[(Point, Point)], x: Point) -> f64 {
    let sp = kernel.s() * kernel.p();
    let mut total = 0.0;
    for &(p, q) in sides {
        let e = sub(q, p);
        let len = norm(e);
        let t = scale(e, 1.0 / len);
        let nrm = [t[1], -t[0]];
        // signed distance: positive when x lies on the domain side (left of p→q)
        let d_signed = cross(e, sub(x, p)) / len;
        let d = d_signed.abs();
        if d < 1e-300 {
            continue;
        }
        let sigma = d_signed.signum();
        let foot = add(x, scale(nrm, d_signed));
        let (tp, tq) = (dot(sub(p, foot), t), dot(sub(q, foot), t));
        let (mut lo, mut hi) = ((tp / d).atan(), (tq / d).atan());
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        let value = match kernel.family() {
            KernelFamily::Pure => {
                d.powf(-sp) / sp * (cos_power_integral(sp, hi) - cos_power_integral(sp, lo))
            }
            KernelFamily::Truncated => {
                let delta = kernel.delta();
                if d >= delta {
                    0.0
                } else {
                    let cap = (d / delta).acos();
                    let (l, h) = (lo.max(-cap), hi.min(cap));
                    if h <= l {
                        0.0
                    } else {
                        (d.powf(-sp) * (cos_power_integral(sp, h) - cos_power_integral(sp, l))
                            - delta.powf(-sp) * (h - l))
                            / sp
                    }
                }
            }
            _ => {
                let gl = gauss_legendre(12);
                let panels = 6;
                let mut acc = 0.0;
                for j in 0..panels {
                    let a = lo + (hi - lo) * j as f64 / panels as f64;
                    let b = lo + (hi - lo) * (j + 1) as f64 / panels as f64;
                    for (y, w) in gl.iter() {
                        let phi = a + (b - a) * y;
                        acc += (b - a) * w * kernel.tail_radial(d / phi.cos());
                    }
                }
                acc
            }
        };
        total += sigma * value;
    }
    total
}

/// Part of `T(x)` from `{|y| > R}`.
fn outer_tail(kernel: &Kernel, x: Point, radius: f64) -> f64 {
    let horizon = kernel.horizon();
    if radius - norm(x) >= horizon {
        return 0.0;
    }
    let n = 96;
    let mut acc = 0.0;
    for j in 0..n {
        let th = 2.0 * PI * (j as f64 + 0.5) / n as f64;
        let u = [th.cos(), th.sin()];
        let b = dot(x, u);
        let r = -b + (radius * radius - dot(x, x) + b * b).sqrt();
        acc += kernel.tail_radial(r);
    }
    acc * 2.0 * PI / n as f64
}

/// Tail rule for a 2D mesh, reporting the split at the ball `B_R(0)`.
pub fn tail_rule_2d(mesh: &Mesh, kernel: &Kernel, radius: f64) -> Result<TailRule> {
    if mesh.dim() != 2 || kernel.dim() != 2 {
        return Err(Error::MeshMismatch("tail_rule_2d needs a 2D mesh and kernel".into()));
    }
    let (lo, hi) = mesh.bounding_box();
    let diam = dist(lo, hi);
    let reach = mesh.vertices().iter().map(|&v| norm(v)).fold(0.0, f64::max);
    if !(radius >= 2.0 * diam && radius > reach) {
        return Err(Error::param(format!("outer radius {radius} too small (need at least {})", 2.0 * diam)));
    }
    let sides = boundary_sides(mesh);
    let beta = kernel.p() * (1.0 - kernel.s());
    let horizon = kernel.horizon();
    let k = TAIL_ORDER;
    let gl = gauss_legendre(k);
    let gj_edge = gauss_jacobi(k, 1.0, beta);
    let gj_vertex = gauss_jacobi(k, 0.0, 1.0 + beta);
    let mut nodes = Vec::new();
    let mut push = |e: usize, x: Point, phi: [f64; 3], w: f64, scale_t: f64| {
        let tail = tail_value_2d(kernel, &sides, x);
        if tail <= 0.0 {
            return;
        }
        let outer = outer_tail(kernel, x, radius);
        nodes.push(TailNode { element: e, x, phi, kappa: w * scale_t * tail, tail, outer });
    };
    for e in 0..mesh.num_elements() {
        let c = mesh.element(e);
        let p = mesh.element_points(e);
        let area = mesh.element_measure(e);
        let on: Vec<bool> = c.iter().map(|&v| mesh.is_boundary_vertex(v)).collect();
        let nb = on.iter().filter(|&&b| b).count();
        if horizon.is_finite() {
            let bc = mesh.barycenter(e);
            if mesh.dist_to_boundary(bc) - mesh.diameter(e) >= horizon {
                continue;
            }
        }
        match nb {
            3 => continue,
            0 => {
                let ratio = mesh.dist_to_boundary(mesh.barycenter(e)) / mesh.diameter(e);
                let kk = if ratio < 2.0 { 5 } else { 3 };
                for ([a, b], w) in triangle_rule(kk) {
                    let lam = [1.0 - a - b, a, b];
                    push(e, combo(&p, lam), lam, 2.0 * area * w, 1.0);
                }
            }
            _ => {
                let boundary_edge = (0..3).find(|&i| {
                    let j = (i + 1) % 3;
                    on[i] && on[j] && is_boundary_edge(mesh, c[i], c[j])
                });
                if let Some(i) = boundary_edge {
                    let (j, o) = ((i + 1) % 3, (i + 2) % 3);
                    for (t, wt) in gj_edge.iter() {
                        for (tau, wtau) in gl.iter() {
                            let mut lam = [0.0; 3];
                            lam[i] = (1.0 - t) * (1.0 - tau);
                            lam[j] = (1.0 - t) * tau;
                            lam[o] = t;
                            push(e, combo(&p, lam), lam, 2.0 * area * wt * wtau, t.powf(-beta));
                        }
                    }
                } else {
                    // split along boundary vertices into subtriangles with one singular vertex each
                    let subs = vertex_subtriangles(&on);
                    for (v, lam_a, lam_b, frac) in subs {
                        for (z, wz) in gj_vertex.iter() {
                            for (a, wa) in gl.iter() {
                                let mut lam = [0.0; 3];
                                for i in 0..3 {
                                    let vi = if i == v { 1.0 } else { 0.0 };
                                    let dir = (1.0 - a) * lam_a[i] + a * lam_b[i] - vi;
                                    lam[i] = vi + z * dir;
                                }
                                push(e, combo(&p, lam), lam, 2.0 * area * frac * wz * wa, z.powf(-beta));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(TailRule { nodes, radius: Some(radius) })
}

fn is_boundary_edge(mesh: &Mesh, a: usize, b: usize) -> bool {
    mesh.boundary_edges().iter().any(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
}

/// Subtriangles `(apex vertex, end A, end B, area fraction)` in barycentric
/// coordinates, each with a single boundary vertex at its apex.
fn vertex_subtriangles(on: &[bool]) -> Vec<(usize, [f64; 3], [f64; 3], f64)> {
    let unit = |i: usize| {
        let mut l = [0.0; 3];
        l[i] = 1.0;
        l
    };
    let bnd: Vec<usize> = (0..3).filter(|&i| on[i]).collect();
    if bnd.len() == 1 {
        let v = bnd[0];
        return vec![(v, unit((v + 1) % 3), unit((v + 2) % 3), 1.0)];
    }
    // chord between two boundary vertices: split at its midpoint
    let (v, w) = (bnd[0], bnd[1]);
    let o = 3 - v - w;
    let mut mid = [0.0; 3];
    mid[v] = 0.5;
    mid[w] = 0.5;
    vec![(v, mid, unit(o), 0.5), (w, mid, unit(o), 0.5)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh_2d, uniform_mesh_1d, DomainSpec};

    #[test]
    fn classify_1d() {
        let m = uniform_mesh_1d(0.0, 1.0, 8).unwrap();
        assert_eq!(classify_pair(&m, 3, 3).unwrap(), PairClass::Identical);
        assert_eq!(classify_pair(&m, 3, 4).unwrap(), PairClass::VertexTouching);
        assert_eq!(classify_pair(&m, 3, 5).unwrap(), PairClass::Disjoint);
        assert!(classify_pair(&m, 3, 8).is_err());
    }

    #[test]
    fn classify_2d_against_geometry() {
        let m = build_mesh_2d(&DomainSpec::Square { side: 1.0 }, 0.25, 1.0).unwrap();
        for a in 0..m.num_elements() {
            for b in 0..m.num_elements() {
                let cls = classify_pair(&m, a, b).unwrap();
                let pa = m.element_points(a);
                let pb = m.element_points(b);
                let mut dmin = f64::INFINITY;
                for x in pa {
                    for y in pb {
                        dmin = dmin.min(dist(x, y));
                    }
                }
                if cls == PairClass::Disjoint {
                    assert!(dmin > 0.0);
                } else {
                    assert_eq!(dmin, 0.0);
                }
            }
        }
    }

    #[test]
    fn triangle_rule_exactness() {
        for k in 1..7 {
            let r = triangle_rule(k);
            for i in 0..(2 * k) {
                for j in 0..(2 * k - i) {
                    let q: f64 = r.iter().map(|([x, y], w)| w * x.powi(i as i32) * y.powi(j as i32)).sum();
                    // ∫ x^i y^j over the reference triangle = i! j! / (i + j + 2)!
                    let f = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
                    let exact = f(i) * f(j) / f(i + j + 2);
                    assert!((q - exact).abs() < 1e-14, "k={k} i={i} j={j}");
                }
            }
        }
        let r = triangle_rule_degree(2);
        let q: f64 = r.iter().map(|([x, y], w)| w * x * y).sum();
        assert!((q - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn identical_1d_power_integral() {
        let m = uniform_mesh_1d(0.0, 1.0, 1).unwrap_or_else(|_| {
            Mesh::from_parts(1, vec![[0.0, 0.0], [1.0, 0.0]], vec![0, 1]).unwrap()
        });
        let rule = pair_rule(&m, 0, 0, 8).unwrap();
        let q = rule.integrate(|x, y| (x[0] - y[0]).abs().sqrt());
        assert!((q - 8.0 / 15.0).abs() < 1e-8, "{q}");
        assert!(rule.nodes.iter().all(|n| n.2 > 0.0 && n.0 != n.1));
    }

    #[test]
    fn constants_are_integrated_exactly() {
        let m1 = uniform_mesh_1d(-1.0, 1.0, 6).unwrap();
        let m2 = build_mesh_2d(&DomainSpec::LShape, 0.25, 1.0).unwrap();
        for m in [&m1, &m2] {
            for a in 0..m.num_elements() {
                for b in 0..m.num_elements() {
                    if classify_pair(m, a, b).unwrap() == PairClass::Disjoint && (a + b) % 7 != 0 {
                        continue;
                    }
                    let r = pair_rule(m, a, b, 4).unwrap();
                    let exact = m.element_measure(a) * m.element_measure(b);
                    assert!((r.total_weight() / exact - 1.0).abs() < 1e-12, "{:?}", r.class);
                }
            }
        }
    }

    #[test]
    fn cone_nodes_reproduce_differences() {
        let m = build_mesh_2d(&DomainSpec::LShape, 0.25, 2.0).unwrap();
        let u: Vec<f64> = m.vertices().iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[1]).collect();
        for a in 0..m.num_elements().min(40) {
            for b in 0..m.num_elements() {
                if classify_pair(&m, a, b).unwrap() == PairClass::Disjoint {
                    continue;
                }
                let cone = cone_rule(&m, a, b, 3, Some(2), &[]);
                for node in &cone.nodes {
                    for &(base, x, y, _) in &node.spread {
                        let z = 0.37;
                        let (px, py) = (add(base, scale(x, z)), add(base, scale(y, z)));
                        let dx = sub(px, py);
                        assert!(dist(dx, scale(node.dx, z)) < 1e-13);
                        let ux = eval(&m, a, px, &u);
                        let uy = eval(&m, b, py, &u);
                        let du: f64 = (0..cone.nloc).map(|i| node.dphi[i] * u[cone.verts[i]]).sum();
                        assert!((ux - uy - z * du).abs() < 1e-12);
                    }
                }
            }
        }
    }

    fn eval(m: &Mesh, e: usize, x: Point, u: &[f64]) -> f64 {
        let [p0, p1, p2] = m.element_points(e);
        let det = cross(sub(p1, p0), sub(p2, p0));
        let l1 = cross(sub(x, p0), sub(p2, p0)) / det;
        let l2 = cross(sub(p1, p0), sub(x, p0)) / det;
        assert!(l1 > -1e-12 && l2 > -1e-12 && l1 + l2 < 1.0 + 1e-12, "point outside element");
        let c = m.element(e);
        (1.0 - l1 - l2) * u[c[0]] + l1 * u[c[1]] + l2 * u[c[2]]
    }

    #[test]
    fn tail_1d_reference_values() {
        let k = Kernel::pure(1, 0.5, 2.0, false).unwrap();
        assert!((tail_value_1d(&k, -1.0, 1.0, 0.0) - 2.0).abs() < 1e-15);
        let kt = Kernel::new(KernelFamily::Truncated, 1, 0.5, 2.0, 0.2, false).unwrap();
        assert_eq!(tail_value_1d(&kt, -1.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn tail_2d_matches_interval_free_formula_for_disc_like_check() {
        // Square centered at the origin: symmetric directions agree.
        let m = build_mesh_2d(&DomainSpec::Square { side: 1.0 }, 0.25, 1.0).unwrap();
        let sides = boundary_sides(&m);
        assert_eq!(sides.len(), 4);
        let k = Kernel::pure(2, 0.4, 2.5, false).unwrap();
        let t = |x: Point| tail_value_2d(&k, &sides, x);
        let v = [t([0.2, 0.0]), t([-0.2, 0.0]), t([0.0, 0.2]), t([0.0, -0.2])];
        for w in v {
            assert!((w - v[0]).abs() < 1e-10 * v[0]);
        }
    }

    #[test]
    fn l_shape_sides() {
        let m = build_mesh_2d(&DomainSpec::LShape, 0.125, 2.0).unwrap();
        let sides = boundary_sides(&m);
        assert_eq!(sides.len(), 6);
    }
}
