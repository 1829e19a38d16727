//! Discrete energy, gradient and Hessian for piecewise-linear functions.
//!
//! Every integral is reduced to a sum `Σ κ |a·u|^p` over weighted terms, where
//! `a` holds basis-function differences (pair terms) or basis values (tail
//! terms). Energy, residual and Jacobian are evaluated from the same terms, so
//! the residual is the exact gradient of the discrete energy.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use faer::Mat;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelFamily};
use crate::mesh::{dist, norm, Mesh, Point};
use crate::quadrature::{
    classify_pair, cone_rule, element_rule, element_rule_degree, tail_rule_1d, tail_rule_2d, ElementPoint, PairClass,
    QuadParams, TailRule,
};
use crate::special::{beta, gauss_legendre};

/// Right-hand side `f`.
#[derive(Clone)]
pub enum Forcing {
    Constant(f64),
    Field(Arc<dyn Fn(Point) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forcing::Constant(v) => write!(f, "Constant({v})"),
            Forcing::Field(_) => write!(f, "Field(..)"),
        }
    }
}

impl Forcing {
    pub fn field(f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Forcing {
        Forcing::Field(Arc::new(f))
    }

    pub fn eval(&self, x: Point) -> f64 {
        match self {
            Forcing::Constant(v) => *v,
            Forcing::Field(f) => f(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Constant(v) if *v == 0.0)
    }

    /// Scales the forcing by `t`.
    pub fn scaled(&self, t: f64) -> Forcing {
        match self {
            Forcing::Constant(v) => Forcing::Constant(t * v),
            Forcing::Field(f) => {
                let f = f.clone();
                Forcing::Field(Arc::new(move |x| t * f(x)))
            }
        }
    }

    /// `‖f‖_{L^q(Ω)}` by elementwise Gauss quadrature.
    pub fn lq_norm(&self, mesh: &Mesh, q: f64) -> f64 {
        let mut acc = 0.0;
        for e in 0..mesh.num_elements() {
            for pt in element_rule(mesh, e, LOAD_ORDER) {
                acc += pt.w * self.eval(pt.x).abs().powf(q);
            }
        }
        acc.powf(1.0 / q)
    }
}

const LOAD_ORDER: usize = 4;

/// Load vector `b_i = ∫_Ω f φ_i` over the interior vertices.
pub fn load_vector(mesh: &Mesh, f: &Forcing) -> Vec<f64> {
    let mut b = vec![0.0; mesh.num_dofs()];
    for e in 0..mesh.num_elements() {
        let c = mesh.element(e);
        for pt in element_rule(mesh, e, LOAD_ORDER) {
            let fx = f.eval(pt.x);
            for (i, &v) in c.iter().enumerate() {
                if let Some(d) = mesh.dof(v) {
                    b[d] += pt.w * fx * pt.phi[i];
                }
            }
        }
    }
    b
}

/// Coefficients of a piecewise-linear function on the interior vertices of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFunction {
    pub mesh_fingerprint: u64,
    pub values: Vec<f64>,
}

impl DiscreteFunction {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_dofs() {
            return Err(Error::MeshMismatch(format!(
                "expected {} coefficients, got {}",
                mesh.num_dofs(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite coefficient".into()));
        }
        Ok(DiscreteFunction { mesh_fingerprint: mesh.fingerprint(), values })
    }

    /// Values at all mesh vertices (zero on the boundary).
    pub fn vertex_values(&self, mesh: &Mesh) -> Vec<f64> {
        vertex_values(mesh, &self.values)
    }

    /// Plain-text dump: one `vertex_index value` line per vertex.
    pub fn to_text(&self, mesh: &Mesh) -> String {
        let mut s = String::new();
        for (v, val) in self.vertex_values(mesh).iter().enumerate() {
            s.push_str(&format!("{v} {val:?}\n"));
        }
        s
    }

    pub fn from_text(mesh: &Mesh, text: &str) -> Result<Self> {
        let mut vals = vec![0.0; mesh.num_vertices()];
        let mut seen = vec![false; mesh.num_vertices()];
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let (Some(i), Some(v)) = (it.next(), it.next()) else {
                return Err(Error::Config(format!("solution file: malformed line `{line}`")));
            };
            let i: usize = i.parse().map_err(|_| Error::Config(format!("solution file: bad index `{i}`")))?;
            let v: f64 = v.parse().map_err(|_| Error::Config(format!("solution file: bad value `{v}`")))?;
            if i >= vals.len() {
                return Err(Error::MeshMismatch(format!("vertex {i} not in mesh")));
            }
            vals[i] = v;
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::MeshMismatch("solution file does not cover every vertex".into()));
        }
        let coeffs = (0..mesh.num_dofs()).map(|d| vals[mesh.dof_vertex(d)]).collect();
        DiscreteFunction::new(mesh, coeffs)
    }
}

/// Extends dof coefficients by zero to all vertices.
pub fn vertex_values(mesh: &Mesh, u: &[f64]) -> Vec<f64> {
    (0..mesh.num_vertices()).map(|v| mesh.dof(v).map_or(0.0, |d| u[d])).collect()
}

/// Per-element Gauss points used by the disjoint-pair fast path.
struct Level {
    n: usize,
    x: Vec<Point>,
    w: Vec<f64>,
    phi: Vec<[f64; 3]>,
}

impl Level {
    fn new(mesh: &Mesh, rule: impl Fn(usize) -> Vec<ElementPoint>) -> Level {
        let mut lv = Level { n: 0, x: Vec::new(), w: Vec::new(), phi: Vec::new() };
        for e in 0..mesh.num_elements() {
            let pts = rule(e);
            lv.n = pts.len();
            for p in pts {
                lv.x.push(p.x);
                lv.w.push(p.w);
                lv.phi.push(p.phi);
            }
        }
        lv
    }
}

/// Which derivatives a pass accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Mode {
    energy: bool,
    grad: bool,
    hess: bool,
}

/// Accumulators of one pass, before the prefactors `c/2p`, `c/2`, `c(p-1)/2`.
struct Acc {
    mode: Mode,
    p: f64,
    floor: f64,
    energy: Neumaier,
    grad: Vec<f64>,
    hess: Vec<f64>,
    n: usize,
}

#[derive(Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

impl Acc {
    /// Adds `κ |a·u|^p` for one term with local dofs `dofs`.
    #[inline]
    fn term(&mut self, kappa: f64, a: &[f64], uloc: &[f64], dofs: &[Option<usize>], partial: &mut f64) {
        let rho: f64 = a.iter().zip(uloc).map(|(x, y)| x * y).sum();
        let p = self.p;
        let r = rho.abs();
        if self.mode.energy {
            *partial += kappa * if p == 2.0 { r * r } else { r.powf(p) };
        }
        if self.mode.grad && r > 0.0 {
            let g = kappa * if p == 2.0 { rho } else { r.powf(p - 1.0) * rho.signum() };
            for (ai, d) in a.iter().zip(dofs) {
                if let Some(d) = d {
                    self.grad[*d] += g * ai;
                }
            }
        }
        if self.mode.hess {
            let h = kappa * if p == 2.0 { 1.0 } else { r.max(self.floor).powf(p - 2.0) };
            if h == 0.0 || !h.is_finite() {
                return;
            }
            for (i, di) in dofs.iter().enumerate() {
                let Some(di) = di else { continue };
                let hai = h * a[i];
                for (j, dj) in dofs.iter().enumerate() {
                    if let Some(dj) = dj {
                        self.hess[*dj * self.n + *di] += hai * a[j];
                    }
                }
            }
        }
    }
}

/// Everything needed to evaluate the discrete energy and its derivatives on a mesh.
pub struct AssemblyContext {
    mesh: Arc<Mesh>,
    kernel: Kernel,
    quad: QuadParams,
    /// Jacobian floor for `|a·u|` relative to `max |u|`, used when `p < 2`.
    pub eps_reg: f64,
    tail: TailRule,
    levels: Vec<Level>,
    orders: Vec<usize>,
    far_level: usize,
    centroid: Vec<Point>,
    radius: Vec<f64>,
    touching: Vec<Vec<usize>>,
    stiffness: OnceLock<Mat<f64>>,
}

impl std::fmt::Debug for AssemblyContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AssemblyContext")
            .field("kernel", &self.kernel)
            .field("quad", &self.quad)
            .field("dofs", &self.mesh.num_dofs())
            .finish()
    }
}

impl AssemblyContext {
    pub fn new(mesh: impl Into<Arc<Mesh>>, kernel: Kernel, quad: QuadParams) -> Result<Self> {
        let mesh = mesh.into();
        quad.validate()?;
        if mesh.dim() != kernel.dim() {
            return Err(Error::MeshMismatch(format!(
                "mesh dimension {} does not match kernel dimension {}",
                mesh.dim(),
                kernel.dim()
            )));
        }
        let tail = if mesh.dim() == 1 {
            tail_rule_1d(&mesh, &kernel)?
        } else {
            let (lo, hi) = mesh.bounding_box();
            let diam = dist(lo, hi);
            let reach = mesh.vertices().iter().map(|&v| norm(v)).fold(0.0, f64::max);
            let r = (quad.outer_radius_factor * diam).max(1.01 * reach);
            tail_rule_2d(&mesh, &kernel, r)?
        };
        let mut orders: Vec<usize> = [0.0, 1.0, 2.0]
            .iter()
            .filter_map(|&r| quad.disjoint_order(r, mesh.dim()))
            .collect();
        orders.dedup();
        let mut levels: Vec<Level> = orders.iter().map(|&k| Level::new(&mesh, |e| element_rule(&mesh, e, k))).collect();
        levels.push(Level::new(&mesh, |e| element_rule_degree(&mesh, e, quad.order_far)));
        let far_level = levels.len() - 1;
        let centroid: Vec<Point> = (0..mesh.num_elements()).map(|e| mesh.barycenter(e)).collect();
        let radius = (0..mesh.num_elements())
            .map(|e| mesh.element(e).iter().map(|&v| dist(mesh.vertex(v), centroid[e])).fold(0.0, f64::max))
            .collect();
        let touching = (0..mesh.num_elements())
            .map(|a| {
                let mut t: Vec<usize> = mesh
                    .element(a)
                    .iter()
                    .flat_map(|&v| mesh.elements_of_vertex(v).iter().copied())
                    .filter(|&b| b > a)
                    .collect();
                t.sort_unstable();
                t.dedup();
                t
            })
            .collect();
        Ok(AssemblyContext {
            mesh,
            kernel,
            quad,
            eps_reg: 1e-10,
            tail,
            levels,
            orders,
            far_level,
            centroid,
            radius,
            touching,
            stiffness: OnceLock::new(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<Mesh> {
        self.mesh.clone()
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn quad(&self) -> &QuadParams {
        &self.quad
    }

    pub fn tail_rule(&self) -> &TailRule {
        &self.tail
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_dofs()
    }

    /// A context on the same mesh and quadrature with another kernel.
    pub fn with_kernel(&self, kernel: Kernel) -> Result<AssemblyContext> {
        if kernel == self.kernel {
            return Ok(self.clone_shallow());
        }
        AssemblyContext::new(self.mesh.clone(), kernel, self.quad.clone())
    }

    fn clone_shallow(&self) -> AssemblyContext {
        AssemblyContext {
            mesh: self.mesh.clone(),
            kernel: self.kernel.clone(),
            quad: self.quad.clone(),
            eps_reg: self.eps_reg,
            tail: self.tail.clone(),
            levels: self
                .levels
                .iter()
                .map(|l| Level { n: l.n, x: l.x.clone(), w: l.w.clone(), phi: l.phi.clone() })
                .collect(),
            orders: self.orders.clone(),
            far_level: self.far_level,
            centroid: self.centroid.clone(),
            radius: self.radius.clone(),
            touching: self.touching.clone(),
            stiffness: self.stiffness.clone(),
        }
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.mesh.num_dofs() {
            return Err(Error::MeshMismatch(format!(
                "expected {} coefficients, got {}",
                self.mesh.num_dofs(),
                u.len()
            )));
        }
        Ok(())
    }

    /// Kernel part `E_G(u)` of the energy.
    pub fn energy_g(&self, u: &[f64]) -> Result<f64> {
        self.check(u)?;
        if self.kernel.p() == 2.0 {
            if let Some(k) = self.stiffness.get() {
                return Ok(0.5 * quad_form(k, u));
            }
        }
        let acc = self.pass(u, Mode { energy: true, grad: false, hess: false }, self.eps_reg);
        Ok(acc.energy.value() * self.kernel.c() / (2.0 * self.kernel.p()))
    }

    /// Total energy `E_G(u) - ⟨f, u⟩`.
    pub fn energy(&self, u: &[f64], f: &Forcing) -> Result<f64> {
        let b = load_vector(&self.mesh, f);
        Ok(self.energy_g(u)? - dot_vec(&b, u))
    }

    /// Gradient of `E_G` (the discrete operator applied to `u`).
    pub fn gradient_g(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check(u)?;
        if self.kernel.p() == 2.0 {
            let k = self.stiffness();
            return Ok(mat_vec(k, u));
        }
        let acc = self.pass(u, Mode { energy: false, grad: true, hess: false }, self.eps_reg);
        let c = 0.5 * self.kernel.c();
        Ok(acc.grad.iter().map(|g| c * g).collect())
    }

    /// Residual `∇E_G(u) - b`.
    pub fn residual(&self, u: &[f64], f: &Forcing) -> Result<Vec<f64>> {
        let b = load_vector(&self.mesh, f);
        let mut r = self.gradient_g(u)?;
        for (ri, bi) in r.iter_mut().zip(&b) {
            *ri -= bi;
        }
        Ok(r)
    }

    /// Hessian of `E_G` at `u`; the `p = 2` stiffness matrix when `p = 2`.
    pub fn jacobian(&self, u: &[f64]) -> Result<Mat<f64>> {
        self.check(u)?;
        if self.kernel.p() == 2.0 {
            return Ok(self.stiffness().clone());
        }
        Ok(self.energy_gradient_hessian(u)?.2)
    }

    /// Energy, gradient and Hessian of `E_G` from a single pass.
    pub fn energy_gradient_hessian(&self, u: &[f64]) -> Result<(f64, Vec<f64>, Mat<f64>)> {
        self.energy_gradient_hessian_with_floor(u, self.eps_reg)
    }

    /// As [`Self::energy_gradient_hessian`] with Jacobian floor `eps_reg · 2 max|u|`.
    pub fn energy_gradient_hessian_with_floor(&self, u: &[f64], eps_reg: f64) -> Result<(f64, Vec<f64>, Mat<f64>)> {
        self.check(u)?;
        let p = self.kernel.p();
        if p == 2.0 {
            let k = self.stiffness();
            let g = mat_vec(k, u);
            return Ok((0.5 * dot_vec(&g, u), g, k.clone()));
        }
        let acc = self.pass(u, Mode { energy: true, grad: true, hess: true }, eps_reg);
        let c = self.kernel.c();
        let n = self.mesh.num_dofs();
        let e = acc.energy.value() * c / (2.0 * p);
        let g = acc.grad.iter().map(|x| 0.5 * c * x).collect();
        let hs = 0.5 * c * (p - 1.0);
        let h = Mat::from_fn(n, n, |i, j| hs * acc.hess[j * n + i]);
        Ok((e, g, h))
    }

    /// The `p = 2`-type matrix `Σ κ a aᵀ` scaled by `c/2`, independent of `u`.
    ///
    /// For `p = 2` this is the Jacobian and `E_G(u) = uᵀKu/2`.
    pub fn stiffness(&self) -> &Mat<f64> {
        self.stiffness.get_or_init(|| {
            let n = self.mesh.num_dofs();
            let mut acc = self.new_acc(Mode { energy: false, grad: false, hess: true }, 2.0, 0.0);
            let zero = vec![0.0; n];
            self.run(&zero, &mut acc);
            let c = 0.5 * self.kernel.c();
            Mat::from_fn(n, n, |i, j| c * acc.hess[j * n + i])
        })
    }

    fn new_acc(&self, mode: Mode, p: f64, floor: f64) -> Acc {
        let n = self.mesh.num_dofs();
        Acc {
            mode,
            p,
            floor,
            energy: Neumaier::default(),
            grad: if mode.grad { vec![0.0; n] } else { Vec::new() },
            hess: if mode.hess { vec![0.0; n * n] } else { Vec::new() },
            n,
        }
    }

    fn pass(&self, u: &[f64], mode: Mode, eps_reg: f64) -> Acc {
        let umax = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let floor = eps_reg * 2.0 * umax;
        let mut acc = self.new_acc(mode, self.kernel.p(), floor);
        self.run(u, &mut acc);
        acc
    }

    fn run(&self, u: &[f64], acc: &mut Acc) {
        let mesh = &*self.mesh;
        let uv = vertex_values(mesh, u);
        self.singular_pairs(&uv, acc);
        self.tail_terms(&uv, acc);
        self.disjoint_pairs(&uv, acc);
    }

    fn singular_pairs(&self, uv: &[f64], acc: &mut Acc) {
        let mesh = &*self.mesh;
        let p = acc.p;
        let d = mesh.dim() as f64;
        let order = self.kernel.s() * p + d;
        let pure = matches!(self.kernel.family(), KernelFamily::Pure);
        let kinks = self.kernel.kinks();
        let mut dofs = [None; 6];
        let mut uloc = [0.0; 6];
        for a in 0..mesh.num_elements() {
            let partners = std::iter::once(a).chain(self.touching[a].iter().copied());
            for b in partners {
                let factor = if a == b { 1.0 } else { 2.0 };
                let cone = cone_rule(mesh, a, b, self.quad.order_singular, None, &kinks);
                let nl = cone.nloc;
                for i in 0..nl {
                    dofs[i] = mesh.dof(cone.verts[i]);
                    uloc[i] = uv[cone.verts[i]];
                }
                let bexp = cone.m as f64 + p - order;
                let moment_pure = if pure { beta(bexp + 1.0, cone.n as f64 + 1.0) } else { 0.0 };
                let mut partial = 0.0;
                for node in &cone.nodes {
                    let ell = norm(node.dx);
                    let moment = if pure { moment_pure } else { self.kernel.radial_moment(bexp, cone.n, ell) };
                    if moment == 0.0 {
                        continue;
                    }
                    let kappa = factor * node.weight * moment * ell.powf(-order);
                    acc.term(kappa, &node.dphi[..nl], &uloc[..nl], &dofs[..nl], &mut partial);
                }
                acc.energy.add(partial);
            }
        }
    }

    fn tail_terms(&self, uv: &[f64], acc: &mut Acc) {
        let mesh = &*self.mesh;
        let nl = mesh.dim() + 1;
        let mut partial = 0.0;
        let mut last = usize::MAX;
        let mut dofs = [None; 3];
        let mut uloc = [0.0; 3];
        for node in &self.tail.nodes {
            if node.element != last {
                acc.energy.add(partial);
                partial = 0.0;
                last = node.element;
                let c = mesh.element(last);
                for i in 0..nl {
                    dofs[i] = mesh.dof(c[i]);
                    uloc[i] = uv[c[i]];
                }
            }
            acc.term(2.0 * node.kappa, &node.phi[..nl], &uloc[..nl], &dofs[..nl], &mut partial);
        }
        acc.energy.add(partial);
    }

    fn disjoint_pairs(&self, uv: &[f64], acc: &mut Acc) {
        let mesh = &*self.mesh;
        let ne = mesh.num_elements();
        let nl = mesh.dim() + 1;
        let horizon = self.kernel.horizon();
        // u at the points of every level
        let uq: Vec<Vec<f64>> = self
            .levels
            .iter()
            .map(|lv| {
                (0..ne)
                    .flat_map(|e| {
                        let c = mesh.element(e);
                        (0..lv.n).map(move |i| {
                            let phi = lv.phi[e * lv.n + i];
                            (0..nl).map(|k| phi[k] * uv[c[k]]).sum::<f64>()
                        })
                    })
                    .collect()
            })
            .collect();
        let mut gq: Vec<Vec<f64>> = self.levels.iter().map(|lv| vec![0.0; if acc.mode.grad { lv.x.len() } else { 0 }]).collect();
        let mut dq: Vec<Vec<f64>> = self.levels.iter().map(|lv| vec![0.0; if acc.mode.hess { lv.x.len() } else { 0 }]).collect();
        let mut hbuf = vec![0.0; 64 * 64];
        let dofs_of = |e: usize| -> [Option<usize>; 3] {
            let c = mesh.element(e);
            let mut d = [None; 3];
            for i in 0..nl {
                d[i] = mesh.dof(c[i]);
            }
            d
        };
        for a in 0..ne {
            let touching = &self.touching[a];
            let mut t = 0;
            let da = dofs_of(a);
            let a_free = da.iter().any(|x| x.is_some());
            for b in (a + 1)..ne {
                if t < touching.len() && touching[t] == b {
                    t += 1;
                    continue;
                }
                let db = dofs_of(b);
                if !a_free && db.iter().all(|x| x.is_none()) {
                    continue;
                }
                let (dlb, dmax, hmax) = if mesh.dim() == 1 {
                    let (pa, pb) = (mesh.element_points(a), mesh.element_points(b));
                    let gap = (pb[0][0] - pa[1][0]).max(pa[0][0] - pb[1][0]);
                    let span = (pb[1][0] - pa[0][0]).abs().max((pa[1][0] - pb[0][0]).abs());
                    (gap, span, mesh.diameter(a).max(mesh.diameter(b)))
                } else {
                    let cd = dist(self.centroid[a], self.centroid[b]);
                    let rr = self.radius[a] + self.radius[b];
                    let hmax = mesh.diameter(a).max(mesh.diameter(b));
                    let crude = (cd - rr).max(0.0);
                    let gap = if crude >= self.quad.far_field_factor * hmax || crude >= horizon {
                        crude
                    } else {
                        triangle_gap(mesh, a, b)
                    };
                    (gap, cd + rr, hmax)
                };
                if dlb >= horizon {
                    continue;
                }
                let ratio = dlb / hmax;
                if mesh.dim() == 1 && (ratio < 1.0 || dmax > horizon) {
                    self.pair_1d_slow(a, b, uv, acc);
                    continue;
                }
                let level = match self.quad.disjoint_order(ratio, mesh.dim()) {
                    None => self.far_level,
                    Some(k) => self.orders.iter().position(|&o| o == k).unwrap_or(0),
                };
                self.pair_fast(level, a, b, &da, &db, &uq[level], &mut gq[level], &mut dq[level], &mut hbuf, acc);
            }
        }
        // scatter point accumulators
        for (l, lv) in self.levels.iter().enumerate() {
            for e in 0..ne {
                let de = dofs_of(e);
                for i in 0..lv.n {
                    let q = e * lv.n + i;
                    let phi = lv.phi[q];
                    if acc.mode.grad {
                        for k in 0..nl {
                            if let Some(d) = de[k] {
                                acc.grad[d] += gq[l][q] * phi[k];
                            }
                        }
                    }
                    if acc.mode.hess && dq[l][q] != 0.0 {
                        for k in 0..nl {
                            let Some(dk) = de[k] else { continue };
                            for m in 0..nl {
                                if let Some(dm) = de[m] {
                                    acc.hess[dm * acc.n + dk] += dq[l][q] * phi[k] * phi[m];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn pair_fast(
        &self,
        level: usize,
        a: usize,
        b: usize,
        da: &[Option<usize>; 3],
        db: &[Option<usize>; 3],
        uq: &[f64],
        gq: &mut [f64],
        dq: &mut [f64],
        hbuf: &mut [f64],
        acc: &mut Acc,
    ) {
        let lv = &self.levels[level];
        let n = lv.n;
        let (oa, ob) = (a * n, b * n);
        let p = acc.p;
        let order = self.kernel.order();
        let pure = matches!(self.kernel.family(), KernelFamily::Pure);
        let half = -0.5 * order;
        let floor_pow = acc.floor.powf(p - 2.0);
        let mut partial = 0.0;
        let mode = acc.mode;
        for i in 0..n {
            let xa = lv.x[oa + i];
            let wa = 2.0 * lv.w[oa + i];
            let ua = uq[oa + i];
            let mut gi = 0.0;
            let mut di = 0.0;
            for j in 0..n {
                let xb = lv.x[ob + j];
                let dx = xa[0] - xb[0];
                let dy = xa[1] - xb[1];
                let r2 = dx * dx + dy * dy;
                let kr = if pure { r2.powf(half) } else { self.kernel.radial(r2.sqrt()) };
                let kappa = wa * lv.w[ob + j] * kr;
                let rho = ua - uq[ob + j];
                let r = rho.abs();
                // r^p, r^{p-1} sign(ρ) and max(r, floor)^{p-2} from one power
                let (ep, gp, hp) = if p == 2.0 {
                    (r * r, rho, 1.0)
                } else if r > 0.0 {
                    let rp = r.powf(p);
                    let hp = if r > acc.floor { rp / (r * r) } else { floor_pow };
                    (rp, rp / rho, hp)
                } else {
                    (0.0, 0.0, floor_pow)
                };
                if mode.energy {
                    partial += kappa * ep;
                }
                if mode.grad {
                    let g = kappa * gp;
                    gi += g;
                    gq[ob + j] -= g;
                }
                if mode.hess {
                    let h = kappa * hp;
                    di += h;
                    dq[ob + j] += h;
                    hbuf[i * n + j] = h;
                }
            }
            if mode.grad {
                gq[oa + i] += gi;
            }
            if mode.hess {
                dq[oa + i] += di;
            }
        }
        acc.energy.add(partial);
        if mode.hess {
            // cross block: -Σ_ij h_ij φ_A(x_i) φ_B(y_j)ᵀ
            let nl = self.mesh.dim() + 1;
            let mut m = [[0.0; 3]; 3];
            for i in 0..n {
                let pa = lv.phi[oa + i];
                let mut row = [0.0; 3];
                for j in 0..n {
                    let h = hbuf[i * n + j];
                    let pb = lv.phi[ob + j];
                    for k in 0..nl {
                        row[k] += h * pb[k];
                    }
                }
                for k in 0..nl {
                    for l in 0..nl {
                        m[k][l] += pa[k] * row[l];
                    }
                }
            }
            for k in 0..nl {
                let Some(dk) = da[k] else { continue };
                for l in 0..nl {
                    let Some(dl) = db[l] else { continue };
                    acc.hess[dl * acc.n + dk] -= m[k][l];
                    acc.hess[dk * acc.n + dl] -= m[k][l];
                }
            }
        }
    }

    /// 1D disjoint pair with adaptive subdivision and exact clipping at the horizon.
    fn pair_1d_slow(&self, a: usize, b: usize, uv: &[f64], acc: &mut Acc) {
        let mesh = &*self.mesh;
        let (ca, cb) = (mesh.element(a), mesh.element(b));
        let (pa, pb) = (mesh.element_points(a), mesh.element_points(b));
        let (a0, a1) = (pa[0][0], pa[1][0]);
        let (b0, b1) = (pb[0][0], pb[1][0]);
        let dofs = [mesh.dof(ca[0]), mesh.dof(ca[1]), mesh.dof(cb[0]), mesh.dof(cb[1])];
        let uloc = [uv[ca[0]], uv[ca[1]], uv[cb[0]], uv[cb[1]]];
        let k = self.quad.order_disjoint;
        let gl = gauss_legendre(k);
        let delta = self.kernel.horizon();
        let mut leaves = Vec::new();
        subdivide(a0, a1, b0, b1, 0, &mut leaves);
        let mut partial = 0.0;
        let mut avec = [0.0; 4];
        for (i0, i1, j0, j1) in leaves {
            // orient so that x runs over the left interval
            let left_is_a = i1 <= j0;
            let (l0, l1, r0, r1) = if left_is_a { (i0, i1, j0, j1) } else { (j0, j1, i0, i1) };
            // pieces of the left interval where the right upper limit is r1 or x + δ
            let mut cuts = vec![l0.max(r0 - delta), l1];
            if r1 - delta > cuts[0] && r1 - delta < l1 {
                cuts.insert(1, r1 - delta);
            }
            if cuts[0] >= l1 {
                continue;
            }
            for seg in cuts.windows(2) {
                let (s0, s1) = (seg[0], seg[1]);
                for (tx, wx) in gl.iter() {
                    let xl = s0 + (s1 - s0) * tx;
                    let top = r1.min(xl + delta);
                    if top <= r0 {
                        continue;
                    }
                    for (ty, wy) in gl.iter() {
                        let xr = r0 + (top - r0) * ty;
                        let w = (s1 - s0) * wx * (top - r0) * wy;
                        let (x, y) = if left_is_a { (xl, xr) } else { (xr, xl) };
                        let r = (x - y).abs();
                        let kappa = 2.0 * w * self.kernel.radial(r);
                        let ta = (x - a0) / (a1 - a0);
                        let tb = (y - b0) / (b1 - b0);
                        avec[0] = 1.0 - ta;
                        avec[1] = ta;
                        avec[2] = -(1.0 - tb);
                        avec[3] = -tb;
                        acc.term(kappa, &avec, &uloc, &dofs, &mut partial);
                    }
                }
            }
        }
        acc.energy.add(partial);
    }
}

fn subdivide(i0: f64, i1: f64, j0: f64, j1: f64, depth: usize, out: &mut Vec<(f64, f64, f64, f64)>) {
    let gap = (j0 - i1).max(i0 - j1);
    let (li, lj) = (i1 - i0, j1 - j0);
    if gap >= li.max(lj) || depth >= 24 {
        out.push((i0, i1, j0, j1));
        return;
    }
    if li >= lj {
        let m = 0.5 * (i0 + i1);
        subdivide(i0, m, j0, j1, depth + 1, out);
        subdivide(m, i1, j0, j1, depth + 1, out);
    } else {
        let m = 0.5 * (j0 + j1);
        subdivide(i0, i1, j0, m, depth + 1, out);
        subdivide(i0, i1, m, j1, depth + 1, out);
    }
}

pub(crate) fn dot_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn mat_vec(m: &Mat<f64>, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let uj = u[j];
        if uj == 0.0 {
            continue;
        }
        let col = m.col(j);
        for i in 0..n {
            out[i] += col[i] * uj;
        }
    }
    out
}

fn quad_form(m: &Mat<f64>, u: &[f64]) -> f64 {
    dot_vec(&mat_vec(m, u), u)
}

/// Writes the nonzero entries of `m` as `row col value` lines (0-based).
pub fn write_matrix_coo(m: &Mat<f64>, path: &Path) -> Result<()> {
    let mut s = format!("{} {}\n", m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                s.push_str(&format!("{i} {j} {v:?}\n"));
            }
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Whether two P1 basis supports are farther apart than `delta`.
pub fn supports_separated(mesh: &Mesh, i: usize, j: usize, delta: f64) -> bool {
    let (vi, vj) = (mesh.dof_vertex(i), mesh.dof_vertex(j));
    let ei = mesh.elements_of_vertex(vi);
    let ej = mesh.elements_of_vertex(vj);
    let mut dmin = f64::INFINITY;
    for &a in ei {
        for &b in ej {
            dmin = dmin.min(element_gap(mesh, a, b));
        }
    }
    dmin > delta
}

/// Exact distance between two elements.
pub fn element_gap(mesh: &Mesh, a: usize, b: usize) -> f64 {
    if mesh.dim() == 1 {
        return mesh.element_distance(a, b);
    }
    if classify_pair(mesh, a, b).map(|c| c != PairClass::Disjoint).unwrap_or(false) {
        return 0.0;
    }
    triangle_gap(mesh, a, b)
}

/// Distance between two non-overlapping triangles.
fn triangle_gap(mesh: &Mesh, a: usize, b: usize) -> f64 {
    let pa = mesh.element_points(a);
    let pb = mesh.element_points(b);
    let mut d = f64::INFINITY;
    for i in 0..3 {
        for j in 0..3 {
            d = d.min(crate::mesh::dist_to_segment(pa[i], pb[j], pb[(j + 1) % 3]));
            d = d.min(crate::mesh::dist_to_segment(pb[j], pa[i], pa[(i + 1) % 3]));
        }
    }
    d
}
