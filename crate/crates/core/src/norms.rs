//! Fractional seminorms, energy norms, Besov difference quotients and rate fits.

use crate::assembly::{vertex_values, AssemblyContext};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::mesh::{Mesh, Point};
use crate::quadrature::element_rule;
use crate::special::{gauss_legendre, Rule1d};

/// Which norm a [`NormReport`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormFamily {
    /// `W̃^s_p` seminorm of the zero extension.
    Wsp,
    /// Kernel energy norm.
    Energy,
    /// Second-difference `B^σ_{p,∞}` seminorm.
    Besov,
}

impl NormFamily {
    pub fn name(&self) -> &'static str {
        match self {
            NormFamily::Wsp => "wsp",
            NormFamily::Energy => "energy",
            NormFamily::Besov => "besov",
        }
    }

    pub fn parse(s: &str) -> Result<NormFamily> {
        match s {
            "wsp" => Ok(NormFamily::Wsp),
            "energy" => Ok(NormFamily::Energy),
            "besov" => Ok(NormFamily::Besov),
            _ => Err(Error::Config(format!("unknown norm family `{s}`"))),
        }
    }
}

/// A computed norm with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    pub family: NormFamily,
    pub value: f64,
    /// `s` for Sobolev and energy norms, `σ` for Besov.
    pub order: f64,
    pub p: f64,
    /// Besov only: `(lag, quotient)` for every sampled lag, largest lag first.
    pub quotients: Vec<(f64, f64)>,
    /// Free-form description of the discretization.
    pub metadata: String,
}

impl NormReport {
    pub fn csv_header() -> &'static str {
        "family,order,p,value,metadata"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:.12e},{}", self.family.name(), self.order, self.p, self.value, self.metadata)
    }
}

/// `‖u‖_{W̃^s_p}` with the kernel's `s` and `p`.
///
/// Uses the context's own rules when its kernel is the normalized pure one,
/// otherwise a pure context on the same mesh.
pub fn wsp_norm(ctx: &AssemblyContext, u: &[f64]) -> Result<f64> {
    let k = ctx.kernel();
    wsp_norm_with(ctx, u, k.s(), k.p())
}

/// `‖u‖_{W̃^s_p}` for arbitrary `s` and `p` on the context's mesh.
pub fn wsp_norm_with(ctx: &AssemblyContext, u: &[f64], s: f64, p: f64) -> Result<f64> {
    let k = ctx.kernel();
    let pure = Kernel::pure(k.dim(), s, p, true)?;
    let e = if *k == pure {
        ctx.energy_g(u)?
    } else {
        ctx.with_kernel(pure)?.energy_g(u)?
    };
    Ok((p * e.max(0.0)).powf(1.0 / p))
}

/// `((1/2) ∬ ψ |u(x)-u(y)|^p |x-y|^{-d-sp})^{1/p}` for the context's kernel.
pub fn energy_norm(ctx: &AssemblyContext, u: &[f64]) -> Result<f64> {
    let k = ctx.kernel();
    let e = ctx.energy_g(u)?;
    Ok((k.p() * e.max(0.0) / k.c()).powf(1.0 / k.p()))
}

/// [`wsp_norm`] of `prolongate(u_h) - u_{h/2}` on the fine mesh.
pub fn error_proxy(coarse: &Mesh, u_h: &[f64], fine: &AssemblyContext, u_h2: &[f64]) -> Result<f64> {
    let fine_mesh = fine.mesh();
    if u_h.len() != coarse.num_dofs() || u_h2.len() != fine_mesh.num_dofs() {
        return Err(Error::MeshMismatch("coefficient vectors do not match the meshes".into()));
    }
    let up = fine_mesh.prolongate(coarse, &vertex_values(coarse, u_h))?;
    let diff: Vec<f64> = (0..fine_mesh.num_dofs()).map(|d| up[fine_mesh.dof_vertex(d)] - u_h2[d]).collect();
    wsp_norm(fine, &diff)
}

/// Dyadic lags `2^{-2} .. 2^{-9}` times `diam`.
pub fn dyadic_lags(diam: f64) -> Vec<f64> {
    (2..=9).map(|k| diam * 0.5f64.powi(k)).collect()
}

/// Second-difference Besov seminorm `sup_h ‖v(·+h) - 2v + v(·-h)‖_{L^p(Ω_|h|)} / |h|^σ`.
///
/// `v` is evaluated pointwise; the mesh supplies the integration region and
/// the lag floor `2 min h_T`. Lags default to [`dyadic_lags`]. In 2D the lag
/// directions are 16 equally spaced angles in `[0, π)`.
pub fn besov_seminorm(
    mesh: &Mesh,
    v: &dyn Fn(Point) -> f64,
    sigma: f64,
    p: f64,
    lags: Option<&[f64]>,
) -> Result<NormReport> {
    if !(sigma > 0.0 && sigma < 2.0) {
        return Err(Error::param(format!("sigma must lie in (0, 2), got {sigma}")));
    }
    if !(p >= 1.0) {
        return Err(Error::param(format!("p must be at least 1, got {p}")));
    }
    let default = dyadic_lags(bounding_diameter(mesh));
    let floor = 2.0 * mesh.h_min();
    let lags: Vec<f64> = lags.unwrap_or(&default).iter().copied().filter(|&h| h >= floor).collect();
    if lags.is_empty() {
        return Err(Error::param("no lag resolves the mesh"));
    }
    let mut quotients = Vec::with_capacity(lags.len());
    for &h in &lags {
        let lp = if mesh.dim() == 1 {
            second_difference_1d(mesh, v, h, p)
        } else {
            (0..16)
                .map(|k| {
                    let t = std::f64::consts::PI * k as f64 / 16.0;
                    second_difference_2d(mesh, v, [h * t.cos(), h * t.sin()], p)
                })
                .fold(0.0, f64::max)
        };
        quotients.push((h, lp / h.powf(sigma)));
    }
    let value = quotients.iter().map(|q| q.1).fold(0.0, f64::max);
    Ok(NormReport {
        family: NormFamily::Besov,
        value,
        order: sigma,
        p,
        metadata: format!("lags={} dirs={}", lags.len(), if mesh.dim() == 1 { 1 } else { 16 }),
        quotients,
    })
}

/// [`besov_seminorm`] of a piecewise-linear function given by its dof coefficients.
pub fn besov_seminorm_discrete(mesh: &Mesh, u: &[f64], sigma: f64, p: f64, lags: Option<&[f64]>) -> Result<NormReport> {
    if u.len() != mesh.num_dofs() {
        return Err(Error::MeshMismatch("coefficient vector does not match the mesh".into()));
    }
    let uv = vertex_values(mesh, u);
    let eval = |x: Point| -> f64 {
        match mesh.locate(x) {
            Some((e, lam)) => mesh.element(e).iter().zip(lam).map(|(&v, l)| l * uv[v]).sum(),
            None => 0.0,
        }
    };
    besov_seminorm(mesh, &eval, sigma, p, lags)
}

fn bounding_diameter(mesh: &Mesh) -> f64 {
    let (lo, hi) = mesh.bounding_box();
    ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
}

/// `‖Δ²_h v‖_{L^p}` over points farther than `h` from the ends of the interval.
fn second_difference_1d(mesh: &Mesh, v: &dyn Fn(Point) -> f64, h: f64, p: f64) -> f64 {
    let (lo, hi) = mesh.bounding_box();
    let (a, b) = (lo[0] + h, hi[0] - h);
    if a >= b {
        return 0.0;
    }
    let mut cuts: Vec<f64> = vec![a, b];
    for x in mesh.vertices() {
        for shift in [-h, 0.0, h] {
            let c = x[0] + shift;
            if c > a && c < b {
                cuts.push(c);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    let f = |x: f64| (v([x + h, 0.0]) - 2.0 * v([x, 0.0]) + v([x - h, 0.0])).abs().powf(p);
    let total = integrate_panels(&f, &cuts);
    total.powf(1.0 / p)
}

/// `∫_a^b f` over the panels `cuts` to absolute accuracy about `1e-11` of the total.
fn integrate_panels(f: &dyn Fn(f64) -> f64, cuts: &[f64]) -> f64 {
    let rough: f64 = cuts.windows(2).map(|c| fixed(f, c[0], c[1], 16).abs()).sum();
    if rough == 0.0 {
        return 0.0;
    }
    let tol = 1e-11 * rough;
    let span = cuts[cuts.len() - 1] - cuts[0];
    cuts.windows(2).map(|c| adaptive(f, c[0], c[1], tol * (c[1] - c[0]) / span, 0)).sum()
}

/// Adaptive Gauss–Legendre integration comparing 8 and 16 points.
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let coarse = fixed(f, a, b, 8);
    let fine = fixed(f, a, b, 16);
    if depth >= 50 || (coarse - fine).abs() <= tol {
        return fine;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, 0.5 * tol, depth + 1) + adaptive(f, m, b, 0.5 * tol, depth + 1)
}

fn fixed(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    static RULES: std::sync::OnceLock<(Rule1d, Rule1d)> = std::sync::OnceLock::new();
    let (r8, r16) = RULES.get_or_init(|| (gauss_legendre(8), gauss_legendre(16)));
    let rule = if n == 8 { r8 } else { r16 };
    rule.iter().map(|(t, w)| (b - a) * w * f(a + (b - a) * t)).sum()
}

/// 2D analogue of [`second_difference_1d`] on a fixed Gauss rule per element.
fn second_difference_2d(mesh: &Mesh, v: &dyn Fn(Point) -> f64, h: Point, p: f64) -> f64 {
    let hn = (h[0] * h[0] + h[1] * h[1]).sqrt();
    let mut total = 0.0;
    for e in 0..mesh.num_elements() {
        for pt in element_rule(mesh, e, 6) {
            let x = pt.x;
            if mesh.dist_to_boundary(x) <= hn {
                continue;
            }
            let d2 = v([x[0] + h[0], x[1] + h[1]]) - 2.0 * v(x) + v([x[0] - h[0], x[1] - h[1]]);
            total += pt.w * d2.abs().powf(p);
        }
    }
    total.powf(1.0 / p)
}

/// Observed convergence rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    /// `log(e_i/e_{i+1}) / log(h_i/h_{i+1})` for consecutive entries.
    pub rates: Vec<f64>,
    /// Least-squares slope of `log e` against `log h`.
    pub fitted_rate: f64,
}

pub fn fit_rates(h: &[f64], errors: &[f64]) -> Result<RateTable> {
    if h.len() != errors.len() || h.len() < 2 {
        return Err(Error::Fit("need at least two (h, error) pairs".into()));
    }
    if h.iter().chain(errors).any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Fit("mesh sizes and errors must be positive".into()));
    }
    let rates = (0..h.len() - 1)
        .map(|i| (errors[i] / errors[i + 1]).ln() / (h[i] / h[i + 1]).ln())
        .collect();
    let xs: Vec<f64> = h.iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|x| x.ln()).collect();
    let (slope, _, _) = least_squares(&xs, &ys);
    Ok(RateTable { h: h.to_vec(), errors: errors.to_vec(), rates, fitted_rate: slope })
}

/// Slope, intercept and RMS residual of the least-squares line through `(x, y)`.
pub(crate) fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rms = (x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    (slope, icpt, rms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use crate::mesh::{build_mesh_2d, uniform_mesh_1d, DomainSpec};
    use crate::quadrature::QuadParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn wsp_of_zero_and_p2_identity() {
        let mesh = uniform_mesh_1d(-1.0, 1.0, 10).unwrap();
        let ctx = AssemblyContext::new(mesh.clone(), Kernel::pure(1, 0.4, 2.0, true).unwrap(), QuadParams::default()).unwrap();
        assert_eq!(wsp_norm(&ctx, &vec![0.0; mesh.num_dofs()]).unwrap(), 0.0);
        let u = random(mesh.num_dofs(), 1);
        let k = ctx.stiffness();
        let ku = crate::assembly::mat_vec(k, &u);
        let quad: f64 = u.iter().zip(&ku).map(|(a, b)| a * b).sum();
        let w = wsp_norm(&ctx, &u).unwrap();
        assert!((w * w / quad - 1.0).abs() < 1e-10);
    }

    /// Brute-force `∬_{R×R} |u(x)-u(y)|^2 / |x-y|^2` for the hat at 0 on
    /// (-1, 1) with four elements, via the lag integral over `h > 0`.
    #[test]
    fn single_hat_matches_adaptive_oracle() {
        let mesh = uniform_mesh_1d(-1.0, 1.0, 4).unwrap();
        let ctx = AssemblyContext::new(mesh.clone(), Kernel::pure(1, 0.5, 2.0, true).unwrap(), QuadParams::default()).unwrap();
        let hat = |x: f64| (1.0 - 2.0 * x.abs()).max(0.0);
        let u: Vec<f64> = (0..mesh.num_dofs()).map(|d| hat(mesh.vertex(mesh.dof_vertex(d))[0])).collect();
        // I(h) = ∫ |hat(x+h) - hat(x)|^2 dx, integrated adaptively in x
        let shift = |h: f64| {
            let mut cuts = vec![-1.5, -0.5, 0.0, 0.5, 1.0, -0.5 - h, -h, 0.5 - h];
            cuts.sort_by(f64::total_cmp);
            integrate_panels(&|x: f64| (hat(x + h) - hat(x)).powi(2), &cuts)
        };
        // ∫_0^∞ I(h) h^{-2} dh: I(h) = 4h^2 (1 - ...) near 0; split [0, 1] and [1, ∞)
        let near = integrate_panels(&|h: f64| shift(h) / (h * h), &[0.0, 0.5, 1.0]);
        let l2sq = 2.0 * integrate_panels(&|x: f64| hat(x).powi(2), &[-0.5, 0.0, 0.5]);
        let full = 2.0 * (near + l2sq);
        let want = (0.5 * ctx.kernel().c() * full).sqrt();
        let got = wsp_norm(&ctx, &u).unwrap();
        assert!((got / want - 1.0).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn homogeneity_and_triangle_inequality() {
        let mesh = build_mesh_2d(&DomainSpec::Square { side: 1.0 }, 0.3, 1.0).unwrap();
        let ctx = AssemblyContext::new(mesh.clone(), Kernel::pure(2, 0.6, 2.5, true).unwrap(), QuadParams::default()).unwrap();
        let u = random(mesh.num_dofs(), 3);
        let v = random(mesh.num_dofs(), 4);
        let nu = wsp_norm(&ctx, &u).unwrap();
        let u3: Vec<f64> = u.iter().map(|x| -2.5 * x).collect();
        assert!((wsp_norm(&ctx, &u3).unwrap() / (2.5 * nu) - 1.0).abs() < 1e-12);
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        assert!(wsp_norm(&ctx, &w).unwrap() <= nu + wsp_norm(&ctx, &v).unwrap() + 1e-10);
    }

    #[test]
    fn energy_norm_relations() {
        let mesh = uniform_mesh_1d(-1.0, 1.0, 12).unwrap();
        let u = random(mesh.num_dofs(), 8);
        let pure = AssemblyContext::new(mesh.clone(), Kernel::pure(1, 0.5, 3.0, true).unwrap(), QuadParams::default()).unwrap();
        let c = pure.kernel().c();
        let ratio = energy_norm(&pure, &u).unwrap() / wsp_norm(&pure, &u).unwrap();
        assert!((ratio - (1.0 / c).powf(1.0 / 3.0)).abs() < 1e-12);
        // a horizon much larger than the domain only removes far exterior interactions
        let far = Kernel::new(KernelFamily::Truncated, 1, 0.5, 3.0, 20.0, false).unwrap();
        let ctx = pure.with_kernel(far).unwrap();
        let unnorm = pure.with_kernel(Kernel::pure(1, 0.5, 3.0, false).unwrap()).unwrap();
        let a = energy_norm(&ctx, &u).unwrap();
        let b = energy_norm(&unnorm, &u).unwrap();
        assert!(a < b && a > 0.99 * b, "{a} {b}");
    }

    #[test]
    fn besov_of_quadratic() {
        let mesh = uniform_mesh_1d(-1.0, 1.0, 64).unwrap();
        let rep = besov_seminorm(&mesh, &|x| x[0] * x[0], 1.5, 2.0, None).unwrap();
        for &(h, q) in &rep.quotients {
            let want = 2.0 * h * h * (2.0 - 2.0 * h).sqrt() / h.powf(1.5);
            assert!((q / want - 1.0).abs() < 1e-10);
        }
        assert_eq!(rep.value, rep.quotients[0].1);
        let zero = besov_seminorm(&mesh, &|_| 0.0, 1.0, 2.0, None).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn besov_of_power_is_bounded_at_critical_order() {
        let mesh = uniform_mesh_1d(-1.0, 1.0, 1024).unwrap();
        for (s, p) in [(0.5, 2.0), (0.5, 3.0)] {
            let v = move |x: Point| x[0].max(0.0).powf(s);
            let crit = besov_seminorm(&mesh, &v, s + 1.0 / p, p, None).unwrap();
            for w in crit.quotients.windows(2) {
                let r = w[1].1 / w[0].1;
                assert!((0.8..=1.25).contains(&r), "ratio {r}");
            }
            let above = besov_seminorm(&mesh, &v, s + 1.0 / p + 0.1, p, None).unwrap();
            let q = &above.quotients;
            assert!(q[q.len() - 1].1 > q[0].1 * 1.5);
        }
    }

    #[test]
    fn rates_of_constructed_sequences() {
        let t = fit_rates(&[0.1, 0.05, 0.025], &[1.0, 0.5, 0.25]).unwrap();
        assert!((t.fitted_rate - 1.0).abs() < 1e-12);
        let t = fit_rates(&[1.0, 0.5, 0.25], &[1.0, 0.5f64.sqrt(), 0.5]).unwrap();
        assert!(t.rates.iter().all(|r| (r - 0.5).abs() < 1e-12));
        assert!(fit_rates(&[1.0, 0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn proxy_vanishes_for_prolongated_solution() {
        let coarse = uniform_mesh_1d(0.0, 1.0, 6).unwrap();
        let fine = coarse.refine_uniform();
        let uh = random(coarse.num_dofs(), 2);
        let up = fine.prolongate(&coarse, &vertex_values(&coarse, &uh)).unwrap();
        let uf: Vec<f64> = (0..fine.num_dofs()).map(|d| up[fine.dof_vertex(d)]).collect();
        for v in 0..coarse.num_vertices() {
            let x = coarse.vertex(v);
            let w = (0..fine.num_vertices()).find(|&w| fine.vertex(w) == x).unwrap();
            assert_eq!(up[w], vertex_values(&coarse, &uh)[v]);
        }
        let ctx = AssemblyContext::new(fine, Kernel::pure(1, 0.5, 2.0, true).unwrap(), QuadParams::default()).unwrap();
        assert_eq!(error_proxy(&coarse, &uh, &ctx, &uf).unwrap(), 0.0);
        let other = uniform_mesh_1d(0.0, 1.0, 12).unwrap();
        let ctx2 = AssemblyContext::new(other, Kernel::pure(1, 0.5, 2.0, true).unwrap(), QuadParams::default()).unwrap();
        assert!(error_proxy(&coarse, &uh, &ctx2, &uf).is_err());
    }
}
