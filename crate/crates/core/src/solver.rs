//! Minimization of the discrete energy.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};

use crate::assembly::{dot_vec, load_vector, mat_vec, AssemblyContext, DiscreteFunction, Forcing};
use crate::error::{Error, Result};
use crate::norms::wsp_norm;

/// Iteration used by [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    /// One linear solve; requires `p = 2`.
    DirectLinear,
    /// Newton steps with backtracking on the energy.
    DampedNewton,
    /// Gradient steps preconditioned by the `p = 2` stiffness matrix.
    PreconditionedGradient,
}

impl SolverMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SolverMethod::DirectLinear => "direct_linear",
            SolverMethod::DampedNewton => "damped_newton",
            SolverMethod::PreconditionedGradient => "preconditioned_gradient",
        }
    }

    pub fn parse(s: &str) -> Result<SolverMethod> {
        match s {
            "direct_linear" => Ok(SolverMethod::DirectLinear),
            "damped_newton" => Ok(SolverMethod::DampedNewton),
            "preconditioned_gradient" => Ok(SolverMethod::PreconditionedGradient),
            _ => Err(Error::Config(format!("unknown solver method `{s}`"))),
        }
    }
}

/// Solver controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    /// `None` picks [`SolverMethod::DirectLinear`] for `p = 2` and
    /// [`SolverMethod::DampedNewton`] otherwise.
    pub method: Option<SolverMethod>,
    /// Bound on `‖R(u)‖ / ‖b‖`; `None` uses `1e-10` for `p = 2` and `1e-8` otherwise.
    pub tolerance: Option<f64>,
    pub max_iterations: usize,
    pub backtrack: f64,
    pub sufficient_decrease: f64,
    /// Jacobian floor relative to `max |u|`.
    pub eps_reg: f64,
    /// Solve a short sequence of exponents between 2 and `p` first.
    pub continuation: bool,
    /// Largest system solved by dense Cholesky inside Newton; larger ones use
    /// conjugate gradients preconditioned by the `p = 2` stiffness.
    pub dense_limit: usize,
    /// Compute the `W̃^s_p` norm and stability ratio of the solution.
    pub report_norm: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            method: None,
            tolerance: None,
            max_iterations: 100,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            eps_reg: 1e-10,
            continuation: false,
            dense_limit: 4000,
            report_norm: true,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tolerance {
            if !(t > 0.0) {
                return Err(Error::param(format!("tolerance must be positive, got {t}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations must be at least 1"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::param(format!("backtracking factor must lie in (0, 1), got {}", self.backtrack)));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 0.5) {
            return Err(Error::param("sufficient-decrease constant must lie in (0, 1/2)"));
        }
        if !(self.eps_reg >= 0.0) {
            return Err(Error::param("eps_reg must be nonnegative"));
        }
        Ok(())
    }

    fn tolerance_for(&self, p: f64) -> f64 {
        self.tolerance.unwrap_or(if p == 2.0 { 1e-10 } else { 1e-8 })
    }
}

/// Outcome of [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub method: SolverMethod,
    pub converged: bool,
    pub iterations: usize,
    /// Final `‖R(u)‖ / ‖b‖`.
    pub residual: f64,
    /// Final value of `E_G(u) - ⟨f, u⟩`.
    pub energy: f64,
    /// Energy after each accepted iterate, starting with the initial guess.
    pub energy_trace: Vec<f64>,
    /// `‖u_h‖_{W̃^s_p}`.
    pub wsp_norm: Option<f64>,
    /// `‖u_h‖_{W̃^s_p} / ‖f‖_{L^{p'}}^{1/(p-1)}`.
    pub stability_ratio: Option<f64>,
    /// Newton steps replaced by preconditioned gradient steps.
    pub fallback_steps: usize,
}

impl SolveReport {
    /// Key-value block for the command line.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.10e}"));
        format!(
            "method,{}\nconverged,{}\niterations,{}\nresidual,{:.6e}\nenergy,{:.15e}\nwsp_norm,{}\nstability_ratio,{}\nfallback_steps,{}\n",
            self.method.name(),
            self.converged,
            self.iterations,
            self.residual,
            self.energy,
            opt(self.wsp_norm),
            opt(self.stability_ratio),
            self.fallback_steps
        )
    }
}

/// True iff the energy trace never increases by more than `1e-12` relative.
pub fn energy_decrease_check(report: &SolveReport) -> bool {
    report
        .energy_trace
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
}

/// Dense Cholesky factor.
pub(crate) struct Factor(Llt<f64>);

impl Factor {
    pub(crate) fn new(m: &Mat<f64>) -> Result<Factor> {
        m.llt(Side::Lower)
            .map(Factor)
            .map_err(|_| Error::Numerical("matrix is not positive definite".into()))
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.0.solve(&rhs);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }
}

fn norm2(v: &[f64]) -> f64 {
    dot_vec(v, v).sqrt()
}

/// Minimizes `E_G(u) - ⟨f, u⟩` over the discrete space.
///
/// On non-convergence the error carries the iteration count and residual; use
/// [`solve_with_report`] to keep the partial trace.
pub fn solve(ctx: &AssemblyContext, f: &Forcing, params: &SolverParams) -> Result<(DiscreteFunction, SolveReport)> {
    let (u, report) = solve_with_report(ctx, f, params)?;
    if !report.converged {
        return Err(Error::NonConvergence { iterations: report.iterations, residual: report.residual });
    }
    Ok((u, report))
}

/// Like [`solve`] but returns the report also when the tolerance was not reached.
pub fn solve_with_report(
    ctx: &AssemblyContext,
    f: &Forcing,
    params: &SolverParams,
) -> Result<(DiscreteFunction, SolveReport)> {
    params.validate()?;
    let mesh = ctx.mesh();
    let p = ctx.kernel().p();
    let method = params
        .method
        .unwrap_or(if p == 2.0 { SolverMethod::DirectLinear } else { SolverMethod::DampedNewton });
    if method == SolverMethod::DirectLinear && p != 2.0 {
        return Err(Error::param("direct_linear requires p = 2"));
    }
    let b = load_vector(mesh, f);
    let bnorm = norm2(&b);
    let n = mesh.num_dofs();
    let (u, mut report) = if bnorm == 0.0 {
        let report = SolveReport {
            method,
            converged: true,
            iterations: 0,
            residual: 0.0,
            energy: 0.0,
            energy_trace: vec![0.0],
            wsp_norm: None,
            stability_ratio: None,
            fallback_steps: 0,
        };
        (vec![0.0; n], report)
    } else if method == SolverMethod::DirectLinear {
        direct(ctx, &b, params)?
    } else if params.continuation && p != 2.0 {
        continuation(ctx, &b, method, params)?
    } else {
        let pre = Preconditioner::new(ctx)?;
        let u0 = pre.initial_guess(ctx, &b)?;
        iterate(ctx, &b, u0, &pre, method, params.tolerance_for(p), params)?
    };
    let u = DiscreteFunction::new(mesh, u)?;
    if params.report_norm {
        let w = wsp_norm(ctx, &u.values)?;
        report.wsp_norm = Some(w);
        let q = p / (p - 1.0);
        let fnorm = f.lq_norm(mesh, q);
        if fnorm > 0.0 {
            report.stability_ratio = Some(w / fnorm.powf(1.0 / (p - 1.0)));
        }
    }
    Ok((u, report))
}

fn direct(ctx: &AssemblyContext, b: &[f64], params: &SolverParams) -> Result<(Vec<f64>, SolveReport)> {
    let k = ctx.stiffness();
    let u = Factor::new(k)?.solve(b);
    let ku = mat_vec(k, &u);
    let r: Vec<f64> = ku.iter().zip(b).map(|(x, y)| x - y).collect();
    let residual = norm2(&r) / norm2(b);
    let energy = 0.5 * dot_vec(&ku, &u) - dot_vec(b, &u);
    let tol = params.tolerance_for(2.0);
    Ok((
        u,
        SolveReport {
            method: SolverMethod::DirectLinear,
            converged: residual <= tol,
            iterations: 1,
            residual,
            energy,
            energy_trace: vec![energy],
            wsp_norm: None,
            stability_ratio: None,
            fallback_steps: 0,
        },
    ))
}

/// `p = 2` stiffness of the same kernel order, used for the initial guess and
/// as preconditioner.
struct Preconditioner {
    factor: Factor,
}

impl Preconditioner {
    fn new(ctx: &AssemblyContext) -> Result<Preconditioner> {
        let k = if ctx.kernel().p() == 2.0 {
            ctx.stiffness().clone()
        } else {
            let linear = ctx.with_kernel(ctx.kernel().with_p(2.0)?)?;
            linear.stiffness().clone()
        };
        let factor = Factor::new(&k)?;
        Ok(Preconditioner { factor })
    }

    /// `t w` with `K w = b` and `t` minimizing the energy along the ray.
    fn initial_guess(&self, ctx: &AssemblyContext, b: &[f64]) -> Result<Vec<f64>> {
        let w = self.factor.solve(b);
        ray_minimizer(ctx, b, &w)
    }
}

/// Minimizer of `t ↦ t^p E_G(w) - t ⟨b, w⟩` times `w`.
fn ray_minimizer(ctx: &AssemblyContext, b: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let p = ctx.kernel().p();
    let e = ctx.energy_g(w)?;
    let bw = dot_vec(b, w);
    if !(e > 0.0) || !(bw > 0.0) {
        return Ok(w.to_vec());
    }
    let t = (bw / (p * e)).powf(1.0 / (p - 1.0));
    Ok(w.iter().map(|x| t * x).collect())
}

fn continuation(
    ctx: &AssemblyContext,
    b: &[f64],
    method: SolverMethod,
    params: &SolverParams,
) -> Result<(Vec<f64>, SolveReport)> {
    let p = ctx.kernel().p();
    let steps = 3;
    let pre = Preconditioner::new(ctx)?;
    let mut u = pre.factor.solve(b);
    let mut total_iterations = 0;
    let mut fallback = 0;
    for k in 1..steps {
        let pk = 2.0 + (p - 2.0) * k as f64 / steps as f64;
        let stage = ctx.with_kernel(ctx.kernel().with_p(pk)?)?;
        let u0 = ray_minimizer(&stage, b, &u)?;
        let (uk, rep) = iterate(&stage, b, u0, &pre, method, 1e-6, params)?;
        total_iterations += rep.iterations;
        fallback += rep.fallback_steps;
        u = uk;
    }
    let u0 = ray_minimizer(ctx, b, &u)?;
    let (u, mut rep) = iterate(ctx, b, u0, &pre, method, params.tolerance_for(p), params)?;
    rep.iterations += total_iterations;
    rep.fallback_steps += fallback;
    Ok((u, rep))
}

/// Preconditioned conjugate gradients for `H d = r`.
fn pcg(h: &Mat<f64>, r: &[f64], pre: &Factor, tol: f64, max_iter: usize) -> Option<Vec<f64>> {
    let n = r.len();
    let mut x = vec![0.0; n];
    let mut res = r.to_vec();
    let mut z = pre.solve(&res);
    let mut d = z.clone();
    let mut rz = dot_vec(&res, &z);
    let r0 = norm2(r);
    for _ in 0..max_iter {
        let hd = mat_vec(h, &d);
        let dhd = dot_vec(&d, &hd);
        if !(dhd > 0.0) {
            return None;
        }
        let alpha = rz / dhd;
        for i in 0..n {
            x[i] += alpha * d[i];
            res[i] -= alpha * hd[i];
        }
        if norm2(&res) <= tol * r0 {
            return Some(x);
        }
        z = pre.solve(&res);
        let rz_new = dot_vec(&res, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
    }
    Some(x)
}

fn iterate(
    ctx: &AssemblyContext,
    b: &[f64],
    mut u: Vec<f64>,
    pre: &Preconditioner,
    method: SolverMethod,
    tol: f64,
    params: &SolverParams,
) -> Result<(Vec<f64>, SolveReport)> {
    let bnorm = norm2(b);
    let n = u.len();
    let mut trace = Vec::new();
    let mut fallback_steps = 0;
    let mut iterations = 0;
    let mut residual;
    let mut energy;
    loop {
        let newton = method == SolverMethod::DampedNewton;
        let (eg, g, h) = if newton {
            ctx.energy_gradient_hessian_with_floor(&u, params.eps_reg)?
        } else {
            (ctx.energy_g(&u)?, ctx.gradient_g(&u)?, Mat::zeros(0, 0))
        };
        energy = eg - dot_vec(b, &u);
        if trace.is_empty() {
            trace.push(energy);
        }
        let r: Vec<f64> = g.iter().zip(b).map(|(x, y)| x - y).collect();
        residual = norm2(&r) / bnorm;
        if !residual.is_finite() {
            return Err(Error::Numerical("residual is not finite".into()));
        }
        if residual <= tol || iterations >= params.max_iterations {
            break;
        }
        iterations += 1;
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let mut direction = None;
        if newton {
            let d = if n <= params.dense_limit {
                Factor::new(&h).ok().map(|fct| fct.solve(&neg))
            } else {
                pcg(&h, &neg, &pre.factor, 1e-10, 500)
            };
            if let Some(d) = d {
                if dot_vec(&d, &r) < 0.0 {
                    direction = Some(d);
                }
            }
        }
        let mut accepted = None;
        if let Some(d) = &direction {
            accepted = line_search(ctx, b, &u, energy, &r, d, params)?;
        }
        if accepted.is_none() {
            let d = pre.factor.solve(&neg);
            accepted = line_search(ctx, b, &u, energy, &r, &d, params)?;
            if newton && accepted.is_some() {
                fallback_steps += 1;
            }
        }
        match accepted {
            Some((unew, enew)) => {
                u = unew;
                trace.push(enew);
            }
            None => break,
        }
    }
    Ok((
        u,
        SolveReport {
            method,
            converged: residual <= tol,
            iterations,
            residual,
            energy,
            energy_trace: trace,
            wsp_norm: None,
            stability_ratio: None,
            fallback_steps,
        },
    ))
}

/// Backtracking along `d`; `None` if no step is accepted.
///
/// Steps must satisfy sufficient decrease of the energy. Once the predicted
/// decrease falls below the rounding level of the energy, steps must instead
/// reduce the residual norm without raising the energy beyond that level.
fn line_search(
    ctx: &AssemblyContext,
    b: &[f64],
    u: &[f64],
    energy: f64,
    r: &[f64],
    d: &[f64],
    params: &SolverParams,
) -> Result<Option<(Vec<f64>, f64)>> {
    let slope = dot_vec(r, d);
    if !(slope < 0.0) {
        return Ok(None);
    }
    let slack = 1e-13 * energy.abs().max(f64::MIN_POSITIVE);
    let by_residual = -slope < 1e3 * slack;
    let rnorm = norm2(r);
    let mut t = 1.0;
    for _ in 0..40 {
        let trial: Vec<f64> = u.iter().zip(d).map(|(x, y)| x + t * y).collect();
        let e = ctx.energy_g(&trial)? - dot_vec(b, &trial);
        let ok = if !e.is_finite() || e > energy + slack {
            false
        } else if by_residual {
            let g = ctx.gradient_g(&trial)?;
            let rt: Vec<f64> = g.iter().zip(b).map(|(x, y)| x - y).collect();
            norm2(&rt) <= (1.0 - params.sufficient_decrease * t) * rnorm
        } else {
            e <= energy + params.sufficient_decrease * t * slope + slack
        };
        if ok {
            return Ok(Some((trial, e)));
        }
        t *= params.backtrack;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use crate::mesh::{build_mesh_2d, uniform_mesh_1d, DomainSpec};
    use crate::quadrature::QuadParams;

    fn ctx1d(p: f64, n: usize) -> AssemblyContext {
        let mesh = uniform_mesh_1d(-1.0, 1.0, n).unwrap();
        AssemblyContext::new(mesh, Kernel::pure(1, 0.5, p, true).unwrap(), QuadParams::default()).unwrap()
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let ctx = ctx1d(3.0, 8);
        let (u, rep) = solve(&ctx, &Forcing::Constant(0.0), &SolverParams::default()).unwrap();
        assert!(u.values.iter().all(|&x| x == 0.0));
        assert!(rep.iterations <= 1);
    }

    #[test]
    fn linear_solve_has_small_residual() {
        let ctx = ctx1d(2.0, 16);
        let (u, rep) = solve(&ctx, &Forcing::Constant(1.0), &SolverParams::default()).unwrap();
        assert!(rep.converged && rep.residual < 1e-10);
        let r = ctx.residual(&u.values, &Forcing::Constant(1.0)).unwrap();
        let b = load_vector(ctx.mesh(), &Forcing::Constant(1.0));
        assert!(norm2(&r) / norm2(&b) < 1e-10);
        assert!(u.values.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn newton_converges_and_decreases_energy() {
        for p in [1.5, 3.0] {
            let ctx = ctx1d(p, 16);
            let (u, rep) = solve(&ctx, &Forcing::Constant(1.0), &SolverParams::default()).unwrap();
            assert!(rep.converged, "p={p}: {rep:?}");
            assert!(energy_decrease_check(&rep));
            let r = ctx.residual(&u.values, &Forcing::Constant(1.0)).unwrap();
            let b = load_vector(ctx.mesh(), &Forcing::Constant(1.0));
            assert!(norm2(&r) / norm2(&b) < 1e-8);
        }
    }

    #[test]
    fn methods_agree() {
        let ctx = ctx1d(2.5, 12);
        let f = Forcing::Constant(1.0);
        let (a, _) = solve(&ctx, &f, &SolverParams::default()).unwrap();
        let params = SolverParams { method: Some(SolverMethod::PreconditionedGradient), max_iterations: 2000, tolerance: Some(1e-9), ..SolverParams::default() };
        let (b, rep) = solve(&ctx, &f, &params).unwrap();
        assert!(rep.converged);
        let cont = SolverParams { continuation: true, ..SolverParams::default() };
        let (c, _) = solve(&ctx, &f, &cont).unwrap();
        for i in 0..a.values.len() {
            assert!((a.values[i] - b.values[i]).abs() < 1e-6 * a.values[i].abs().max(1e-3));
            assert!((a.values[i] - c.values[i]).abs() < 1e-7 * a.values[i].abs().max(1e-3));
        }
    }

    #[test]
    fn scaling_law() {
        for p in [1.75, 3.0] {
            let mesh = build_mesh_2d(&DomainSpec::Square { side: 1.0 }, 0.25, 1.0).unwrap();
            let ctx = AssemblyContext::new(mesh, Kernel::pure(2, 0.5, p, true).unwrap(), QuadParams::default()).unwrap();
            let (u1, _) = solve(&ctx, &Forcing::Constant(1.0), &SolverParams::default()).unwrap();
            let (u2, _) = solve(&ctx, &Forcing::Constant(2.0), &SolverParams::default()).unwrap();
            let k = 2f64.powf(1.0 / (p - 1.0));
            let scale = u1.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (a, b) in u1.values.iter().zip(&u2.values) {
                assert!((k * a - b).abs() < 1e-6 * k * scale);
            }
        }
    }

    #[test]
    fn decrease_check_detects_increase() {
        let mut rep = SolveReport {
            method: SolverMethod::DampedNewton,
            converged: true,
            iterations: 2,
            residual: 0.0,
            energy: -1.0,
            energy_trace: vec![0.0, -1.0, -0.5],
            wsp_norm: None,
            stability_ratio: None,
            fallback_steps: 0,
        };
        assert!(!energy_decrease_check(&rep));
        rep.energy_trace = vec![-1.0];
        assert!(energy_decrease_check(&rep));
    }

    #[test]
    fn direct_linear_rejects_nonlinear_exponent() {
        let ctx = ctx1d(3.0, 4);
        let params = SolverParams { method: Some(SolverMethod::DirectLinear), ..SolverParams::default() };
        assert!(solve(&ctx, &Forcing::Constant(1.0), &params).is_err());
    }
}
