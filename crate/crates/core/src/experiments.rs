//! Parameter sweeps: boundary-exponent fits, convergence-rate studies and
//! solution profiles, with CSV output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::assembly::{vertex_values, AssemblyContext};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::mesh::{add, dist, scale, DomainSpec, Mesh, Point};
use crate::norms::{error_proxy, fit_rates, least_squares, RateTable};
use crate::solver::solve;

/// What a sweep computes per `(s, p)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    BoundaryExponent,
    ConvergenceRate,
    ProfileDump,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::BoundaryExponent => "boundary_exponent",
            ExperimentKind::ConvergenceRate => "convergence_rate",
            ExperimentKind::ProfileDump => "profile_dump",
        }
    }

    pub fn parse(s: &str) -> Result<ExperimentKind> {
        match s {
            "boundary_exponent" => Ok(ExperimentKind::BoundaryExponent),
            "convergence_rate" => Ok(ExperimentKind::ConvergenceRate),
            "profile_dump" => Ok(ExperimentKind::ProfileDump),
            _ => Err(Error::Config(format!("unknown experiment kind `{s}`"))),
        }
    }
}

/// Category of a boundary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorKind {
    Endpoint,
    EdgeMidpoint,
    ConvexCorner,
    ReentrantCorner,
}

impl AnchorKind {
    pub fn name(&self) -> &'static str {
        match self {
            AnchorKind::Endpoint => "endpoint",
            AnchorKind::EdgeMidpoint => "edge_midpoint",
            AnchorKind::ConvexCorner => "convex_corner",
            AnchorKind::ReentrantCorner => "reentrant_corner",
        }
    }
}

/// Boundary point with an inward unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub kind: AnchorKind,
    pub point: Point,
    pub direction: Point,
}

/// Fit anchors of a domain: the left endpoint in 1D; the top edge midpoint,
/// the top-left corner and (for the L-shape) the reentrant corner in 2D.
pub fn default_anchors(domain: &DomainSpec) -> Vec<Anchor> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    match *domain {
        DomainSpec::Interval { a, .. } => vec![Anchor {
            kind: AnchorKind::Endpoint,
            point: [a, 0.0],
            direction: [1.0, 0.0],
        }],
        DomainSpec::Square { side } => vec![
            Anchor {
                kind: AnchorKind::EdgeMidpoint,
                point: [0.0, 0.5 * side],
                direction: [0.0, -1.0],
            },
            Anchor {
                kind: AnchorKind::ConvexCorner,
                point: [-0.5 * side, 0.5 * side],
                direction: [r, -r],
            },
        ],
        DomainSpec::LShape => vec![
            Anchor {
                kind: AnchorKind::EdgeMidpoint,
                point: [0.0, 0.5],
                direction: [0.0, -1.0],
            },
            Anchor {
                kind: AnchorKind::ConvexCorner,
                point: [-0.5, 0.5],
                direction: [r, -r],
            },
            Anchor {
                kind: AnchorKind::ReentrantCorner,
                point: [0.0, 0.0],
                direction: [-r, r],
            },
        ],
    }
}

/// Distance range of a boundary fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWindow {
    pub d_min: f64,
    pub d_max: f64,
}

/// Fitted power `u ≈ C d^α` near a boundary point.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub anchor: Anchor,
    pub alpha: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    pub window: FitWindow,
    pub points: usize,
}

/// Least-squares slope and RMS residual of `log u` against `log d`.
pub fn fit_power_law(d: &[f64], u: &[f64]) -> Result<(f64, f64)> {
    if d.len() != u.len() || d.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 samples, got {}", d.len())));
    }
    if let Some(bad) = d.iter().zip(u).find(|(d, u)| !(**d > 0.0) || !(**u > 0.0)) {
        return Err(Error::Fit(format!("nonpositive sample u({}) = {}", bad.0, bad.1)));
    }
    let x: Vec<f64> = d.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = u.iter().map(|v| v.ln()).collect();
    let (slope, _, rms) = least_squares(&x, &y);
    if !slope.is_finite() {
        return Err(Error::Fit("degenerate sample distances".into()));
    }
    Ok((slope, rms))
}

/// Diameter of the element containing the anchor.
pub fn anchor_element_size(mesh: &Mesh, anchor: &Anchor) -> Result<f64> {
    let probe = add(anchor.point, scale(anchor.direction, 1e-9 * mesh.h_min()));
    mesh.locate(probe)
        .map(|(e, _)| mesh.diameter(e))
        .ok_or_else(|| Error::Fit(format!("anchor {:?} is not on the mesh", anchor.point)))
}

/// Default window `[2 h_anchor, 0.05 diam(Ω)]`.
pub fn default_window(mesh: &Mesh, domain: &DomainSpec, anchor: &Anchor) -> Result<FitWindow> {
    Ok(FitWindow {
        d_min: 2.0 * anchor_element_size(mesh, anchor)?,
        d_max: 0.05 * domain.diameter(),
    })
}

/// Values of the discrete function `u` (dof coefficients) at `x`.
pub fn evaluate(mesh: &Mesh, vals: &[f64], x: Point) -> Option<f64> {
    let (e, bary) = mesh.locate(x)?;
    Some(mesh.element(e).iter().zip(bary).map(|(&v, b)| b * vals[v]).sum())
}

/// Fits `u ≈ C d^α` along `anchor.direction`.
///
/// In 1D the samples are the mesh vertices inside the window; in 2D the
/// function is evaluated at `samples` geometrically spaced distances.
pub fn fit_boundary_exponent(
    mesh: &Mesh,
    u: &[f64],
    anchor: &Anchor,
    window: FitWindow,
    samples: usize,
) -> Result<FitResult> {
    if u.len() != mesh.num_dofs() {
        return Err(Error::MeshMismatch(format!("{} coefficients for {} dofs", u.len(), mesh.num_dofs())));
    }
    if !(window.d_min > 0.0 && window.d_min < window.d_max) {
        return Err(Error::Fit(format!("empty window [{}, {}]", window.d_min, window.d_max)));
    }
    let vals = vertex_values(mesh, u);
    let (mut d, mut y) = (Vec::new(), Vec::new());
    if mesh.dim() == 1 {
        for (v, x) in mesh.vertices().iter().enumerate() {
            let t = (x[0] - anchor.point[0]) * anchor.direction[0];
            if t >= window.d_min && t <= window.d_max {
                d.push(t);
                y.push(vals[v]);
            }
        }
    } else {
        let n = samples.max(4);
        let ratio = (window.d_max / window.d_min).ln();
        for k in 0..n {
            let t = window.d_min * (ratio * k as f64 / (n - 1) as f64).exp();
            let x = add(anchor.point, scale(anchor.direction, t));
            let val = evaluate(mesh, &vals, x)
                .ok_or_else(|| Error::Fit(format!("sample point {x:?} lies outside the mesh")))?;
            d.push(t);
            y.push(val);
        }
    }
    let (alpha, residual) = fit_power_law(&d, &y)?;
    Ok(FitResult { anchor: anchor.clone(), alpha, residual, window, points: d.len() })
}

/// Two-column plot data.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// `(x, u(x))` at all vertices in 1D; `(t, u(anchor + t·direction))` along
/// each anchor direction in 2D.
pub fn solution_profiles(mesh: &Mesh, u: &[f64], anchors: &[Anchor]) -> Vec<Profile> {
    let vals = vertex_values(mesh, u);
    if mesh.dim() == 1 {
        let mut pts: Vec<(f64, f64)> = mesh.vertices().iter().zip(&vals).map(|(x, v)| (x[0], *v)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        return vec![Profile { label: String::new(), points: pts }];
    }
    let (lo, hi) = mesh.bounding_box();
    let step = dist(lo, hi) / 400.0;
    anchors
        .iter()
        .map(|a| {
            let mut pts = vec![(0.0, 0.0)];
            for k in 1..=400 {
                let t = k as f64 * step;
                match evaluate(mesh, &vals, add(a.point, scale(a.direction, t))) {
                    Some(v) => pts.push((t, v)),
                    None => break,
                }
            }
            Profile { label: a.kind.name().into(), points: pts }
        })
        .collect()
}

/// A validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub domain: DomainSpec,
    pub s_values: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Mesh sizes; a single entry except for convergence studies.
    pub h_values: Vec<f64>,
    pub anchors: Vec<Anchor>,
    pub output_dir: PathBuf,
    pub config: Config,
}

impl ExperimentConfig {
    pub fn from_config(config: Config) -> Result<ExperimentConfig> {
        let kind = ExperimentKind::parse(&config.experiment.kind)?;
        let domain = config.domain()?;
        let h_values = match (&config.mesh.h_list, config.mesh.h) {
            (Some(v), _) if kind == ExperimentKind::ConvergenceRate => v.clone(),
            (_, Some(h)) => vec![h],
            (Some(v), None) if !v.is_empty() => vec![v[0]],
            _ => return Err(Error::Config("mesh.h or mesh.h_list is required".into())),
        };
        if kind == ExperimentKind::ConvergenceRate {
            if h_values.len() < 3 {
                return Err(Error::Config("convergence studies need at least three mesh sizes".into()));
            }
            if h_values.windows(2).any(|w| ((w[0] / w[1]) - 2.0).abs() > 1e-9) {
                return Err(Error::Config("mesh.h_list must halve at every step".into()));
            }
        }
        let all = default_anchors(&domain);
        let anchors = match &config.fit.anchors {
            None => all,
            Some(names) => names
                .iter()
                .map(|n| {
                    all.iter()
                        .find(|a| a.kind.name() == n)
                        .cloned()
                        .ok_or_else(|| Error::Config(format!("domain has no anchor `{n}`")))
                })
                .collect::<Result<_>>()?,
        };
        Ok(ExperimentConfig {
            kind,
            domain,
            s_values: config.s_values()?,
            p_values: config.p_values()?,
            h_values,
            anchors,
            output_dir: config.experiment.output_dir.clone(),
            config,
        })
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::from_config(Config::load(path)?)
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_config(Config::from_toml(text)?)
    }

    /// The `(s, p)` cells in output order.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.p_values
            .iter()
            .flat_map(|&p| self.s_values.iter().map(move |&s| (s, p)))
            .collect()
    }

    fn context(&self, mesh: Mesh, s: f64, p: f64) -> Result<AssemblyContext> {
        let mut ctx = AssemblyContext::new(mesh, self.config.kernel(s, p)?, self.config.quad_params()?)?;
        ctx.eps_reg = self.config.solver_params()?.eps_reg;
        Ok(ctx)
    }

    fn window(&self, mesh: &Mesh, anchor: &Anchor) -> Result<FitWindow> {
        let d = default_window(mesh, &self.domain, anchor)?;
        let factor = self.config.fit.d_min_factor.unwrap_or(2.0);
        Ok(FitWindow {
            d_min: self.config.fit.d_min.unwrap_or(0.5 * factor * d.d_min),
            d_max: self.config.fit.d_max.unwrap_or(d.d_max),
        })
    }
}

/// Output of one `(s, p)` cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellData {
    pub fits: Vec<FitResult>,
    pub rates: Option<RateTable>,
    pub profiles: Vec<Profile>,
    /// Newton (or linear solver) iterations per solve.
    pub iterations: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub s: f64,
    pub p: f64,
    /// Error message for a failed cell.
    pub outcome: std::result::Result<CellData, String>,
    pub seconds: f64,
}

/// All cells of a sweep, in [`ExperimentConfig::cells`] order.
#[derive(Debug, Clone)]
pub struct StudyResults {
    pub kind: ExperimentKind,
    pub name: String,
    pub config_hash: String,
    pub config_text: String,
    pub cells: Vec<CellResult>,
}

impl StudyResults {
    pub fn all_succeeded(&self) -> bool {
        self.cells.iter().all(|c| c.outcome.is_ok())
    }

    pub fn cell(&self, s: f64, p: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.s == s && c.p == p)
    }
}

/// Solves on the configured mesh and fits the boundary exponent at every anchor.
pub fn boundary_cell(cfg: &ExperimentConfig, s: f64, p: f64) -> Result<CellData> {
    let ctx = cfg.context(cfg.config.build_mesh(cfg.h_values[0])?, s, p)?;
    let (u, report) = solve(&ctx, &cfg.config.forcing(s), &cfg.config.solver_params()?)?;
    let mesh = ctx.mesh();
    let samples = cfg.config.fit.samples.unwrap_or(16);
    let fits = cfg
        .anchors
        .iter()
        .map(|a| fit_boundary_exponent(mesh, &u.values, a, cfg.window(mesh, a)?, samples))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellData {
        fits,
        rates: None,
        profiles: solution_profiles(mesh, &u.values, &cfg.anchors),
        iterations: vec![report.iterations],
    })
}

/// Solves on nested uniform refinements and measures consecutive differences.
pub fn convergence_cell(cfg: &ExperimentConfig, s: f64, p: f64) -> Result<CellData> {
    let forcing = cfg.config.forcing(s);
    let params = cfg.config.solver_params()?;
    let mut mesh = cfg.config.build_mesh(cfg.h_values[0])?;
    let mut prev: Option<(Mesh, Vec<f64>)> = None;
    let mut errors = Vec::new();
    let mut iterations = Vec::new();
    for level in 0..cfg.h_values.len() {
        if level > 0 {
            mesh = mesh.refine_uniform();
        }
        let ctx = cfg.context(mesh.clone(), s, p)?;
        let (u, report) = solve(&ctx, &forcing, &params)?;
        iterations.push(report.iterations);
        if let Some((coarse, uc)) = prev.take() {
            errors.push(error_proxy(&coarse, &uc, &ctx, &u.values)?);
        }
        prev = Some((mesh.clone(), u.values));
    }
    let h = &cfg.h_values[..errors.len()];
    Ok(CellData {
        fits: Vec::new(),
        rates: Some(fit_rates(h, &errors)?),
        profiles: Vec::new(),
        iterations,
    })
}

/// Solves on the configured mesh and records profiles only.
pub fn profile_cell(cfg: &ExperimentConfig, s: f64, p: f64) -> Result<CellData> {
    let ctx = cfg.context(cfg.config.build_mesh(cfg.h_values[0])?, s, p)?;
    let (u, report) = solve(&ctx, &cfg.config.forcing(s), &cfg.config.solver_params()?)?;
    Ok(CellData {
        profiles: solution_profiles(ctx.mesh(), &u.values, &cfg.anchors),
        iterations: vec![report.iterations],
        ..CellData::default()
    })
}

fn run_cells(cfg: &ExperimentConfig, cell: fn(&ExperimentConfig, f64, f64) -> Result<CellData>) -> StudyResults {
    let cells = cfg.cells();
    let threads = match cfg.config.experiment.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .clamp(1, cells.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(s, p)) = cells.get(i) else { break };
                let start = Instant::now();
                let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| cell(cfg, s, p)))
                    .unwrap_or_else(|_| Err(Error::Numerical("cell panicked".into())))
                    .map_err(|e| e.to_string());
                let result = CellResult { s, p, outcome, seconds: start.elapsed().as_secs_f64() };
                slots.lock().expect("no poisoned lock")[i] = Some(result);
            });
        }
    });
    StudyResults {
        kind: cfg.kind,
        name: cfg.config.experiment.name.clone(),
        config_hash: cfg.config.hash(),
        config_text: cfg.config.to_toml(),
        cells: slots.into_inner().expect("no poisoned lock").into_iter().flatten().collect(),
    }
}

pub fn run_boundary_study(cfg: &ExperimentConfig) -> StudyResults {
    run_cells(cfg, boundary_cell)
}

pub fn run_convergence_study(cfg: &ExperimentConfig) -> StudyResults {
    run_cells(cfg, convergence_cell)
}

pub fn run_profile_dump(cfg: &ExperimentConfig) -> StudyResults {
    run_cells(cfg, profile_cell)
}

/// Runs the configured study and writes its outputs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(StudyResults, Vec<PathBuf>)> {
    let results = match cfg.kind {
        ExperimentKind::BoundaryExponent => run_boundary_study(cfg),
        ExperimentKind::ConvergenceRate => run_convergence_study(cfg),
        ExperimentKind::ProfileDump => run_profile_dump(cfg),
    };
    let files = emit_outputs(&results, &cfg.output_dir)?;
    Ok((results, files))
}

fn tag(x: f64) -> String {
    format!("{x}")
}

fn write_file(dir: &Path, name: &str, body: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(())
}

/// Writes CSV tables (one per `p`), profile data and `manifest.txt` into `dir`.
///
/// Everything except the manifest timings is a deterministic function of the
/// results.
pub fn emit_outputs(results: &StudyResults, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut ps: Vec<f64> = Vec::new();
    for c in &results.cells {
        if !ps.contains(&c.p) {
            ps.push(c.p);
        }
    }
    for &p in &ps {
        let ok = results.cells.iter().filter(|c| c.p == p).filter_map(|c| c.outcome.as_ref().ok().map(|d| (c.s, d)));
        match results.kind {
            ExperimentKind::BoundaryExponent => {
                let mut csv = String::from("s,p,anchor,alpha,residual,d_min,d_max,points\n");
                for (s, d) in ok {
                    for f in &d.fits {
                        let w = f.window;
                        let _ = writeln!(
                            csv,
                            "{s},{p},{},{},{},{},{},{}",
                            f.anchor.kind.name(),
                            f.alpha,
                            f.residual,
                            w.d_min,
                            w.d_max,
                            f.points
                        );
                    }
                }
                write_file(dir, &format!("boundary_exponents_p{}.csv", tag(p)), &csv, &mut files)?;
            }
            ExperimentKind::ConvergenceRate => {
                let mut csv = String::from("s,p,h,proxy_error,rate\n");
                let mut fit = String::from("s,p,fitted_rate\n");
                for (s, d) in ok {
                    let Some(t) = &d.rates else { continue };
                    for i in 0..t.h.len() {
                        let rate = if i == 0 { String::new() } else { t.rates[i - 1].to_string() };
                        let _ = writeln!(csv, "{s},{p},{},{},{rate}", t.h[i], t.errors[i]);
                    }
                    let _ = writeln!(fit, "{s},{p},{}", t.fitted_rate);
                }
                write_file(dir, &format!("convergence_rates_p{}.csv", tag(p)), &csv, &mut files)?;
                write_file(dir, &format!("convergence_fit_p{}.csv", tag(p)), &fit, &mut files)?;
            }
            ExperimentKind::ProfileDump => {}
        }
    }
    for c in &results.cells {
        let Ok(d) = &c.outcome else { continue };
        for prof in &d.profiles {
            let mut body = String::from("# x u\n");
            for (x, u) in &prof.points {
                let _ = writeln!(body, "{x} {u}");
            }
            let suffix = if prof.label.is_empty() { String::new() } else { format!("_{}", prof.label) };
            write_file(dir, &format!("profile_s{}_p{}{suffix}.dat", tag(c.s), tag(c.p)), &body, &mut files)?;
        }
    }
    let mut manifest = String::new();
    let _ = writeln!(manifest, "name = {}", results.name);
    let _ = writeln!(manifest, "kind = {}", results.kind.name());
    let _ = writeln!(manifest, "config_sha256 = {}", results.config_hash);
    let _ = writeln!(manifest, "version = {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "\n[cells]");
    for c in &results.cells {
        let status = match &c.outcome {
            Ok(d) => format!("ok iterations={:?}", d.iterations),
            Err(e) => format!("failed: {e}"),
        };
        let _ = writeln!(manifest, "s={} p={} seconds={:.3} {status}", c.s, c.p, c.seconds);
    }
    let _ = writeln!(manifest, "\n[config]\n{}", results.config_text);
    write_file(dir, "manifest.txt", &manifest, &mut files)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh_2d, uniform_mesh_1d};

    #[test]
    fn exact_power_is_recovered() {
        let d: Vec<f64> = (1..=10).map(|k| 0.01 * k as f64).collect();
        let u: Vec<f64> = d.iter().map(|x| x.powf(0.73)).collect();
        let (a, r) = fit_power_law(&d, &u).unwrap();
        assert!((a - 0.73).abs() < 1e-12);
        assert!(r < 1e-12);
        assert!(fit_power_law(&d[..3], &u[..3]).is_err());
        let mut neg = u.clone();
        neg[4] = -1.0;
        assert!(matches!(fit_power_law(&d, &neg), Err(Error::Fit(_))));
    }

    #[test]
    fn fit_on_interpolated_power_1d() {
        let mesh = uniform_mesh_1d(0.0, 1.0, 256).unwrap();
        let anchor = &default_anchors(&DomainSpec::Interval { a: 0.0, b: 1.0 })[0];
        let u: Vec<f64> = (0..mesh.num_dofs())
            .map(|i| {
                let x = mesh.vertex(mesh.dof_vertex(i))[0];
                (x * (1.0 - x)).powf(0.4)
            })
            .collect();
        let w = FitWindow { d_min: 0.01, d_max: 0.05 };
        let fit = fit_boundary_exponent(&mesh, &u, anchor, w, 0).unwrap();
        assert!((fit.alpha - 0.4).abs() < 0.02, "{}", fit.alpha);
        assert!(fit.points >= 4);
    }

    #[test]
    fn fit_on_linear_function_2d() {
        let dom = DomainSpec::LShape;
        let mesh = build_mesh_2d(&dom, 1.0 / 16.0, 1.0).unwrap();
        let u: Vec<f64> = (0..mesh.num_dofs())
            .map(|i| 0.5 - mesh.vertex(mesh.dof_vertex(i))[1])
            .collect();
        let anchors = default_anchors(&dom);
        let w = default_window(&mesh, &dom, &anchors[0]).unwrap();
        assert!(w.d_min > 0.0 && (w.d_max - 0.05 * dom.diameter()).abs() < 1e-15);
        let fit = fit_boundary_exponent(&mesh, &u, &anchors[0], FitWindow { d_min: 0.1, d_max: 0.3 }, 8).unwrap();
        assert!((fit.alpha - 1.0).abs() < 1e-9, "{}", fit.alpha);
    }

    #[test]
    fn anchors_point_inwards() {
        for dom in [DomainSpec::Square { side: 1.0 }, DomainSpec::LShape] {
            for a in default_anchors(&dom) {
                let x = add(a.point, scale(a.direction, 0.1));
                assert!(dom.dist_to_boundary(a.point) < 1e-15);
                assert!(dom.dist_to_boundary(x) > 0.05);
                let inside = match dom {
                    DomainSpec::LShape => !(x[0] >= 0.0 && x[1] <= 0.0),
                    _ => true,
                };
                assert!(inside && x[0].abs() < 0.5 && x[1].abs() < 0.5);
            }
        }
    }

    #[test]
    fn config_checks() {
        let base = r#"
experiment.kind = "convergence_rate"
domain.kind = "interval"
domain.a = -1.0
domain.b = 1.0
kernel.family = "pure"
kernel.s = 0.5
kernel.p = 2.0
mesh.h_list = [0.25, 0.125, 0.0625]
"#;
        let cfg = ExperimentConfig::from_toml(base).unwrap();
        assert_eq!(cfg.h_values.len(), 3);
        assert!(ExperimentConfig::from_toml(&base.replace("0.0625", "0.1")).is_err());
        assert!(ExperimentConfig::from_toml(&base.replace("0.125, 0.0625", "0.125")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{base}fit.anchors = [\"reentrant_corner\"]\n")).is_err());
    }

    #[test]
    fn failed_cell_is_isolated() {
        let text = r#"
experiment.kind = "profile_dump"
domain.kind = "interval"
domain.a = -1.0
domain.b = 1.0
kernel.family = "pure"
kernel.p = 2.0
mesh.h = 0.125
sweep.s = [0.3, 0.6]
solver.max_iterations = 1
solver.tolerance = 1e-300
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let res = run_profile_dump(&cfg);
        assert_eq!(res.cells.len(), 2);
        assert!(!res.all_succeeded());
        let good = ExperimentConfig::from_toml(&text.replace("solver.tolerance = 1e-300\n", "")).unwrap();
        let res = run_profile_dump(&good);
        assert!(res.all_succeeded());
        let prof = &res.cells[0].outcome.as_ref().unwrap().profiles[0];
        assert_eq!(prof.points.len(), 17);
        assert_eq!(prof.points[0], (-1.0, 0.0));
    }
}
