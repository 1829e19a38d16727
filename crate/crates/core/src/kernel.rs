//! Radial interaction kernels `c ψ(|x-y|/δ) |x-y|^{-d-sp}` and the
//! power-law integrand `G(x, y, ρ) = (c/2p) ψ |ρ|^p`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{dist, Point};
use crate::special::{beta, gamma, gauss_jacobi, gauss_legendre, truncated_beta_moment, Rule1d};

/// Shape of the cutoff function `ψ`.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    /// `ψ ≡ 1`.
    Pure,
    /// `ψ = χ_[0,1]`.
    Truncated,
    /// `ψ(r) = e^{-r}`.
    Tempered,
    /// Piecewise-linear `ψ` tabulated on nodes `0 = r_0 < ... < r_n`, zero beyond `r_n`.
    Custom(Arc<PsiTable>),
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Pure => "pure",
            KernelFamily::Truncated => "truncated",
            KernelFamily::Tempered => "tempered",
            KernelFamily::Custom(_) => "custom",
        }
    }
}

/// Tabulated cutoff function.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiTable {
    r: Vec<f64>,
    v: Vec<f64>,
}

impl PsiTable {
    /// Builds a table and checks non-degeneracy: `ψ ≥ ψ_0 > 0` near the origin.
    pub fn new(r: Vec<f64>, v: Vec<f64>) -> Result<PsiTable> {
        if r.len() < 2 || r.len() != v.len() {
            return Err(Error::param(
                "custom psi needs at least two (r, value) pairs",
            ));
        }
        if r[0] != 0.0 || r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param(
                "custom psi nodes must start at 0 and increase strictly",
            ));
        }
        if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::param("custom psi must be nonnegative and finite"));
        }
        let t = PsiTable { r, v };
        // Sample [0, r_1]; linear interpolation makes the endpoints decisive.
        let probe = t.r[1];
        let psi0 = (0..=32)
            .map(|k| t.eval(probe * k as f64 / 32.0))
            .fold(f64::INFINITY, f64::min);
        if !(psi0 > 0.0) {
            return Err(Error::param(
                "custom psi is degenerate: it vanishes near the origin",
            ));
        }
        Ok(t)
    }

    pub fn eval(&self, r: f64) -> f64 {
        let n = self.r.len();
        if r >= self.r[n - 1] {
            return if r == self.r[n - 1] {
                self.v[n - 1]
            } else {
                0.0
            };
        }
        let k = self.r.partition_point(|&x| x <= r).max(1) - 1;
        let t = (r - self.r[k]) / (self.r[k + 1] - self.r[k]);
        self.v[k] + t * (self.v[k + 1] - self.v[k])
    }

    pub fn support(&self) -> f64 {
        self.r[self.r.len() - 1]
    }

    pub fn max(&self) -> f64 {
        self.v.iter().copied().fold(0.0, f64::max)
    }

    fn breakpoints(&self) -> &[f64] {
        &self.r
    }
}

/// The normalizing constant `C_{d,s,p}`.
///
/// For `p = 2` it reduces to the classical fractional Laplacian constant,
/// e.g. `C_{1,1/2,2} = 1/π`.
pub fn normalizing_constant(d: usize, s: f64, p: f64) -> Result<f64> {
    check_order(s, p)?;
    if d == 0 {
        return Err(Error::param("dimension must be at least 1"));
    }
    let d = d as f64;
    let num = s * (1.0 - s) * p * gamma(0.5 * (p * s + d)) * 2f64.powf(2.0 * s - 2.0);
    let den = PI.powf(0.5 * (d - 1.0)) * gamma(0.5 * ((p - 2.0) * s + 3.0)) * gamma(2.0 - s);
    Ok(num / den)
}

fn check_order(s: f64, p: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::param(format!("s must lie in (0, 1), got {s}")));
    }
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::param(format!("p must lie in (1, inf), got {p}")));
    }
    Ok(())
}

/// A radial kernel of order `s` with growth exponent `p` in dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    family: KernelFamily,
    d: usize,
    s: f64,
    p: f64,
    delta: f64,
    normalized: bool,
    c: f64,
}

impl Kernel {
    pub fn new(
        family: KernelFamily,
        d: usize,
        s: f64,
        p: f64,
        delta: f64,
        normalized: bool,
    ) -> Result<Kernel> {
        check_order(s, p)?;
        if d != 1 && d != 2 {
            return Err(Error::param(format!("dimension must be 1 or 2, got {d}")));
        }
        let needs_delta = !matches!(family, KernelFamily::Pure);
        if needs_delta && !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param(format!(
                "horizon must be positive, got {delta}"
            )));
        }
        let c = if normalized {
            normalizing_constant(d, s, p)?
        } else {
            1.0
        };
        Ok(Kernel {
            family,
            d,
            s,
            p,
            delta: if needs_delta { delta } else { f64::INFINITY },
            normalized,
            c,
        })
    }

    /// Pure fractional kernel.
    pub fn pure(d: usize, s: f64, p: f64, normalized: bool) -> Result<Kernel> {
        Kernel::new(KernelFamily::Pure, d, s, p, f64::INFINITY, normalized)
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Tempering rate `λ = 1/δ`.
    pub fn lambda(&self) -> f64 {
        1.0 / self.delta
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Prefactor `c` (`C_{d,s,p}` or 1).
    pub fn c(&self) -> f64 {
        self.c
    }

    /// The same kernel with a different exponent `p`.
    pub fn with_p(&self, p: f64) -> Result<Kernel> {
        Kernel::new(
            self.family.clone(),
            self.d,
            self.s,
            p,
            self.delta,
            self.normalized,
        )
    }

    /// Exponent `d + sp` of the singular factor.
    pub fn order(&self) -> f64 {
        self.d as f64 + self.s * self.p
    }

    /// Interaction radius: `|x - y|` beyond which `ψ` vanishes.
    pub fn horizon(&self) -> f64 {
        match &self.family {
            KernelFamily::Truncated => self.delta,
            KernelFamily::Custom(t) => t.support() * self.delta,
            _ => f64::INFINITY,
        }
    }

    pub fn psi_max(&self) -> f64 {
        match &self.family {
            KernelFamily::Custom(t) => t.max(),
            _ => 1.0,
        }
    }

    /// `ψ(r/δ)` at distance `r`.
    #[inline]
    pub fn psi(&self, r: f64) -> f64 {
        match &self.family {
            KernelFamily::Pure => 1.0,
            KernelFamily::Truncated => {
                if r <= self.delta {
                    1.0
                } else {
                    0.0
                }
            }
            KernelFamily::Tempered => (-r / self.delta).exp(),
            KernelFamily::Custom(t) => t.eval(r / self.delta),
        }
    }

    /// `ψ(r/δ) r^{-d-sp}` without the prefactor.
    #[inline]
    pub(crate) fn radial(&self, r: f64) -> f64 {
        let psi = self.psi(r);
        if psi == 0.0 {
            0.0
        } else {
            psi * r.powf(-self.order())
        }
    }

    /// Kernel value `γ(x, y) = c ψ(|x-y|/δ) |x-y|^{-d-sp}`.
    pub fn eval(&self, x: Point, y: Point) -> Result<f64> {
        let r = dist(x, y);
        if r == 0.0 {
            return Err(Error::Singularity);
        }
        Ok(self.c * self.radial(r))
    }

    /// `G(x, y, ρ) = (c/2p) ψ |ρ|^p`.
    pub fn g(&self, x: Point, y: Point, rho: f64) -> f64 {
        self.c / (2.0 * self.p) * self.psi(dist(x, y)) * rho.abs().powf(self.p)
    }

    /// `G_ρ(x, y, ρ) = (c/2) ψ |ρ|^{p-2} ρ`, zero at `ρ = 0`.
    pub fn g_rho(&self, x: Point, y: Point, rho: f64) -> f64 {
        if rho == 0.0 {
            return 0.0;
        }
        0.5 * self.c * self.psi(dist(x, y)) * rho.abs().powf(self.p - 2.0) * rho
    }

    /// `G̃(x, y, ρ) = G_ρ / ρ = (c/2) ψ |ρ|^{p-2}`; infinite at `ρ = 0` when `p < 2`.
    pub fn g_tilde(&self, x: Point, y: Point, rho: f64) -> f64 {
        0.5 * self.c * self.psi(dist(x, y)) * rho.abs().powf(self.p - 2.0)
    }

    /// `E(r) = ∫_r^∞ ψ(t/δ) t^{-1-sp} dt`, the radial tail beyond distance `r`.
    pub fn tail_radial(&self, r: f64) -> f64 {
        let sp = self.s * self.p;
        match &self.family {
            KernelFamily::Pure => r.powf(-sp) / sp,
            KernelFamily::Truncated => {
                if r >= self.delta {
                    0.0
                } else {
                    (r.powf(-sp) - self.delta.powf(-sp)) / sp
                }
            }
            KernelFamily::Tempered | KernelFamily::Custom(_) => {
                // t = r w^{-1/(sp)} maps the tail onto w in (0, 1].
                let rule = tail_rule();
                let mut acc = 0.0;
                for (w, wt) in rule.iter() {
                    let t = r * w.powf(-1.0 / sp);
                    acc += wt * self.psi(t);
                }
                r.powf(-sp) / sp * acc
            }
        }
    }

    /// Distances where `ψ(r/δ)` is not smooth.
    pub(crate) fn kinks(&self) -> Vec<f64> {
        match &self.family {
            KernelFamily::Truncated => vec![self.delta],
            KernelFamily::Custom(t) => t.breakpoints().iter().map(|r| r * self.delta).collect(),
            _ => Vec::new(),
        }
    }

    /// `∫_0^1 ζ^β (1-ζ)^n ψ(ζ ℓ/δ) dζ` for `β > -1`.
    pub(crate) fn radial_moment(&self, beta_exp: f64, n: u32, ell: f64) -> f64 {
        match &self.family {
            KernelFamily::Pure => beta(beta_exp + 1.0, n as f64 + 1.0),
            KernelFamily::Truncated => {
                truncated_beta_moment(beta_exp, n, (self.delta / ell).min(1.0))
            }
            KernelFamily::Tempered => {
                let rule = gauss_jacobi(16, n as f64, beta_exp);
                rule.iter().map(|(z, w)| w * self.psi(z * ell)).sum()
            }
            KernelFamily::Custom(t) => {
                // Split at the kinks of ψ so each panel is polynomial.
                let mut cuts: Vec<f64> = t
                    .breakpoints()
                    .iter()
                    .map(|&r| r * self.delta / ell)
                    .filter(|&z| z > 0.0 && z < 1.0)
                    .collect();
                cuts.push(1.0);
                let first = cuts[0];
                // First panel [0, first]: Jacobi weight in the scaled variable.
                let rule = gauss_jacobi(12, 0.0, beta_exp);
                let mut acc = 0.0;
                for (x, w) in rule.iter() {
                    let z = first * x;
                    acc += w
                        * first.powf(beta_exp + 1.0)
                        * (1.0 - z).powi(n as i32)
                        * self.psi(z * ell);
                }
                let gl = gauss_legendre(8);
                for pair in cuts.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    for (x, w) in gl.iter() {
                        let z = a + (b - a) * x;
                        acc += (b - a)
                            * w
                            * z.powf(beta_exp)
                            * (1.0 - z).powi(n as i32)
                            * self.psi(z * ell);
                    }
                }
                acc
            }
        }
    }
}

fn tail_rule() -> &'static Rule1d {
    static RULE: std::sync::OnceLock<Rule1d> = std::sync::OnceLock::new();
    RULE.get_or_init(|| {
        let base = gauss_legendre(16);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        // Geometric panels towards w = 0, where ψ(t) decays.
        let mut hi = 1.0;
        for _ in 0..12 {
            let lo = hi * 0.35;
            for (x, w) in base.iter() {
                nodes.push(lo + (hi - lo) * x);
                weights.push((hi - lo) * w);
            }
            hi = lo;
        }
        Rule1d { nodes, weights }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classical(d: usize, s: f64) -> f64 {
        let d = d as f64;
        2f64.powf(2.0 * s) * s * statrs::function::gamma::gamma(s + 0.5 * d)
            / (PI.powf(0.5 * d) * statrs::function::gamma::gamma(1.0 - s))
    }

    #[test]
    fn constant_reference_values() {
        let c1 = normalizing_constant(1, 0.5, 2.0).unwrap();
        let c2 = normalizing_constant(2, 0.5, 2.0).unwrap();
        assert!((c1 * PI - 1.0).abs() < 1e-12);
        assert!((c2 * 2.0 * PI - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_matches_classical_for_p2() {
        for d in [1, 2] {
            for k in 1..10 {
                let s = k as f64 / 10.0;
                let c = normalizing_constant(d, s, 2.0).unwrap();
                assert!((c / classical(d, s) - 1.0).abs() < 1e-12, "d={d} s={s}");
            }
        }
    }

    #[test]
    fn constant_rejects_bad_parameters() {
        assert!(normalizing_constant(1, 0.0, 2.0).is_err());
        assert!(normalizing_constant(1, 0.5, 1.0).is_err());
        assert!(normalizing_constant(0, 0.5, 2.0).is_err());
    }

    #[test]
    fn kernel_values() {
        let k = Kernel::new(KernelFamily::Truncated, 1, 0.5, 2.0, 0.2, false).unwrap();
        assert_eq!(k.eval([0.0, 0.0], [0.3, 0.0]).unwrap(), 0.0);
        let k = Kernel::pure(1, 0.5, 2.0, true).unwrap();
        let v = k.eval([0.0, 0.0], [0.5, 0.0]).unwrap();
        assert!((v - 4.0 / PI).abs() < 1e-14);
        assert!(matches!(
            k.eval([0.1, 0.0], [0.1, 0.0]),
            Err(Error::Singularity)
        ));
    }

    #[test]
    fn g_family() {
        let k = Kernel::pure(1, 0.5, 3.0, false).unwrap();
        let (x, y) = ([0.0, 0.0], [0.3, 0.0]);
        assert_eq!(k.g_rho(x, y, 0.0), 0.0);
        assert!((k.g_rho(x, y, 2.0) - 2.0).abs() < 1e-15);
        assert!((k.g_rho(x, y, -2.0) + 2.0).abs() < 1e-15);
        assert!((k.g(x, y, 2.0) - 8.0 / 6.0).abs() < 1e-15);
        assert!((k.g_tilde(x, y, 2.0) - 1.0).abs() < 1e-15);
        let k2 = Kernel::pure(2, 0.5, 2.0, true).unwrap();
        assert!((k2.g_rho(x, y, 0.7) - 0.5 * k2.c() * 0.7).abs() < 1e-15);
    }

    #[test]
    fn tail_radial_closed_forms() {
        let k = Kernel::pure(1, 0.5, 2.0, false).unwrap();
        assert!((k.tail_radial(1.0) - 1.0).abs() < 1e-15);
        let k = Kernel::new(KernelFamily::Truncated, 1, 0.5, 2.0, 0.2, false).unwrap();
        assert_eq!(k.tail_radial(0.5), 0.0);
        assert!((k.tail_radial(0.1) - (10.0 - 5.0)).abs() < 1e-12);
    }

    #[test]
    fn tempered_tail_matches_direct_quadrature() {
        let k = Kernel::new(KernelFamily::Tempered, 1, 0.4, 2.5, 0.3, false).unwrap();
        let r = 0.05;
        // direct: substitute t = r + u/(1-u) on u in (0,1), fine Gauss panels
        let gl = gauss_legendre(20);
        let mut direct = 0.0;
        for panel in 0..200 {
            let (a, b) = (panel as f64 / 200.0, (panel + 1) as f64 / 200.0);
            for (x, w) in gl.iter() {
                let u = a + (b - a) * x;
                let t = r + u / (1.0 - u);
                let jac = 1.0 / (1.0 - u).powi(2);
                direct += (b - a) * w * jac * (-t / 0.3).exp() * t.powf(-1.0 - 1.0);
            }
        }
        assert!(
            (k.tail_radial(r) / direct - 1.0).abs() < 1e-9,
            "{} {}",
            k.tail_radial(r),
            direct
        );
    }

    #[test]
    fn custom_table() {
        assert!(PsiTable::new(vec![0.0, 1.0], vec![0.0, 1.0]).is_err());
        assert!(PsiTable::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        let t = PsiTable::new(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(1.5), 0.5);
        assert_eq!(t.eval(3.0), 0.0);
        let k = Kernel::new(KernelFamily::Custom(Arc::new(t)), 1, 0.5, 2.0, 0.1, false).unwrap();
        assert!((k.psi(0.15) - 0.5).abs() < 1e-15);
        assert!((k.horizon() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn radial_moments_against_quadrature() {
        let fams = [
            Kernel::pure(2, 0.3, 2.5, false).unwrap(),
            Kernel::new(KernelFamily::Truncated, 2, 0.3, 2.5, 0.2, false).unwrap(),
            Kernel::new(KernelFamily::Tempered, 2, 0.3, 2.5, 0.2, false).unwrap(),
            Kernel::new(
                KernelFamily::Custom(Arc::new(
                    PsiTable::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.0]).unwrap(),
                )),
                2,
                0.3,
                2.5,
                0.2,
                false,
            )
            .unwrap(),
        ];
        let gl = gauss_legendre(30);
        for k in &fams {
            for &(b, n) in &[(0.75, 1u32), (1.75, 2), (-0.25, 0)] {
                for ell in [0.05, 0.3, 0.9] {
                    // substitution ζ = t^{1/(b+1)} removes the endpoint singularity;
                    // panels are aligned with the kinks of ψ
                    let e = 1.0 / (b + 1.0);
                    let mut cuts = vec![0.0];
                    for r in [1.0, 2.0] {
                        let z: f64 = r * 0.2 / ell;
                        if z < 1.0 {
                            cuts.push(z.powf(b + 1.0));
                        }
                    }
                    cuts.push(1.0);
                    let mut q = 0.0;
                    for seg in cuts.windows(2) {
                        for panel in 0..100 {
                            let h = (seg[1] - seg[0]) / 100.0;
                            let (lo, hi) =
                                (seg[0] + panel as f64 * h, seg[0] + (panel + 1) as f64 * h);
                            for (x, w) in gl.iter() {
                                let t = lo + (hi - lo) * x;
                                let z: f64 = t.powf(e);
                                q += (hi - lo) * w * e * (1.0 - z).powi(n as i32) * k.psi(z * ell);
                            }
                        }
                    }
                    let m = k.radial_moment(b, n, ell);
                    assert!(
                        (m - q).abs() < 1e-6 * q.abs().max(1e-3),
                        "{:?} b={b} n={n} ell={ell}: {m} vs {q}",
                        k.family()
                    );
                }
            }
        }
    }
}
