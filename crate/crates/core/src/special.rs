//! Special functions and one-dimensional Gauss rules.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function via the Lanczos approximation (g = 7, nine terms), with the
/// reflection formula below 1/2.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        PI / ((PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = LANCZOS_COEF[0];
        let t = x + LANCZOS_G + 0.5;
        for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

/// Beta function B(a, b) for positive arguments.
pub fn beta(a: f64, b: f64) -> f64 {
    gamma(a) * gamma(b) / gamma(a + b)
}

/// Surface measure of the unit sphere in R^d.
pub fn sphere_measure(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// Quadrature rule on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Rule mapped affinely onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Rule1d {
        let h = b - a;
        Rule1d {
            nodes: self.nodes.iter().map(|t| a + h * t).collect(),
            weights: self.weights.iter().map(|w| w * h).collect(),
        }
    }
}

/// Gauss-Legendre rule with `n` points on [0, 1].
pub fn gauss_legendre(n: usize) -> Rule1d {
    assert!(n >= 1, "Gauss rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = 0.5 * (1.0 - z);
        nodes[n - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    Rule1d { nodes, weights }
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss-Jacobi rule with `n` points on [0, 1] for the weight
/// `x^b (1 - x)^a`, `a, b > -1` (Golub-Welsch).
pub fn gauss_jacobi(n: usize, a: f64, b: f64) -> Rule1d {
    assert!(n >= 1, "Gauss rule needs at least one point");
    assert!(a > -1.0 && b > -1.0, "Jacobi exponents must exceed -1");
    // Recurrence on [-1, 1] for (1 - t)^a (1 + t)^b.
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let ab = a + b;
    for (k, d) in diag.iter_mut().enumerate() {
        let k = k as f64;
        let s = 2.0 * k + ab;
        *d = if k == 0.0 {
            (b - a) / (ab + 2.0)
        } else {
            (b * b - a * a) / (s * (s + 2.0))
        };
    }
    for (k, o) in off.iter_mut().enumerate() {
        let k = (k + 1) as f64;
        let s = 2.0 * k + ab;
        let num = 4.0 * k * (k + a) * (k + b) * (k + ab);
        let den = s * s * (s + 1.0) * (s - 1.0);
        *o = (num / den).sqrt();
    }
    let (t, v0) = symmetric_tridiagonal_eigen(&diag, &off);
    let mu0 = beta(a + 1.0, b + 1.0);
    let mut pairs: Vec<(f64, f64)> = t
        .iter()
        .zip(v0.iter())
        .map(|(&t, &v)| (0.5 * (1.0 + t), mu0 * v * v))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    Rule1d {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Eigenvalues and first eigenvector components of a symmetric tridiagonal
/// matrix.
fn symmetric_tridiagonal_eigen(diag: &[f64], off: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| {
        if i == j {
            diag[i]
        } else if i + 1 == j {
            off[i]
        } else if j + 1 == i {
            off[j]
        } else {
            0.0
        }
    });
    let eig = m
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("tridiagonal eigendecomposition");
    let s = eig.S();
    let u = eig.U();
    let values = (0..n).map(|i| s[i]).collect();
    let first = (0..n).map(|i| u[(0, i)]).collect();
    (values, first)
}

/// Geometrically graded composite Gauss-Legendre rule on [0, 1], refined
/// towards 0: `layers` layers with ratio `sigma`, `n` points per layer.
pub fn graded_rule(layers: usize, n: usize, sigma: f64) -> Rule1d {
    let base = gauss_legendre(n);
    let mut nodes = Vec::with_capacity(layers * n);
    let mut weights = Vec::with_capacity(layers * n);
    let mut hi = 1.0;
    for l in 0..layers {
        let lo = if l + 1 == layers { 0.0 } else { hi * sigma };
        for (t, w) in base.iter() {
            nodes.push(lo + (hi - lo) * t);
            weights.push((hi - lo) * w);
        }
        hi = lo;
    }
    Rule1d { nodes, weights }
}

/// Integral of `x^beta (1 - x)^n` over [0, c] for `c` in [0, 1], `n` in {0, 1, 2, ...}.
pub fn truncated_beta_moment(beta: f64, n: u32, c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut binom = 1.0;
    for k in 0..=n {
        let e = beta + k as f64 + 1.0;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * binom * c.powf(e) / e;
        binom = binom * (n - k) as f64 / (k + 1) as f64;
    }
    sum
}

/// Integral of `cos(t)^a` over `[0, phi]`, `|phi| < pi/2`, odd in `phi`.
pub fn cos_power_integral(a: f64, phi: f64) -> f64 {
    if phi == 0.0 {
        return 0.0;
    }
    let b = 0.5 * (a + 1.0);
    let x = phi.sin().powi(2).min(1.0);
    let full = 0.5 * beta(0.5, b);
    let reg = statrs::function::beta::beta_reg(0.5, b, x);
    phi.signum() * full * reg
}
