use std::sync::OnceLock;

use fracp_fem::assembly::vertex_values;
use fracp_fem::experiments::fit_power_law;
use fracp_fem::kernel::KernelFamily;
use fracp_fem::mesh::{Point, Star};
use fracp_fem::norms::{fit_rates, wsp_norm};
use fracp_fem::quadrature::{classify_pair, pair_rule, PairClass};
use fracp_fem::{
    build_graded_mesh_1d, build_mesh_2d, solve, uniform_mesh_1d, AssemblyContext, DomainSpec, Forcing, Kernel, Mesh,
    QuadParams, SolverParams,
};
use proptest::prelude::*;

fn ctx_1d(p: f64) -> &'static AssemblyContext {
    static CTX: OnceLock<Vec<(f64, AssemblyContext)>> = OnceLock::new();
    let all = CTX.get_or_init(|| {
        [1.75, 2.0, 3.0]
            .iter()
            .map(|&p| {
                let mesh = uniform_mesh_1d(-1.0, 1.0, 16).unwrap();
                let k = Kernel::pure(1, 0.4, p, true).unwrap();
                (p, AssemblyContext::new(mesh, k, QuadParams::default()).unwrap())
            })
            .collect()
    });
    &all.iter().find(|(q, _)| *q == p).unwrap().1
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, n)
}

fn seg_dist(x: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ax = [x[0] - a[0], x[1] - a[1]];
    let t = ((ax[0] * ab[0] + ax[1] * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
    let d = [ax[0] - t * ab[0], ax[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

fn triangles_meet(mesh: &Mesh, a: usize, b: usize) -> bool {
    let (pa, pb) = (mesh.element_points(a), mesh.element_points(b));
    let tol = 1e-12 * mesh.diameter(a);
    (0..3).any(|i| (0..3).any(|j| seg_dist(pa[i], pb[j], pb[(j + 1) % 3]) < tol || seg_dist(pb[j], pa[i], pa[(i + 1) % 3]) < tol))
}

#[test]
fn partition_property_all_domains() {
    let domains = [DomainSpec::Square { side: 1.0 }, DomainSpec::Square { side: 2.5 }, DomainSpec::LShape];
    for dom in &domains {
        for mu in [1.0, 1.5, 2.0] {
            let mesh = build_mesh_2d(dom, 0.125, mu).unwrap();
            let rel = (mesh.measure() - dom.measure()).abs() / dom.measure();
            assert!(rel < 1e-12, "{dom:?} mu={mu}: {rel}");
        }
    }
    for mu in [1.0, 2.0, 3.0] {
        let mesh = build_graded_mesh_1d(-1.0, 3.0, 0.05, mu).unwrap();
        assert!((mesh.measure() - 4.0).abs() < 1e-12 * 4.0);
    }
}

#[test]
fn grading_law_is_uniform_in_h() {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for k in 3..=8 {
        let h = 0.5f64.powi(k);
        let mesh = build_graded_mesh_1d(-1.0, 1.0, h, 2.0).unwrap();
        for e in 0..mesh.num_elements() {
            if mesh.touches_boundary(e) {
                continue;
            }
            let [a, b, _] = mesh.element_points(e);
            let d = (1.0 - a[0].abs()).min(1.0 - b[0].abs());
            let r = mesh.diameter(e) / (h * d.sqrt());
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    assert!(lo > 1.0 && hi < 4.0 && hi / lo < 2.0, "ratio range [{lo}, {hi}]");
}

#[test]
fn halving_h_shrinks_the_largest_element() {
    for mu in [1.0, 2.0] {
        for k in 2..=6 {
            let h = 0.5f64.powi(k);
            let coarse = build_graded_mesh_1d(-1.0, 1.0, h, mu).unwrap();
            let fine = build_graded_mesh_1d(-1.0, 1.0, h / 2.0, mu).unwrap();
            assert!(fine.h_max() < 0.6 * coarse.h_max(), "1D mu={mu} h={h}");
        }
        for h in [0.25, 0.125] {
            let coarse = build_mesh_2d(&DomainSpec::LShape, h, mu).unwrap();
            let fine = build_mesh_2d(&DomainSpec::LShape, h / 2.0, mu).unwrap();
            assert!(fine.h_max() <= 0.5 * coarse.h_max() * (1.0 + 1e-12), "2D mu={mu} h={h}");
        }
    }
}

#[test]
fn first_ring_matches_geometric_intersection() {
    for (dom, mu) in [(DomainSpec::Square { side: 1.0 }, 1.0), (DomainSpec::LShape, 2.0)] {
        let mesh = build_mesh_2d(&dom, 0.125, mu).unwrap();
        for e in 0..mesh.num_elements() {
            let Star::Elements(mut star) = mesh.element_star(e, 1, false).unwrap() else { panic!() };
            star.sort_unstable();
            let brute: Vec<usize> = (0..mesh.num_elements()).filter(|&t| triangles_meet(&mesh, e, t)).collect();
            assert_eq!(star, brute, "element {e}");
        }
    }
}

#[test]
fn truncated_pattern_is_band_limited() {
    let mesh = uniform_mesh_1d(-1.0, 1.0, 40).unwrap();
    let delta = 0.2;
    let k = Kernel::new(KernelFamily::Truncated, 1, 0.5, 2.0, delta, true).unwrap();
    let ctx = AssemblyContext::new(mesh, k, QuadParams::default()).unwrap();
    let m = ctx.stiffness();
    let mesh = ctx.mesh();
    let (mut zeros, mut nonzeros) = (0, 0);
    for i in 0..ctx.num_dofs() {
        for j in 0..ctx.num_dofs() {
            let (xi, xj) = (mesh.vertex(mesh.dof_vertex(i))[0], mesh.vertex(mesh.dof_vertex(j))[0]);
            // hat supports are [x - h, x + h]
            let gap = (xi - xj).abs() - 2.0 * 0.05;
            if gap > delta + 1e-12 {
                assert_eq!(m[(i, j)], 0.0, "({i}, {j})");
                zeros += 1;
            } else if gap < delta - 1e-12 {
                nonzeros += (m[(i, j)] != 0.0) as usize;
            }
        }
    }
    assert!(zeros > 0 && nonzeros > 0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, .. ProptestConfig::default() })]

    #[test]
    fn g_rho_is_monotone_and_homogeneous(
        p in 1.1f64..5.0,
        s in 0.05f64..0.95,
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
        t in 0.01f64..100.0,
    ) {
        let k = Kernel::new(KernelFamily::Tempered, 1, s, p, 0.3, true).unwrap();
        let (x, y) = ([0.1, 0.0], [0.35, 0.0]);
        let (ga, gb) = (k.g_rho(x, y, a), k.g_rho(x, y, b));
        prop_assert!((ga - gb) * (a - b) >= 0.0);
        let scaled = k.g_rho(x, y, t * a);
        let expect = t.powf(p - 1.0) * ga;
        prop_assert!((scaled - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
    }

    #[test]
    fn kernel_is_symmetric_and_bounded(
        x0 in -1.0f64..1.0, x1 in -1.0f64..1.0, y0 in -1.0f64..1.0, y1 in -1.0f64..1.0,
        s in 0.05f64..0.95, p in 1.1f64..4.0, fam in 0usize..3,
    ) {
        let family = [KernelFamily::Pure, KernelFamily::Truncated, KernelFamily::Tempered][fam].clone();
        let k = Kernel::new(family, 2, s, p, 0.7, true).unwrap();
        let (x, y) = ([x0, x1], [y0, y1]);
        let r = ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt();
        prop_assume!(r > 1e-6);
        let (kxy, kyx) = (k.eval(x, y).unwrap(), k.eval(y, x).unwrap());
        prop_assert_eq!(kxy, kyx);
        prop_assert!(kxy * r.powf(2.0 + s * p) <= k.c() * k.psi_max() * (1.0 + 1e-12));
    }

    #[test]
    fn pair_rules_integrate_constants(a in 0usize..128, b in 0usize..128, order in 1usize..8) {
        let mesh = build_mesh_2d(&DomainSpec::Square { side: 1.0 }, 0.125, 1.0).unwrap();
        let Ok(rule) = pair_rule(&mesh, a, b, order) else {
            prop_assert!(order < 2 && classify_pair(&mesh, a, b).unwrap() != PairClass::Disjoint);
            return Ok(());
        };
        let exact = mesh.element_measure(a) * mesh.element_measure(b);
        prop_assert!((rule.total_weight() - exact).abs() <= 1e-12 * exact);
        prop_assert!(rule.nodes.iter().all(|(x, y, w)| *w > 0.0 && x != y));
    }

    #[test]
    fn energy_is_midpoint_convex(u in vec_strategy(15), v in vec_strategy(15), pi in 0usize..3) {
        let ctx = ctx_1d([1.75, 2.0, 3.0][pi]);
        let m: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 0.5 * (a + b)).collect();
        let (eu, ev, em) = (ctx.energy_g(&u).unwrap(), ctx.energy_g(&v).unwrap(), ctx.energy_g(&m).unwrap());
        prop_assert!(em <= 0.5 * (eu + ev) + 1e-12 * (eu + ev).abs());
    }

    #[test]
    fn residual_is_monotone(u in vec_strategy(15), v in vec_strategy(15), pi in 0usize..3) {
        let ctx = ctx_1d([1.75, 2.0, 3.0][pi]);
        let f = Forcing::Constant(1.0);
        let (ru, rv) = (ctx.residual(&u, &f).unwrap(), ctx.residual(&v, &f).unwrap());
        let dr: Vec<f64> = ru.iter().zip(&rv).map(|(a, b)| a - b).collect();
        let du: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        prop_assert!(dot(&dr, &du) >= -1e-12 * dot(&du, &du).sqrt() * dot(&dr, &dr).sqrt());
    }

    #[test]
    fn energy_and_residual_are_homogeneous(u in vec_strategy(15), t in 0.05f64..20.0, pi in 0usize..3) {
        let p = [1.75, 2.0, 3.0][pi];
        let ctx = ctx_1d(p);
        let tu: Vec<f64> = u.iter().map(|x| t * x).collect();
        let (e, et) = (ctx.energy_g(&u).unwrap(), ctx.energy_g(&tu).unwrap());
        prop_assert!((et - t.powf(p) * e).abs() <= 1e-11 * et.abs());
        let (g, gt) = (ctx.gradient_g(&u).unwrap(), ctx.gradient_g(&tu).unwrap());
        let scale = t.powf(p - 1.0);
        let gn = dot(&gt, &gt).sqrt();
        for (a, b) in g.iter().zip(&gt) {
            prop_assert!((b - scale * a).abs() <= 1e-11 * gn);
        }
    }

    #[test]
    fn wsp_norm_is_a_norm(u in vec_strategy(15), v in vec_strategy(15), t in -5.0f64..5.0) {
        let ctx = ctx_1d(3.0);
        let nu = wsp_norm(ctx, &u).unwrap();
        let tu: Vec<f64> = u.iter().map(|x| t * x).collect();
        prop_assert!((wsp_norm(ctx, &tu).unwrap() - t.abs() * nu).abs() <= 1e-12 * nu.max(1e-300) * t.abs().max(1.0));
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        prop_assert!(wsp_norm(ctx, &w).unwrap() <= nu + wsp_norm(ctx, &v).unwrap() + 1e-10);
    }

    #[test]
    fn fits_recover_constructed_powers(alpha in 0.05f64..2.0, c in 0.1f64..10.0) {
        let d: Vec<f64> = (0..12).map(|k| 1e-4 * 1.7f64.powi(k)).collect();
        let u: Vec<f64> = d.iter().map(|x| c * x.powf(alpha)).collect();
        let (a, r) = fit_power_law(&d, &u).unwrap();
        prop_assert!((a - alpha).abs() < 1e-10 && r < 1e-10);
        let h: Vec<f64> = (0..5).map(|k| 0.5f64.powi(k)).collect();
        let table = fit_rates(&h, &u[..5].iter().zip(&h).map(|(_, x)| c * x.powf(alpha)).collect::<Vec<_>>()).unwrap();
        prop_assert!((table.fitted_rate - alpha).abs() < 1e-10);
        prop_assert!(table.rates.iter().all(|r| (r - alpha).abs() < 1e-10));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, .. ProptestConfig::default() })]

    #[test]
    fn solutions_obey_the_scaling_law(p in 1.5f64..4.0, s in 0.2f64..0.8) {
        let mesh = uniform_mesh_1d(-1.0, 1.0, 12).unwrap();
        let ctx = AssemblyContext::new(mesh, Kernel::pure(1, s, p, true).unwrap(), QuadParams::default()).unwrap();
        let params = SolverParams { tolerance: Some(1e-11), ..SolverParams::default() };
        let (u1, _) = solve(&ctx, &Forcing::Constant(1.0), &params).unwrap();
        let (u2, _) = solve(&ctx, &Forcing::Constant(2.0), &params).unwrap();
        let factor = 2f64.powf(1.0 / (p - 1.0));
        let scale = u2.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in u1.values.iter().zip(&u2.values) {
            prop_assert!((b - factor * a).abs() <= 1e-6 * scale);
        }
        let vals = vertex_values(ctx.mesh(), &u1.values);
        prop_assert!(vals.iter().all(|v| *v >= 0.0));
    }
}
