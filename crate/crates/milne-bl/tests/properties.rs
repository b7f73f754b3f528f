//! Property tests for the invariants of each module.

use std::f64::consts::PI;
use std::sync::Arc;

use milne_bl::characteristics::{CharContext, Region};
use milne_bl::config::RunConfig;
use milne_bl::diffusive_limit::{cosine_direction, history_rng, hitting_time, BallDatum};
use milne_bl::geometry::{psi_weights, CurvatureProfile, LocalGeometry, MilneConfig};
use milne_bl::milne_solver::{solve_inflow, MilneProblem};
use milne_bl::phase_grid::{bar, Field, GridSpec, PhaseGrid, FOUR_PI};
use milne_bl::presets::DatumPreset;
use milne_bl::quadrature::gauss_legendre;
use proptest::prelude::*;
use rand::Rng;

fn unit_geometry() -> (MilneConfig, CurvatureProfile) {
    (MilneConfig::new(0.1, 0.25).unwrap(), CurvatureProfile::Constant { r1: 1.0, r2: 1.0 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gauss_legendre_integrates_design_degree(n in 1usize..24, deg in 0usize..47) {
        prop_assume!(deg < 2 * n);
        let (x, w) = gauss_legendre(n);
        let q: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(deg as i32)).sum();
        let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
        prop_assert!((q - exact).abs() < 1e-12);
    }

    #[test]
    fn polar_quadrature_exact_in_sin_phi(half in 2usize..12, deg in 0u32..4) {
        prop_assume!((deg as usize) < 2 * half);
        let spec = GridSpec { n_eta: 3, n_phi: 2 * half, n_psi: 4, ..GridSpec::default() };
        let g = PhaseGrid::new(&spec, 1.0).unwrap();
        // int int sin^k(phi) cos(phi) dphi dpsi = 2 pi int_{-1}^{1} s^k ds.
        let mut q = 0.0;
        for j in 0..g.n_phi() {
            for l in 0..g.n_psi() {
                q += g.w_phi[j] * g.w_psi[l] * g.sin_phi[j].powi(deg as i32);
            }
        }
        let exact = if deg % 2 == 1 { 0.0 } else { 2.0 * PI * 2.0 / (deg as f64 + 1.0) };
        prop_assert!((q - exact).abs() < 1e-10);
    }

    #[test]
    fn specular_pairs_have_equal_weights(half in 1usize..20, n_psi in 1usize..9) {
        let spec = GridSpec { n_eta: 3, n_phi: 2 * half, n_psi, ..GridSpec::default() };
        let g = PhaseGrid::new(&spec, 1.0).unwrap();
        for j in 0..g.n_phi() {
            let m = g.mirror(j);
            prop_assert_eq!(g.w_phi[j], g.w_phi[m]);
            prop_assert!((g.phi[j] + g.phi[m]).abs() < 1e-15);
        }
        prop_assert!((g.angular_measure() - FOUR_PI).abs() < 1e-10);
    }

    #[test]
    fn bar_is_a_projection(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let spec = GridSpec { n_eta: 8, n_phi: 8, n_psi: 4, ..GridSpec::default() };
        let g = Arc::new(PhaseGrid::new(&spec, 1.5).unwrap());
        let f = Field::from_fn(g.clone(), |eta, phi, psi| a * eta + b * phi.sin() * psi.cos() + phi.cos());
        let once = bar(&f);
        let mut lifted = Field::from_fn(g.clone(), |_, _, _| 0.0);
        for (i, &m) in once.iter().enumerate() {
            for j in 0..g.n_phi() {
                for l in 0..g.n_psi() {
                    lifted.set(i, j, l, m);
                }
            }
        }
        let twice = bar(&lifted);
        for (x, y) in once.iter().zip(&twice) {
            prop_assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn potential_is_monotone_and_integrates_force(eta in 0.0f64..1.7, psi in -PI..PI, r1 in 0.8f64..3.0, r2 in 0.8f64..3.0) {
        let geo = LocalGeometry::new(0.1, r1, r2);
        let (s2, c2) = psi_weights(psi);
        prop_assert!(geo.potential(0.0, s2, c2) == 0.0);
        prop_assert!(geo.potential(eta, s2, c2) >= 0.0);
        let h = 1e-5;
        let dv = (geo.potential(eta + h, s2, c2) - geo.potential((eta - h).max(0.0), s2, c2)) / (eta + h - (eta - h).max(0.0));
        prop_assert!((dv + geo.force(eta, s2, c2)).abs() < 1e-7);
        let (ft, gg) = geo.force_split(eta);
        prop_assert!((ft + gg * c2 - geo.force(eta, s2, c2)).abs() < 1e-14);
    }

    #[test]
    fn energy_and_zeta_conserved_along_traces(eta in 0.0f64..1.77, mag in 1e-4f64..1.57, up in any::<bool>(), psi in -PI..PI, frac in 0.0f64..1.0) {
        let (cfg, prof) = unit_geometry();
        let ctx = CharContext::new(&cfg, &prof, [0.0; 2]);
        let phi = if up { mag } else { -mag };
        let pt = ctx.point(eta, phi, psi).unwrap();
        let top = if pt.energy >= ctx.threshold(psi) { ctx.eta_plus(pt.energy, psi).unwrap() } else { cfg.slab_length };
        let moved = ctx.trace(&pt, frac * top - eta).unwrap();
        prop_assert!((ctx.energy(moved.eta, moved.phi, moved.psi) - pt.energy).abs() < 1e-10);
        prop_assert!((ctx.zeta(&moved) - ctx.zeta(&pt)).abs() < 1e-8);
    }

    #[test]
    fn regions_partition_phase_space(eta in 0.0f64..1.77, phi in -1.57f64..1.57, psi in -PI..PI) {
        prop_assume!(phi != 0.0);
        let (cfg, prof) = unit_geometry();
        let ctx = CharContext::new(&cfg, &prof, [0.0; 2]);
        let pt = ctx.point(eta, phi, psi).unwrap();
        match pt.region {
            Region::I => prop_assert!(phi > 0.0),
            Region::II => prop_assert!(phi < 0.0 && pt.energy <= ctx.threshold(psi)),
            Region::III => {
                prop_assert!(phi < 0.0);
                prop_assert!(pt.eta_plus >= eta - 1e-12 && pt.eta_plus <= cfg.slab_length);
            }
        }
    }

    #[test]
    fn hitting_point_lies_on_sphere(x in prop::array::uniform3(-0.55f64..0.55), th in 0.0f64..PI, ph in -PI..PI, eps in 0.05f64..0.9) {
        let w = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
        let (t, y) = hitting_time(x, w, eps).unwrap();
        prop_assert!(t > 0.0);
        let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
        prop_assert!((r - 1.0).abs() < 1e-12);
        for k in 0..3 {
            prop_assert!((y[k] - (x[k] - eps * t * w[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_directions_point_outward(seed in any::<u64>(), th in 0.0f64..PI, ph in -PI..PI) {
        let n = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
        let mut rng = history_rng(seed, 0, 0);
        for _ in 0..16 {
            let w = cosine_direction(n, &mut rng);
            let dot = w[0] * n[0] + w[1] * n[1] + w[2] * n[2];
            prop_assert!(dot >= 0.0);
            prop_assert!(((w[0] * w[0] + w[1] * w[1] + w[2] * w[2]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn history_streams_are_reproducible(seed in any::<u64>(), tally in 0usize..8, h in 0usize..1_000_000) {
        let a: u64 = history_rng(seed, tally, h).random();
        let b: u64 = history_rng(seed, tally, h).random();
        let c: u64 = history_rng(seed, tally, h + 1).random();
        prop_assert_eq!(a, b);
        prop_assert_ne!(a, c);
    }

    #[test]
    fn ball_datum_is_odd(x in prop::array::uniform3(-1.0f64..1.0)) {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        prop_assume!(r > 1e-3);
        let g = BallDatum::CosTheta;
        prop_assert!((g.value(x) + g.value([-x[0], -x[1], -x[2]])).abs() < 1e-15);
    }

    #[test]
    fn config_hash_depends_on_content_only(eps in 0.01f64..0.9, dir in "[a-z]{1,8}") {
        let text = |d: &str| format!(
            "command = \"milne-solve\"\noutput_dir = \"{d}\"\n[milne]\nepsilon = {eps}\nn_exponent = 0.25\nprofile = {{ kind = \"flat\" }}\ndatum = {{ kind = \"zero\" }}\n"
        );
        let a = RunConfig::parse(&text("out")).unwrap();
        let b = RunConfig::parse(&text(&dir)).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Without a source the solution is bounded by the datum.
    #[test]
    fn maximum_principle(amp in -2.0f64..2.0, offset in -1.0f64..1.0, r1 in 0.8f64..3.0, r2 in 0.8f64..3.0) {
        let spec = GridSpec { n_eta: 24, n_phi: 8, n_psi: 4, ..GridSpec::default() };
        let cfg = MilneConfig::new(0.1, 0.25).unwrap().with_grid(spec);
        let prof = CurvatureProfile::Constant { r1, r2 };
        let h = DatumPreset::CosPhiCos2Psi { offset, amp };
        let p = MilneProblem::new(cfg, prof, h).unwrap();
        let sol = solve_inflow(&p).unwrap();
        let bound = offset.abs() + amp.abs();
        prop_assert!(sol.f.max_abs() <= bound * (1.0 + 1e-12) + 1e-14);
    }

    /// Constants are exact solutions for every geometry.
    #[test]
    fn constants_are_preserved(c in -5.0f64..5.0, r1 in 0.8f64..3.0, r2 in 0.8f64..3.0) {
        let spec = GridSpec { n_eta: 24, n_phi: 8, n_psi: 4, ..GridSpec::default() };
        let cfg = MilneConfig::new(0.1, 0.25).unwrap().with_grid(spec);
        let p = MilneProblem::new(cfg, CurvatureProfile::Constant { r1, r2 }, DatumPreset::Constant { value: c }).unwrap();
        let sol = solve_inflow(&p).unwrap();
        prop_assert!(sol.f.values.iter().all(|v| (v - c).abs() <= 1e-9));
        prop_assert!((sol.f_l - c).abs() <= 1e-8);
    }
}
