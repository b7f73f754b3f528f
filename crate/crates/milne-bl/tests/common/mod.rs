//! Deterministic reference for the unit-ball transport problem with `g = cos(theta)`.
//!
//! The datum lies in the first zonal harmonic, so the solution keeps that
//! symmetry: `ubar(z) = U(|z|) z1 / |z|` and `P[u](y) = p y1` on the sphere.
//! Along a ray from `r e1` with `w . e1 = mu`, both `z1` and `|z|` depend on
//! `mu` only, so the azimuth integrates out and the mild formulation closes
//! on the radial profile `U` and the scalar `p`:
//!
//! `U(r) = (1/2) int_{-1}^{1} [int_0^{t_b} e^{-s} ubar(r e1 - eps s w) ds + e^{-t_b} (p + eps) y1] dmu`,
//! `p    = 2 int_0^1 mu [same bracket started at y = e1] dmu`.
//!
//! `U` is piecewise linear on a uniform radial grid with `U(0) = 0`; the
//! collocation system is dense and solved by LU.

#![allow(dead_code)]

use milne_bl::quadrature::gauss_legendre;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct BallOracle {
    pub eps: f64,
    /// Nodes `r_k = k / K`, `k = 0..=K`.
    pub r: Vec<f64>,
    /// `U(r_k)`, with `U(0) = 0`.
    pub u: Vec<f64>,
    /// `P[u](y) = p y1`.
    pub p: f64,
}

/// Angular and ray resolution of the collocation.
#[derive(Debug, Clone, Copy)]
pub struct Resolution {
    pub radial: usize,
    pub mu_nodes: usize,
    pub ray_pieces: usize,
    pub ray_nodes: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution { radial: 400, mu_nodes: 48, ray_pieces: 48, ray_nodes: 6 }
    }
}

struct Rules {
    mu_x: Vec<f64>,
    mu_w: Vec<f64>,
    s_x: Vec<f64>,
    s_w: Vec<f64>,
    pieces: usize,
}

/// Row of the linear system: coefficients on `(U_1..U_K, p)` and a constant.
struct Row {
    a: Vec<f64>,
    b: f64,
}

impl BallOracle {
    pub fn solve(eps: f64, res: Resolution) -> Self {
        let k = res.radial;
        let r: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
        let (mu_x, mu_w) = gauss_legendre(res.mu_nodes);
        let (s_x, s_w) = gauss_legendre(res.ray_nodes);
        let rules = Rules { mu_x, mu_w, s_x, s_w, pieces: res.ray_pieces };
        let n = k + 1;
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for i in 1..=k {
            let row = interior_row(eps, r[i], k, &rules);
            for (c, v) in row.a.iter().enumerate() {
                m[(i - 1, c)] -= v;
            }
            m[(i - 1, i - 1)] += 1.0;
            rhs[i - 1] = row.b;
        }
        let row = boundary_row(eps, k, &rules);
        for (c, v) in row.a.iter().enumerate() {
            m[(k, c)] -= v;
        }
        m[(k, k)] += 1.0;
        rhs[k] = row.b;
        let x = m.lu().solve(&rhs).expect("collocation system is nonsingular");
        let mut u = vec![0.0];
        u.extend(x.iter().take(k));
        BallOracle { eps, r, u, p: x[k] }
    }

    /// `ubar(x)` for `|x| <= 1`.
    pub fn value(&self, x: [f64; 3]) -> f64 {
        let rho = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if rho == 0.0 {
            return 0.0;
        }
        self.radial(rho) * x[0] / rho
    }

    pub fn radial(&self, rho: f64) -> f64 {
        let k = self.r.len() - 1;
        let t = (rho * k as f64).clamp(0.0, k as f64);
        let lo = (t.floor() as usize).min(k - 1);
        let f = t - lo as f64;
        self.u[lo] * (1.0 - f) + self.u[lo + 1] * f
    }
}

/// Adds `weight * U(rho) z1 / rho` to the coefficients by linear interpolation.
fn scatter(a: &mut [f64], k: usize, rho: f64, z1: f64, weight: f64) {
    if rho <= 1e-300 {
        return;
    }
    let c = weight * z1 / rho;
    let t = (rho * k as f64).clamp(0.0, k as f64);
    let lo = (t.floor() as usize).min(k - 1);
    let f = t - lo as f64;
    // Column j holds U_{j+1}; U_0 = 0 carries no unknown.
    if lo >= 1 {
        a[lo - 1] += c * (1.0 - f);
    }
    a[lo] += c * f;
}

/// Ray from `(x1, 0, 0)` with `w . e1 = mu` out to the sphere: accumulates
/// `weight * [int e^{-s} ubar ds + e^{-t_b} (p + eps) y1]`.
fn ray(eps: f64, x1: f64, mu: f64, weight: f64, k: usize, rules: &Rules, row: &mut Row) {
    let disc = (x1 * x1 * mu * mu - x1 * x1 + 1.0).max(0.0).sqrt();
    let tb = (x1 * mu + disc) / eps;
    let y1 = x1 - eps * tb * mu;
    let att = (-tb).exp();
    row.a[k] += weight * att * y1;
    row.b += weight * att * eps * y1;
    if tb <= 0.0 {
        return;
    }
    // Pieces uniform in 1 - e^{-s}, so each carries equal attenuated mass.
    let total = 1.0 - att;
    let q = rules.pieces;
    for piece in 0..q {
        let u0 = total * piece as f64 / q as f64;
        let u1 = total * (piece + 1) as f64 / q as f64;
        let (c, h) = (0.5 * (u0 + u1), 0.5 * (u1 - u0));
        for (xi, wi) in rules.s_x.iter().zip(&rules.s_w) {
            // v = 1 - e^{-s}: e^{-s} ds = dv.
            let v = c + h * xi;
            let s = -(-v).ln_1p();
            let z1 = x1 - eps * s * mu;
            let rho2 = x1 * x1 - 2.0 * x1 * eps * s * mu + eps * eps * s * s;
            scatter(&mut row.a, k, rho2.max(0.0).sqrt(), z1, weight * wi * h);
        }
    }
}

fn interior_row(eps: f64, x1: f64, k: usize, rules: &Rules) -> Row {
    let mut row = Row { a: vec![0.0; k + 1], b: 0.0 };
    // Split at mu = 0: at x1 = 1 the exit time has a kink there.
    for (lo, hi) in [(-1.0, 0.0), (0.0, 1.0)] {
        let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (xi, wi) in rules.mu_x.iter().zip(&rules.mu_w) {
            ray(eps, x1, c + h * xi, 0.5 * wi * h, k, rules, &mut row);
        }
    }
    row
}

fn boundary_row(eps: f64, k: usize, rules: &Rules) -> Row {
    let mut row = Row { a: vec![0.0; k + 1], b: 0.0 };
    for (xi, wi) in rules.mu_x.iter().zip(&rules.mu_w) {
        let mu = 0.5 * (xi + 1.0);
        ray(eps, 1.0, mu, 2.0 * mu * 0.5 * wi, k, rules, &mut row);
    }
    row
}
