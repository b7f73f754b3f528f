//! Functionals of Milne solutions and the verification probes built on them.
//!
//! All angular moments use the grid quadrature with the `cos(phi)` Jacobian and
//! no `1/4pi` normalization, matching `<f, g>(eta) = int int f g cos(phi) dphi dpsi`.

use serde::Serialize;

use crate::geometry::psi_weights;
use crate::milne_solver::MilneSolution;
use crate::phase_grid::{diff_nonuniform, norms, Field, PhaseGrid};
use crate::presets::SourcePoint;

/// `alpha(eta_i) = 1/2 <f, f sin(phi)>`.
pub fn alpha(sol: &MilneSolution, eta_index: usize) -> f64 {
    let f = &sol.f;
    let s = &f.grid.sin_phi;
    0.5 * f.moment_at(eta_index, |j, l| f.get(eta_index, j, l) * s[j])
}

/// `beta(eta_i) = <sin^2(phi), f>`.
pub fn beta(sol: &MilneSolution, eta_index: usize) -> f64 {
    let s = &sol.f.grid.sin_phi;
    sol.f.moment_at(eta_index, |j, _| s[j] * s[j])
}

/// `<sin(phi), f>(eta_i)`.
pub fn flux(sol: &MilneSolution, eta_index: usize) -> f64 {
    let s = &sol.f.grid.sin_phi;
    sol.f.moment_at(eta_index, |j, _| s[j])
}

/// `<S, 1>(eta_i)` of the problem's source on the grid nodes.
fn source_mean(sol: &MilneSolution, i: usize) -> f64 {
    let src = &*sol.problem.source;
    if src.is_zero() {
        return 0.0;
    }
    let g = sol.grid();
    let mut s = 0.0;
    for j in 0..g.n_phi() {
        for l in 0..g.n_psi() {
            let p = SourcePoint {
                eta: g.eta[i],
                lo: i,
                frac: 0.0,
                sin_phi: g.sin_phi[j],
                cos_phi: g.cos_phi[j],
                psi: g.psi[l],
                l,
            };
            s += g.w_phi[j] * g.w_psi[l] * src.value(&p);
        }
    }
    s
}

/// `<S, f>(eta_i)`.
fn source_inner(sol: &MilneSolution, i: usize) -> f64 {
    let src = &*sol.problem.source;
    if src.is_zero() {
        return 0.0;
    }
    let g = sol.grid();
    let mut s = 0.0;
    for j in 0..g.n_phi() {
        for l in 0..g.n_psi() {
            let p = SourcePoint {
                eta: g.eta[i],
                lo: i,
                frac: 0.0,
                sin_phi: g.sin_phi[j],
                cos_phi: g.cos_phi[j],
                psi: g.psi[l],
                l,
            };
            s += g.w_phi[j] * g.w_psi[l] * src.value(&p) * sol.f.get(i, j, l);
        }
    }
    s
}

/// `Ftilde = -eps k1 / (1 - eps eta k1)` and
/// `G = -eps (k2 - k1) / ((1 - eps eta k1)(1 - eps eta k2))`, so that `F = Ftilde + G cos^2(psi)`.
fn split(sol: &MilneSolution, eta: f64) -> (f64, f64) {
    sol.problem.geometry().force_split(eta)
}

/// `<sin(phi), f>(eta)` minus its flux-balance representation, at every depth.
///
/// Integrating the equation against one gives
/// `d/deta <sin phi, f> = -2 Ftilde <sin phi, f> - 2 G <sin phi cos^2 psi, f> + <S, 1>`.
/// With `Vtilde' = -Ftilde` and `<sin phi, f>(L) = 0`,
/// `<sin phi, f>(eta) = int_eta^L e^{2 Vtilde(eta) - 2 Vtilde(y)} (2 G <sin phi cos^2 psi, f> - <S, 1>)(y) dy`.
/// When `R1 = R2` the right side vanishes without a source.
pub fn quasi_orthogonality_residual(sol: &MilneSolution) -> Vec<f64> {
    let g = sol.grid();
    let n = g.n_eta();
    let geo = sol.problem.geometry();
    let s = &g.sin_phi;
    let psi = &g.psi;
    // Ftilde is the psi = 0 force.
    let vt = |eta: f64| geo.potential(eta, 1.0, 0.0);
    let integrand: Vec<f64> = (0..n)
        .map(|i| {
            let (_, gg) = split(sol, g.eta[i]);
            let q = sol.f.moment_at(i, |j, l| s[j] * psi_weights(psi[l]).1);
            2.0 * gg * q - source_mean(sol, i)
        })
        .collect();
    let mut out = vec![0.0; n];
    // Trapezoid on each cell of e^{-2 Vtilde(y)} times the integrand, scaled at the end.
    let weighted: Vec<f64> = (0..n).map(|i| (-2.0 * vt(g.eta[i])).exp() * integrand[i]).collect();
    let mut tail = 0.0;
    for i in (0..n).rev() {
        if i + 1 < n {
            tail += 0.5 * (g.eta[i + 1] - g.eta[i]) * (weighted[i] + weighted[i + 1]);
        }
        let rhs = (2.0 * vt(g.eta[i])).exp() * tail;
        out[i] = flux(sol, i) - rhs;
    }
    out
}

/// L2 norm over depth of the energy identity
/// `1/2 d/deta <f, f sin phi> = -||f - fbar||^2 - Ftilde <f, f sin phi> - G <f cos^2 psi, f sin phi> + <S, f>`,
/// with the depth derivative taken by second-order differences on the grid.
pub fn energy_identity_residual(sol: &MilneSolution) -> f64 {
    let g = sol.grid();
    let n = g.n_eta();
    let f = &sol.f;
    let s = &g.sin_phi;
    let psi = &g.psi;
    let two_alpha: Vec<f64> = (0..n).map(|i| 2.0 * alpha(sol, i)).collect();
    let d = diff_nonuniform(&g.eta, &two_alpha);
    let mut acc = 0.0;
    for i in 0..n {
        let (ft, gg) = split(sol, g.eta[i]);
        let fb = sol.fbar[i];
        let r2 = micro_norm_sq(f, i, fb);
        let ff = two_alpha[i];
        let fc = f.moment_at(i, |j, l| f.get(i, j, l) * s[j] * psi_weights(psi[l]).1);
        let rhs = -r2 - ft * ff - gg * fc + source_inner(sol, i);
        let res = 0.5 * d[i] - rhs;
        acc += g.w_eta[i] * res * res;
    }
    acc.sqrt()
}

/// `||f - c||^2` at depth `i`.
fn micro_norm_sq(f: &Field, i: usize, c: f64) -> f64 {
    let g = &*f.grid;
    let mut s = 0.0;
    for j in 0..g.n_phi() {
        let mut row = 0.0;
        for l in 0..g.n_psi() {
            let v = f.get(i, j, l) - c;
            row += g.w_psi[l] * v * v;
        }
        s += g.w_phi[j] * row;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// Fitted rate of `ln ||f - f_L||_inf(eta)` per unit depth.
    pub k0_fitted: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    /// `sup_window e^{K0 eta} ||f - f_L||_inf(eta)` for the supplied `K0`.
    pub sup_weighted: f64,
    /// False when `r_squared < 0.9` or the fit is degenerate.
    pub valid: bool,
    /// `f - f_L` below `1e-12` everywhere.
    pub degenerate: bool,
}

pub const DECAY_WINDOW: (f64, f64) = (0.2, 0.8);
const DEGENERATE_LEVEL: f64 = 1e-12;

/// Log-linear fit of `||f - f_L||_inf(eta)` over `[0.2 L, 0.8 L]`.
pub fn decay_fit(sol: &MilneSolution, k0: f64) -> DecayFit {
    decay_fit_window(sol, k0, DECAY_WINDOW)
}

/// As [`decay_fit`] with the window given as fractions of `L`; the window is
/// clamped to `[0.1 L, 0.9 L]`.
pub fn decay_fit_window(sol: &MilneSolution, k0: f64, window: (f64, f64)) -> DecayFit {
    let g = sol.grid();
    let l = g.slab_length;
    let lo = window.0.max(0.1) * l;
    let hi = window.1.min(0.9) * l;
    let dev = norms(&sol.deviation()).linf_at;
    let degenerate = dev.iter().all(|&v| v < DEGENERATE_LEVEL);
    let mut pts = Vec::new();
    let mut sup_weighted: f64 = 0.0;
    for (i, &eta) in g.eta.iter().enumerate() {
        if eta < lo || eta > hi {
            continue;
        }
        sup_weighted = sup_weighted.max((k0 * eta).exp() * dev[i]);
        if dev[i] > 0.0 {
            pts.push((eta, dev[i].ln()));
        }
    }
    let (slope, r2) = linear_fit(&pts);
    let k0_fitted = -slope;
    let valid = !degenerate && k0_fitted.is_finite() && r2 >= 0.9;
    DecayFit { k0_fitted, window: (lo, hi), r_squared: r2, sup_weighted, valid, degenerate }
}

/// Least-squares slope and coefficient of determination.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, 0.0);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return (f64::NAN, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeNorms {
    pub sup_zeta_deta: f64,
    pub sup_zeta_dphi: f64,
    pub sup_dpsi: f64,
    /// `sup e^{K0 eta} |d v / d tau_i|` when tangent solutions are supplied.
    pub sup_dtau: Option<[f64; 2]>,
    /// Unweighted `sup |d_phi f|` over the grazing band.
    pub sup_dphi_grazing: f64,
    pub k0: f64,
}

/// Depth band `eta <= GRAZING_DEPTH` and polar band `|sin phi| <= GRAZING_SIN`.
pub const GRAZING_DEPTH: f64 = 0.1;
pub const GRAZING_SIN: f64 = 0.25;

/// `sup e^{K0 eta} zeta |d v|` for `v = f - f_L`, with grid differentiation.
pub fn weighted_derivative_norms(sol: &MilneSolution, k0: f64, tangents: Option<[&MilneSolution; 2]>) -> DerivativeNorms {
    let g = sol.grid();
    let geo = sol.problem.geometry();
    let v = sol.deviation();
    let de = v.d_eta();
    let dp = v.d_phi();
    let ds = v.d_psi();
    let mut out = DerivativeNorms {
        sup_zeta_deta: 0.0,
        sup_zeta_dphi: 0.0,
        sup_dpsi: 0.0,
        sup_dtau: None,
        sup_dphi_grazing: 0.0,
        k0,
    };
    for i in 0..g.n_eta() {
        let eta = g.eta[i];
        let w = (k0 * eta).exp();
        for l in 0..g.n_psi() {
            let (s2, c2) = psi_weights(g.psi[l]);
            for j in 0..g.n_phi() {
                let z = geo.zeta(eta, g.sin_phi[j], s2, c2);
                out.sup_zeta_deta = out.sup_zeta_deta.max(w * z * de.get(i, j, l).abs());
                out.sup_zeta_dphi = out.sup_zeta_dphi.max(w * z * dp.get(i, j, l).abs());
                out.sup_dpsi = out.sup_dpsi.max(w * ds.get(i, j, l).abs());
                if eta <= GRAZING_DEPTH && g.sin_phi[j].abs() <= GRAZING_SIN {
                    out.sup_dphi_grazing = out.sup_dphi_grazing.max(dp.get(i, j, l).abs());
                }
            }
        }
    }
    if let Some(ts) = tangents {
        let mut sup = [0.0f64; 2];
        for (k, t) in ts.iter().enumerate() {
            sup[k] = weighted_sup(&t.f, g, k0);
        }
        out.sup_dtau = Some(sup);
    }
    out
}

fn weighted_sup(f: &Field, g: &PhaseGrid, k0: f64) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..g.n_eta() {
        let w = (k0 * g.eta[i]).exp();
        for v in f.slice_at(i) {
            m = m.max(w * v.abs());
        }
    }
    m
}

/// `|ln eps|^8`, reported next to derivative norms for context.
pub fn lnnorm_context(eps: f64) -> f64 {
    eps.ln().abs().powi(8)
}

/// Per-depth table of the functionals.
#[derive(Debug, Clone, Serialize)]
pub struct DepthTable {
    pub eta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub qo_residual: Vec<f64>,
    pub linf_dev: Vec<f64>,
}

pub fn depth_table(sol: &MilneSolution) -> DepthTable {
    let g = sol.grid();
    let n = g.n_eta();
    DepthTable {
        eta: g.eta.clone(),
        alpha: (0..n).map(|i| alpha(sol, i)).collect(),
        beta: (0..n).map(|i| beta(sol, i)).collect(),
        qo_residual: quasi_orthogonality_residual(sol),
        linf_dev: norms(&sol.deviation()).linf_at,
    }
}
