//! Closed-form geometry of the corrected Milne problem.
//!
//! Radii are stored as curvatures `k = 1/R` so that the flat (classical)
//! profile is the exact value `k = 0` rather than a large radius.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_grid::GridSpec;

/// Principal curvature radii along the boundary as analytic functions of
/// the surface coordinates `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurvatureProfile {
    /// `R1`, `R2` independent of `tau`.
    Constant { r1: f64, r2: f64 },
    /// Infinite radii: the force vanishes identically.
    Flat,
    /// `R1 = r1 (1 + amp1 sin tau1)`, `R2 = r2 (1 + amp2 sin(tau1 + tau2))`.
    Modulated { r1: f64, r2: f64, amp1: f64, amp2: f64 },
}

impl CurvatureProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CurvatureProfile::Constant { r1, r2 } => r1 > 0.0 && r2 > 0.0,
            CurvatureProfile::Flat => true,
            CurvatureProfile::Modulated { r1, r2, amp1, amp2 } => {
                r1 > 0.0 && r2 > 0.0 && amp1.abs() < 1.0 && amp2.abs() < 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("curvature profile {self:?}")))
        }
    }

    pub fn r1(&self, tau: [f64; 2]) -> f64 {
        self.radii(tau).0
    }

    pub fn r2(&self, tau: [f64; 2]) -> f64 {
        self.radii(tau).1
    }

    /// `(R1, R2)` at `tau`; infinite for the flat profile.
    pub fn radii(&self, tau: [f64; 2]) -> (f64, f64) {
        match *self {
            CurvatureProfile::Constant { r1, r2 } => (r1, r2),
            CurvatureProfile::Flat => (f64::INFINITY, f64::INFINITY),
            CurvatureProfile::Modulated { r1, r2, amp1, amp2 } => (
                r1 * (1.0 + amp1 * tau[0].sin()),
                r2 * (1.0 + amp2 * (tau[0] + tau[1]).sin()),
            ),
        }
    }

    /// `(dR1/dtau_i, dR2/dtau_i)`; exactly zero for `tau`-independent profiles.
    pub fn d_radii(&self, tau: [f64; 2], i: usize) -> (f64, f64) {
        match *self {
            CurvatureProfile::Constant { .. } | CurvatureProfile::Flat => (0.0, 0.0),
            CurvatureProfile::Modulated { r1, r2, amp1, amp2 } => {
                let d1 = if i == 0 { r1 * amp1 * tau[0].cos() } else { 0.0 };
                let d2 = r2 * amp2 * (tau[0] + tau[1]).cos();
                (d1, d2)
            }
        }
    }

    /// Lower bound of both radii over all `tau`.
    pub fn r_min(&self) -> f64 {
        match *self {
            CurvatureProfile::Constant { r1, r2 } => r1.min(r2),
            CurvatureProfile::Flat => f64::INFINITY,
            CurvatureProfile::Modulated { r1, r2, amp1, amp2 } => {
                (r1 * (1.0 - amp1.abs())).min(r2 * (1.0 - amp2.abs()))
            }
        }
    }

    pub fn local(&self, epsilon: f64, tau: [f64; 2]) -> LocalGeometry {
        let (r1, r2) = self.radii(tau);
        LocalGeometry::new(epsilon, r1, r2)
    }
}

/// Solver configuration for one Milne problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MilneConfig {
    pub epsilon: f64,
    pub n_exponent: f64,
    pub slab_length: f64,
    pub fixed_point_tol: f64,
    pub max_iterations: usize,
    pub decay_rate_k0: f64,
    /// Accept `n_exponent` outside `(0, 2/5)`.
    pub allow_n_override: bool,
    pub grid: GridSpec,
}

impl MilneConfig {
    pub fn new(epsilon: f64, n_exponent: f64) -> Result<Self> {
        Self::with_override(epsilon, n_exponent, false)
    }

    pub fn with_override(epsilon: f64, n_exponent: f64, allow_n_override: bool) -> Result<Self> {
        let cfg = MilneConfig {
            epsilon,
            n_exponent,
            slab_length: epsilon.powf(-n_exponent),
            fixed_point_tol: 1e-9,
            max_iterations: 5000,
            decay_rate_k0: 0.1,
            allow_n_override,
            grid: GridSpec::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon = {} not in (0,1)", self.epsilon)));
        }
        let n_ok = self.n_exponent > 0.0 && self.n_exponent < 0.4;
        if !n_ok && !(self.allow_n_override && self.n_exponent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "n_exponent = {} not in (0, 2/5)",
                self.n_exponent
            )));
        }
        let expected = self.epsilon.powf(-self.n_exponent);
        if ((self.slab_length - expected) / expected).abs() > 1e-12 {
            return Err(Error::InvalidParameter("slab_length must equal epsilon^-n".into()));
        }
        if !(self.fixed_point_tol > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidParameter("tolerance and iteration cap must be positive".into()));
        }
        self.grid.validate()
    }

    /// Requires `R_i - eps * eta > 0` on the whole slab.
    pub fn check_profile(&self, prof: &CurvatureProfile) -> Result<()> {
        prof.validate()?;
        if self.epsilon * self.slab_length >= prof.r_min() {
            return Err(Error::Domain(format!(
                "epsilon * L = {} must stay below r_min = {}",
                self.epsilon * self.slab_length,
                prof.r_min()
            )));
        }
        Ok(())
    }
}

/// Geometry frozen at one boundary point: `eps` and curvatures `k_i = 1/R_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalGeometry {
    pub eps: f64,
    pub k1: f64,
    pub k2: f64,
}

/// `(sin^2 psi, cos^2 psi)`.
#[inline]
pub fn psi_weights(psi: f64) -> (f64, f64) {
    let s = psi.sin();
    let c = psi.cos();
    (s * s, c * c)
}

impl LocalGeometry {
    pub fn new(eps: f64, r1: f64, r2: f64) -> Self {
        LocalGeometry { eps, k1: 1.0 / r1, k2: 1.0 / r2 }
    }

    pub fn is_flat(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0
    }

    /// Depth at which `eps * eta` reaches the smaller radius.
    pub fn max_depth(&self) -> f64 {
        let k = self.k1.max(self.k2);
        if k > 0.0 {
            1.0 / (self.eps * k)
        } else {
            f64::INFINITY
        }
    }

    /// Depth at which `V(., psi)` blows up for the given angular weights.
    pub fn singular_depth(&self, s2: f64, c2: f64) -> f64 {
        let mut d = f64::INFINITY;
        if s2 > 0.0 && self.k1 > 0.0 {
            d = d.min(1.0 / (self.eps * self.k1));
        }
        if c2 > 0.0 && self.k2 > 0.0 {
            d = d.min(1.0 / (self.eps * self.k2));
        }
        d
    }

    pub fn check_depth(&self, eta: f64) -> Result<()> {
        if eta < 0.0 || !(eta < self.max_depth()) {
            return Err(Error::Domain(format!(
                "eta = {eta} outside [0, {}) where R_i - eps*eta > 0",
                self.max_depth()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn force(&self, eta: f64, s2: f64, c2: f64) -> f64 {
        let e = self.eps;
        -e * (s2 * self.k1 / (1.0 - e * eta * self.k1) + c2 * self.k2 / (1.0 - e * eta * self.k2))
    }

    /// `(F~, G)` with `F = F~ + G cos^2 psi`.
    #[inline]
    pub fn force_split(&self, eta: f64) -> (f64, f64) {
        let e = self.eps;
        let a1 = 1.0 - e * eta * self.k1;
        let a2 = 1.0 - e * eta * self.k2;
        (-e * self.k1 / a1, -e * (self.k2 - self.k1) / (a1 * a2))
    }

    /// `V(eta, psi) >= 0` with `V(0) = 0` and `dV/deta = -F`.
    #[inline]
    pub fn potential(&self, eta: f64, s2: f64, c2: f64) -> f64 {
        let e = self.eps * eta;
        -(s2 * (-e * self.k1).ln_1p() + c2 * (-e * self.k2).ln_1p())
    }

    /// `V(eta_hi) - V(eta_lo)` without cancellation for close depths.
    #[inline]
    pub fn potential_gap(&self, eta_lo: f64, eta_hi: f64, s2: f64, c2: f64) -> f64 {
        let d = eta_hi - eta_lo;
        let e = self.eps;
        let t1 = if self.k1 > 0.0 { (e * self.k1 * d / (1.0 - e * self.k1 * eta_hi)).ln_1p() } else { 0.0 };
        let t2 = if self.k2 > 0.0 { (e * self.k2 * d / (1.0 - e * self.k2 * eta_hi)).ln_1p() } else { 0.0 };
        s2 * t1 + c2 * t2
    }

    #[inline]
    pub fn exp_neg_v(&self, eta: f64, s2: f64, c2: f64) -> f64 {
        (-self.potential(eta, s2, c2)).exp()
    }

    /// `zeta^2 = 1 - (e^-V cos phi)^2`, written to stay accurate near grazing.
    #[inline]
    pub fn zeta_sq(&self, eta: f64, sin_phi: f64, s2: f64, c2: f64) -> f64 {
        let v2 = 2.0 * self.potential(eta, s2, c2);
        (-(-v2).exp_m1() + (-v2).exp() * sin_phi * sin_phi).clamp(0.0, 1.0)
    }

    #[inline]
    pub fn zeta(&self, eta: f64, sin_phi: f64, s2: f64, c2: f64) -> f64 {
        self.zeta_sq(eta, sin_phi, s2, c2).sqrt()
    }
}

fn checked_local(cfg: &MilneConfig, prof: &CurvatureProfile, tau: [f64; 2], eta: f64) -> Result<LocalGeometry> {
    let geo = prof.local(cfg.epsilon, tau);
    geo.check_depth(eta)?;
    Ok(geo)
}

/// `F(eps; eta, psi) = -eps (sin^2 psi / (R1 - eps eta) + cos^2 psi / (R2 - eps eta))`.
pub fn force(cfg: &MilneConfig, prof: &CurvatureProfile, tau: [f64; 2], eta: f64, psi: f64) -> Result<f64> {
    let geo = checked_local(cfg, prof, tau, eta)?;
    let (s2, c2) = psi_weights(psi);
    Ok(geo.force(eta, s2, c2))
}

/// `(F~(eta), G(eta))`.
pub fn force_split(cfg: &MilneConfig, prof: &CurvatureProfile, tau: [f64; 2], eta: f64) -> Result<(f64, f64)> {
    Ok(checked_local(cfg, prof, tau, eta)?.force_split(eta))
}

pub fn potential(cfg: &MilneConfig, prof: &CurvatureProfile, tau: [f64; 2], eta: f64, psi: f64) -> Result<f64> {
    let geo = checked_local(cfg, prof, tau, eta)?;
    let (s2, c2) = psi_weights(psi);
    Ok(geo.potential(eta, s2, c2))
}

pub fn weight_zeta(
    cfg: &MilneConfig,
    prof: &CurvatureProfile,
    tau: [f64; 2],
    eta: f64,
    phi: f64,
    psi: f64,
) -> Result<f64> {
    let geo = checked_local(cfg, prof, tau, eta)?;
    let (s2, c2) = psi_weights(psi);
    Ok(geo.zeta(eta, phi.sin(), s2, c2))
}

fn bump(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth monotone cutoff: 1 on `[0, r_min/4]`, 0 on `[r_min/2, inf)`.
pub fn cutoff_upsilon0(mu: f64, prof: &CurvatureProfile) -> f64 {
    let r = prof.r_min();
    if !r.is_finite() {
        return 1.0;
    }
    let (a, b) = (0.25 * r, 0.5 * r);
    if mu <= a {
        return 1.0;
    }
    if mu >= b {
        return 0.0;
    }
    let x = (mu - a) / (b - a);
    let up = bump(x);
    let down = bump(1.0 - x);
    down / (up + down)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn cfg() -> MilneConfig {
        MilneConfig::new(0.1, 0.25).unwrap()
    }

    const UNIT: CurvatureProfile = CurvatureProfile::Constant { r1: 1.0, r2: 1.0 };
    const OBLATE: CurvatureProfile = CurvatureProfile::Constant { r1: 2.0, r2: 1.0 };

    #[test]
    fn force_values() {
        let c = cfg();
        assert_relative_eq!(force(&c, &UNIT, [0.0; 2], 0.0, 0.3).unwrap(), -0.1, epsilon = 1e-15);
        assert_relative_eq!(force(&c, &OBLATE, [0.0; 2], 0.0, PI / 2.0).unwrap(), -0.05, epsilon = 1e-15);
        let v = force(&c, &OBLATE, [0.0; 2], 1.0, PI / 4.0).unwrap();
        assert_relative_eq!(v, -0.5 * (0.1 / 1.9) - 0.5 * (0.1 / 0.9), epsilon = 1e-14);
        assert!((v + 0.081871).abs() < 1e-6);
    }

    #[test]
    fn force_rejects_singular_depth() {
        let c = cfg();
        assert!(matches!(force(&c, &UNIT, [0.0; 2], 10.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn split_values() {
        let c = cfg();
        let (ft, g) = force_split(&c, &OBLATE, [0.0; 2], 0.0).unwrap();
        assert_relative_eq!(ft, -0.05, epsilon = 1e-15);
        assert_relative_eq!(g, -0.05, epsilon = 1e-15);
        let (_, g_eq) = force_split(&c, &UNIT, [0.0; 2], 0.7).unwrap();
        assert_eq!(g_eq, 0.0);
        let f0 = force(&c, &OBLATE, [0.0; 2], 0.4, 0.0).unwrap();
        let (ft, g) = force_split(&c, &OBLATE, [0.0; 2], 0.4).unwrap();
        assert_relative_eq!(ft + g, f0, max_relative = 1e-14);
    }

    #[test]
    fn potential_values() {
        let c = cfg();
        assert_eq!(potential(&c, &OBLATE, [0.0; 2], 0.0, 1.0).unwrap(), 0.0);
        let v = potential(&c, &UNIT, [0.0; 2], 1.0, 0.2).unwrap();
        assert_relative_eq!(v, (1.0f64 / 0.9).ln(), max_relative = 1e-14);
        assert!((v - 0.105361).abs() < 1e-6);
        let v = potential(&c, &OBLATE, [0.0; 2], 1.0, PI / 2.0).unwrap();
        assert_relative_eq!(v, (2.0f64 / 1.9).ln(), max_relative = 1e-12);
        assert!((v - 0.051293).abs() < 1e-6);
    }

    #[test]
    fn potential_gap_matches_difference() {
        let g = OBLATE.local(0.1, [0.0; 2]);
        let (s2, c2) = psi_weights(0.7);
        let d = g.potential_gap(0.3, 1.1, s2, c2);
        assert_relative_eq!(d, g.potential(1.1, s2, c2) - g.potential(0.3, s2, c2), max_relative = 1e-12);
    }

    #[test]
    fn zeta_values() {
        let c = cfg();
        assert_relative_eq!(weight_zeta(&c, &UNIT, [0.0; 2], 0.0, PI / 6.0, 0.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(weight_zeta(&c, &UNIT, [0.0; 2], 0.0, 0.0, 0.0).unwrap(), 0.0);
        let z = weight_zeta(&c, &UNIT, [0.0; 2], 1.0, 0.0, 0.4).unwrap();
        assert_relative_eq!(z, 0.19f64.sqrt(), max_relative = 1e-12);
        assert!((z - 0.435890).abs() < 1e-6);
    }

    #[test]
    fn cutoff_regions() {
        let p = UNIT;
        assert_eq!(cutoff_upsilon0(1.0 / 8.0, &p), 1.0);
        assert_eq!(cutoff_upsilon0(1.0, &p), 0.0);
        let m = cutoff_upsilon0(3.0 / 8.0, &p);
        assert!(m > 0.0 && m < 1.0);
        let h = 1e-6;
        let left = cutoff_upsilon0(3.0 / 8.0 - h, &p);
        let right = cutoff_upsilon0(3.0 / 8.0 + h, &p);
        assert!((left - right).abs() < 1e-4);
        let d_left = (m - left) / h;
        let d_right = (right - m) / h;
        assert!((d_left - d_right).abs() < 1e-3);
        let mut prev = 1.0;
        for k in 0..=400 {
            let v = cutoff_upsilon0(k as f64 / 400.0, &p);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn flat_profile_has_no_force() {
        let g = CurvatureProfile::Flat.local(0.1, [0.0; 2]);
        assert_eq!(g.force(3.0, 0.5, 0.5), 0.0);
        assert_eq!(g.potential(3.0, 0.5, 0.5), 0.0);
        assert_eq!(g.max_depth(), f64::INFINITY);
    }

    #[test]
    fn modulated_derivatives_match_differences() {
        let p = CurvatureProfile::Modulated { r1: 1.5, r2: 2.0, amp1: 0.2, amp2: 0.3 };
        let tau = [0.4, -0.3];
        let h = 1e-6;
        for i in 0..2 {
            let mut tp = tau;
            let mut tm = tau;
            tp[i] += h;
            tm[i] -= h;
            let (d1, d2) = p.d_radii(tau, i);
            assert_relative_eq!((p.r1(tp) - p.r1(tm)) / (2.0 * h), d1, epsilon = 1e-8);
            assert_relative_eq!((p.r2(tp) - p.r2(tm)) / (2.0 * h), d2, epsilon = 1e-8);
        }
        assert_eq!(UNIT.d_radii(tau, 0), (0.0, 0.0));
        assert!(p.r_min() <= p.r1(tau).min(p.r2(tau)));
    }

    #[test]
    fn config_rejects_bad_exponent() {
        assert!(MilneConfig::new(0.1, 0.45).is_err());
        assert!(MilneConfig::with_override(0.1, 0.45, true).is_ok());
        let c = cfg();
        assert!(((c.slab_length - 0.1f64.powf(-0.25)) / c.slab_length).abs() < 1e-12);
    }
}
