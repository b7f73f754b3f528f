//! Characteristics of `sin(phi) d/deta + F cos(phi) d/dphi` at fixed `(tau, psi)`.
//!
//! Along a characteristic the energy `E = e^{-V(eta, psi)} cos(phi)` is constant,
//! so the polar angle at any reachable depth is `arccos(e^{V} E)`. A path that
//! enters at `eta = 0` either turns at `eta_plus` where `e^{-V} = E` or reaches
//! `L` and is reflected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{psi_weights, CurvatureProfile, LocalGeometry, MilneConfig};
use crate::quadrature::Rule;

const ACOS_SLACK: f64 = 1e-14;
const BISECTION_STEPS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// `sin(phi) > 0`: the path starts at `eta = 0`.
    I,
    /// `sin(phi) < 0`, reflected at `L`.
    II,
    /// `sin(phi) < 0`, turned at `eta_plus < L`.
    III,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharPoint {
    pub eta: f64,
    pub phi: f64,
    pub psi: f64,
    pub energy: f64,
    pub region: Region,
    /// Turning depth in region III, `+inf` otherwise.
    pub eta_plus: f64,
}

/// Geometry of the characteristic flow at one boundary point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharContext {
    pub geo: LocalGeometry,
    pub slab_length: f64,
}

impl CharContext {
    pub fn new(cfg: &MilneConfig, prof: &CurvatureProfile, tau: [f64; 2]) -> Self {
        CharContext { geo: prof.local(cfg.epsilon, tau), slab_length: cfg.slab_length }
    }

    pub fn from_geometry(geo: LocalGeometry, slab_length: f64) -> Self {
        CharContext { geo, slab_length }
    }

    #[inline]
    pub fn energy(&self, eta: f64, phi: f64, psi: f64) -> f64 {
        let (s2, c2) = psi_weights(psi);
        self.geo.exp_neg_v(eta, s2, c2) * phi.cos()
    }

    /// `e^{-V(L, psi)}`: the region II/III threshold.
    pub fn threshold(&self, psi: f64) -> f64 {
        let (s2, c2) = psi_weights(psi);
        self.geo.exp_neg_v(self.slab_length, s2, c2)
    }

    pub fn point(&self, eta: f64, phi: f64, psi: f64) -> Result<CharPoint> {
        self.geo.check_depth(eta)?;
        if eta > self.slab_length * (1.0 + 1e-14) {
            return Err(Error::Domain(format!("eta = {eta} beyond L = {}", self.slab_length)));
        }
        let energy = self.energy(eta, phi, psi);
        let (region, eta_plus) = if phi > 0.0 {
            (Region::I, f64::INFINITY)
        } else if energy <= self.threshold(psi) {
            (Region::II, f64::INFINITY)
        } else {
            (Region::III, self.eta_plus(energy, psi)?)
        };
        Ok(CharPoint { eta, phi, psi, energy, region, eta_plus })
    }

    /// `arccos(e^{V(eta', psi)} E)`, in `[0, pi/2]`.
    pub fn phi_prime(&self, energy: f64, eta_target: f64, psi: f64) -> Result<f64> {
        let (s2, c2) = psi_weights(psi);
        let arg = energy * self.geo.potential(eta_target, s2, c2).exp();
        if arg.abs() > 1.0 + ACOS_SLACK {
            return Err(Error::OutOfReach { energy, eta: eta_target });
        }
        Ok(arg.clamp(-1.0, 1.0).acos())
    }

    /// Depth in `[0, L]` where `e^{-V} = |E|`.
    pub fn eta_plus(&self, energy: f64, psi: f64) -> Result<f64> {
        let e = energy.abs();
        let threshold = self.threshold(psi);
        if e < threshold {
            return Err(Error::NoTurning { energy: e, threshold });
        }
        if e >= 1.0 {
            return Ok(0.0);
        }
        if e == threshold {
            return Ok(self.slab_length);
        }
        let (s2, c2) = psi_weights(psi);
        Ok(bisect_turning(&self.geo, e, s2, c2, 0.0, self.slab_length))
    }

    /// Optical length `G = int_{lo}^{hi} dxi / sin(phi'(xi))` of the path with energy `E`.
    pub fn g_integral(&self, energy: f64, psi: f64, eta_lo: f64, eta_hi: f64) -> Result<f64> {
        if eta_lo > eta_hi {
            return Err(Error::InvalidParameter("eta_lo > eta_hi".into()));
        }
        let (s2, c2) = psi_weights(psi);
        let path = PathGeometry::new(&self.geo, energy.abs(), s2, c2);
        let reach = path.reach();
        if eta_hi > reach * (1.0 + 1e-13) + 1e-15 {
            return Err(Error::OutOfReach { energy, eta: eta_hi });
        }
        if eta_lo == eta_hi {
            return Ok(0.0);
        }
        let rule = Rule::new(12);
        let pieces = 32;
        Ok(path.optical_length_composite(&rule, eta_lo, eta_hi.min(reach), pieces))
    }

    /// Move along the characteristic branch of `pt` to depth `eta + delta_eta`.
    pub fn trace(&self, pt: &CharPoint, delta_eta: f64) -> Result<CharPoint> {
        if delta_eta == 0.0 {
            return Ok(*pt);
        }
        let eta = pt.eta + delta_eta;
        if eta < 0.0 {
            return Err(Error::Domain(format!("trace leaves the slab at eta = {eta}")));
        }
        let a = self.phi_prime(pt.energy, eta, pt.psi)?;
        let phi = if pt.phi >= 0.0 { a } else { -a };
        let mut out = self.point(eta, phi, pt.psi)?;
        // Keep the conserved value rather than its recomputation.
        out.energy = pt.energy;
        Ok(out)
    }

    pub fn zeta(&self, pt: &CharPoint) -> f64 {
        let (s2, c2) = psi_weights(pt.psi);
        self.geo.zeta(pt.eta, pt.phi.sin(), s2, c2)
    }
}

/// Bisection on the strictly decreasing map `eta -> e^{-V(eta)}` over `[lo, hi]`.
pub fn bisect_turning(geo: &LocalGeometry, e: f64, s2: f64, c2: f64, lo: f64, hi: f64) -> f64 {
    let target = -e.ln();
    let (mut a, mut b) = (lo, hi);
    for _ in 0..BISECTION_STEPS {
        let m = 0.5 * (a + b);
        if geo.potential(m, s2, c2) < target {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// One characteristic family `(E, psi)`, with its turning depth if the force
/// can stop it before the geometry becomes singular.
#[derive(Debug, Clone, Copy)]
pub struct PathGeometry {
    pub geo: LocalGeometry,
    pub energy: f64,
    pub s2: f64,
    pub c2: f64,
    /// Real or virtual (beyond `L`) turning depth; `inf` if none.
    pub turning: f64,
}

impl PathGeometry {
    pub fn new(geo: &LocalGeometry, energy: f64, s2: f64, c2: f64) -> Self {
        let sing = geo.singular_depth(s2, c2);
        let turning = if energy >= 1.0 {
            0.0
        } else if energy <= 0.0 || !sing.is_finite() {
            f64::INFINITY
        } else {
            bisect_turning(geo, energy, s2, c2, 0.0, sing * (1.0 - 1e-15))
        };
        PathGeometry { geo: *geo, energy, s2, c2, turning }
    }

    /// Deepest point the path reaches.
    pub fn reach(&self) -> f64 {
        self.turning
    }

    /// `sin(phi')` at depth `xi`, accurate near the turning depth.
    #[inline]
    pub fn sin_at(&self, xi: f64) -> f64 {
        if self.turning.is_finite() {
            let d = self.geo.potential_gap(xi.min(self.turning), self.turning, self.s2, self.c2);
            (-(-2.0 * d).exp_m1()).max(0.0).sqrt()
        } else {
            let c = self.energy * self.geo.potential(xi, self.s2, self.c2).exp();
            (1.0 - c * c).max(0.0).sqrt()
        }
    }

    /// `cos(phi')` at depth `xi`.
    #[inline]
    pub fn cos_at(&self, xi: f64) -> f64 {
        (self.energy * self.geo.potential(xi, self.s2, self.c2).exp()).min(1.0)
    }

    /// Optical length of one cell with a fixed rule; uses `u = sqrt(turning - xi)`
    /// whenever a turning depth exists so the inverse-square-root endpoint
    /// singularity becomes a smooth integrand.
    #[inline]
    pub fn optical_length(&self, rule: &Rule, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        if self.turning.is_finite() {
            let t = self.turning;
            let ua = (t - a).max(0.0).sqrt();
            let ub = (t - b).max(0.0).sqrt();
            rule.integrate(ub, ua, |u| {
                let xi = t - u * u;
                let d = self.geo.potential_gap(xi, t, self.s2, self.c2);
                let s2 = -(-2.0 * d).exp_m1();
                if s2 > 0.0 {
                    2.0 * u / s2.sqrt()
                } else {
                    // u -> 0 limit: 2u / sqrt(2 V'(t) u^2).
                    let vp = -self.geo.force(t, self.s2, self.c2);
                    2.0 / (2.0 * vp).sqrt()
                }
            })
        } else {
            let s = self.sin_at(0.5 * (a + b));
            if self.energy <= 0.0 || self.geo.is_flat() {
                (b - a) / s
            } else {
                rule.integrate(a, b, |xi| 1.0 / self.sin_at(xi))
            }
        }
    }

    pub fn optical_length_composite(&self, rule: &Rule, a: f64, b: f64, pieces: usize) -> f64 {
        if self.turning.is_finite() {
            // Uniform pieces in u keep the refinement where the integrand varies.
            let t = self.turning;
            let ua = (t - a).max(0.0).sqrt();
            let ub = (t - b).max(0.0).sqrt();
            let mut s = 0.0;
            for k in 0..pieces {
                let u0 = ub + (ua - ub) * k as f64 / pieces as f64;
                let u1 = ub + (ua - ub) * (k + 1) as f64 / pieces as f64;
                s += self.optical_length(rule, t - u1 * u1, t - u0 * u0);
            }
            s
        } else {
            let h = (b - a) / pieces as f64;
            (0..pieces).map(|k| self.optical_length(rule, a + k as f64 * h, a + (k + 1) as f64 * h)).sum()
        }
    }
}

pub fn energy(ctx: &CharContext, pt: &CharPoint) -> f64 {
    ctx.energy(pt.eta, pt.phi, pt.psi)
}

pub fn phi_prime(ctx: &CharContext, energy: f64, eta_target: f64, psi: f64) -> Result<f64> {
    ctx.phi_prime(energy, eta_target, psi)
}

pub fn eta_plus(ctx: &CharContext, energy: f64, psi: f64) -> Result<f64> {
    ctx.eta_plus(energy, psi)
}

pub fn g_integral(ctx: &CharContext, energy: f64, psi: f64, eta_lo: f64, eta_hi: f64) -> Result<f64> {
    ctx.g_integral(energy, psi, eta_lo, eta_hi)
}

pub fn trace(ctx: &CharContext, pt: &CharPoint, delta_eta: f64) -> Result<CharPoint> {
    ctx.trace(pt, delta_eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn ctx() -> CharContext {
        let cfg = MilneConfig::with_override(0.1, 0.25, false).unwrap();
        CharContext::new(&cfg, &CurvatureProfile::Constant { r1: 1.0, r2: 1.0 }, [0.0; 2])
    }

    fn long_ctx() -> CharContext {
        let geo = LocalGeometry::new(0.1, 1.0, 1.0);
        CharContext::from_geometry(geo, 5.0)
    }

    #[test]
    fn energy_examples() {
        let c = ctx();
        assert_relative_eq!(c.energy(0.0, 0.3, 0.2), 0.3f64.cos(), epsilon = 1e-15);
        assert!(c.energy(0.4, PI / 2.0, 0.0).abs() < 1e-16);
        assert_relative_eq!(c.energy(1.0, 0.0, 0.5), 0.9, epsilon = 1e-14);
    }

    #[test]
    fn phi_prime_examples() {
        let c = ctx();
        assert_relative_eq!(c.phi_prime(0.855, 0.0, 0.0).unwrap(), 0.855f64.acos(), epsilon = 1e-14);
        assert!((c.phi_prime(0.855, 0.0, 0.0).unwrap() - 0.545_245_487_2).abs() < 1e-10);
        assert_relative_eq!(c.phi_prime(0.0, 1.3, 0.0).unwrap(), PI / 2.0, epsilon = 1e-15);
        assert!(c.phi_prime(0.9, 1.0, 0.0).unwrap() < 1e-6);
        assert!(matches!(c.phi_prime(0.95, 1.0, 0.0), Err(Error::OutOfReach { .. })));
    }

    #[test]
    fn eta_plus_examples() {
        let c = long_ctx();
        let e = c.energy(0.5, 0.9f64.acos(), 0.0);
        assert_relative_eq!(e, 0.855, epsilon = 1e-14);
        assert!((c.eta_plus(e, 0.0).unwrap() - 1.45).abs() < 1e-12);
        assert_eq!(c.eta_plus(1.0, 0.0).unwrap(), 0.0);
        let thr = c.threshold(0.0);
        assert_eq!(c.eta_plus(thr, 0.0).unwrap(), c.slab_length);
        assert!(matches!(c.eta_plus(thr * 0.99, 0.0), Err(Error::NoTurning { .. })));
    }

    #[test]
    fn regions() {
        let c = ctx();
        assert_eq!(c.point(0.5, 0.2, 0.0).unwrap().region, Region::I);
        assert_eq!(c.point(0.5, -1.4, 0.0).unwrap().region, Region::II);
        let p = c.point(0.5, -0.05, 0.0).unwrap();
        assert_eq!(p.region, Region::III);
        assert!(p.eta_plus > 0.5 && p.eta_plus < c.slab_length);
    }

    #[test]
    fn g_integral_flat_is_straight_line() {
        let geo = LocalGeometry::new(0.1, f64::INFINITY, f64::INFINITY);
        let c = CharContext::from_geometry(geo, 3.0);
        let phi: f64 = 0.4;
        let g = c.g_integral(phi.cos(), 0.0, 0.5, 2.5).unwrap();
        assert_relative_eq!(g, 2.0 / phi.sin(), max_relative = 1e-12);
        assert_eq!(c.g_integral(0.3, 0.0, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn g_integral_closed_form_for_equal_radii() {
        // R1 = R2 = R: e^{-V} = 1 - eps xi / R, so sin(phi') = sqrt(1 - E^2/(1 - eps xi)^2)
        // and G = int dxi / sin(phi') has the antiderivative
        // -(1/eps) sqrt((1-eps xi)^2 - E^2).
        let c = long_ctx();
        let e: f64 = 0.5;
        let eps = 0.1;
        let anti = |xi: f64| -((1.0 - eps * xi).powi(2) - e * e).sqrt() / eps;
        let exact = anti(1.0) - anti(0.0);
        let g = c.g_integral(e, 0.3, 0.0, 1.0).unwrap();
        assert_relative_eq!(g, exact, max_relative = 1e-12);
        assert!((g - 1.176_939_264_3).abs() < 1e-9);
    }

    #[test]
    fn g_integral_up_to_turning_point_is_finite() {
        let c = long_ctx();
        let e = 0.95;
        let t = c.eta_plus(e, 0.0).unwrap();
        let eps = 0.1;
        let exact = (1.0 - e * e).sqrt() / eps;
        let g = c.g_integral(e, 0.0, 0.0, t).unwrap();
        assert_relative_eq!(g, exact, max_relative = 1e-10);
    }

    #[test]
    fn g_integral_additive() {
        let c = long_ctx();
        let e = 0.8;
        let a = c.g_integral(e, 0.0, 0.0, 0.7).unwrap();
        let b = c.g_integral(e, 0.0, 0.7, 1.9).unwrap();
        let ab = c.g_integral(e, 0.0, 0.0, 1.9).unwrap();
        assert_relative_eq!(a + b, ab, max_relative = 1e-8);
    }

    #[test]
    fn trace_examples() {
        let c = ctx();
        let p = c.point(0.3, 0.5, 0.1).unwrap();
        assert_eq!(c.trace(&p, 0.0).unwrap(), p);
        let q = c.trace(&p, 0.4).unwrap();
        let back = c.trace(&q, -0.4).unwrap();
        assert!((back.phi - p.phi).abs() < 1e-9);
        assert!((back.eta - p.eta).abs() < 1e-12);
        assert!((c.zeta(&q) - c.zeta(&p)).abs() < 1e-8);
    }
}
