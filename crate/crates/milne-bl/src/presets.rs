//! Boundary data and source terms for the Milne problem.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::phase_grid::Field;

/// In-flow datum `h(phi, psi)` on `sin(phi) > 0`.
pub trait Datum: Send + Sync + Debug {
    fn value(&self, phi: f64, psi: f64) -> f64;
    /// `dh/dpsi`.
    fn d_psi(&self, phi: f64, psi: f64) -> f64;
    fn is_zero(&self) -> bool {
        false
    }
}

/// Where a source is sampled: a depth given both as a value and as a node
/// interval `[lo, lo+1]` with fraction `frac`, a polar angle given by its sine
/// and cosine, and an azimuth with its grid index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourcePoint {
    pub eta: f64,
    pub lo: usize,
    pub frac: f64,
    pub sin_phi: f64,
    pub cos_phi: f64,
    pub psi: f64,
    pub l: usize,
}

impl SourcePoint {
    pub fn phi(&self) -> f64 {
        self.sin_phi.atan2(self.cos_phi)
    }
}

/// Source term `S(eta, phi, psi)`.
pub trait Source: Send + Sync + Debug {
    fn value(&self, p: &SourcePoint) -> f64;
    /// `dS/dpsi`; zero unless overridden.
    fn d_psi(&self, _p: &SourcePoint) -> f64 {
        0.0
    }
    fn is_zero(&self) -> bool {
        false
    }
    /// Bound on `|S|` used by the maximum-principle check.
    fn sup_bound(&self) -> f64;
}

/// Named analytic boundary families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatumPreset {
    Zero,
    Constant { value: f64 },
    /// `amp * sin(phi)`.
    SinPhi { amp: f64 },
    /// `amp * cos(phi) * sin(psi)`.
    CosPhiSinPsi { amp: f64 },
    /// `amp * |phi|^power`: non-smooth at grazing for `power < 1`.
    AbsPhiPow { amp: f64, power: f64 },
    /// `offset + amp * cos(phi) * cos(2 psi)`.
    CosPhiCos2Psi { offset: f64, amp: f64 },
}

impl Datum for DatumPreset {
    fn value(&self, phi: f64, psi: f64) -> f64 {
        match *self {
            DatumPreset::Zero => 0.0,
            DatumPreset::Constant { value } => value,
            DatumPreset::SinPhi { amp } => amp * phi.sin(),
            DatumPreset::CosPhiSinPsi { amp } => amp * phi.cos() * psi.sin(),
            DatumPreset::AbsPhiPow { amp, power } => amp * phi.abs().powf(power),
            DatumPreset::CosPhiCos2Psi { offset, amp } => offset + amp * phi.cos() * (2.0 * psi).cos(),
        }
    }

    fn d_psi(&self, phi: f64, psi: f64) -> f64 {
        match *self {
            DatumPreset::CosPhiSinPsi { amp } => amp * phi.cos() * psi.cos(),
            DatumPreset::CosPhiCos2Psi { amp, .. } => -2.0 * amp * phi.cos() * (2.0 * psi).sin(),
            _ => 0.0,
        }
    }

    fn is_zero(&self) -> bool {
        match *self {
            DatumPreset::Zero => true,
            DatumPreset::Constant { value } => value == 0.0,
            DatumPreset::SinPhi { amp } | DatumPreset::CosPhiSinPsi { amp } | DatumPreset::AbsPhiPow { amp, .. } => {
                amp == 0.0
            }
            DatumPreset::CosPhiCos2Psi { offset, amp } => offset == 0.0 && amp == 0.0,
        }
    }
}

/// `base + shift`.
#[derive(Debug, Clone)]
pub struct ShiftedDatum {
    pub base: Arc<dyn Datum>,
    pub shift: f64,
}

impl Datum for ShiftedDatum {
    fn value(&self, phi: f64, psi: f64) -> f64 {
        self.base.value(phi, psi) + self.shift
    }
    fn d_psi(&self, phi: f64, psi: f64) -> f64 {
        self.base.d_psi(phi, psi)
    }
    fn is_zero(&self) -> bool {
        self.shift == 0.0 && self.base.is_zero()
    }
}

/// `dh/dpsi` of another datum, used as in-flow data of the psi-derivative problem.
#[derive(Debug, Clone)]
pub struct PsiDerivativeDatum(pub Arc<dyn Datum>);

impl Datum for PsiDerivativeDatum {
    fn value(&self, phi: f64, psi: f64) -> f64 {
        self.0.d_psi(phi, psi)
    }
    fn d_psi(&self, _phi: f64, _psi: f64) -> f64 {
        0.0
    }
}

/// Named analytic source families; all decay exponentially in `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourcePreset {
    Zero,
    /// `amp * e^{-rate eta}`.
    ExpDecay { amp: f64, rate: f64 },
    /// `amp * e^{-rate eta} * cos(psi)`.
    ExpDecayCosPsi { amp: f64, rate: f64 },
}

impl Source for SourcePreset {
    fn value(&self, p: &SourcePoint) -> f64 {
        match *self {
            SourcePreset::Zero => 0.0,
            SourcePreset::ExpDecay { amp, rate } => amp * (-rate * p.eta).exp(),
            SourcePreset::ExpDecayCosPsi { amp, rate } => amp * (-rate * p.eta).exp() * p.psi.cos(),
        }
    }

    fn d_psi(&self, p: &SourcePoint) -> f64 {
        match *self {
            SourcePreset::ExpDecayCosPsi { amp, rate } => -amp * (-rate * p.eta).exp() * p.psi.sin(),
            _ => 0.0,
        }
    }

    fn is_zero(&self) -> bool {
        match *self {
            SourcePreset::Zero => true,
            SourcePreset::ExpDecay { amp, .. } | SourcePreset::ExpDecayCosPsi { amp, .. } => amp == 0.0,
        }
    }

    fn sup_bound(&self) -> f64 {
        match *self {
            SourcePreset::Zero => 0.0,
            SourcePreset::ExpDecay { amp, rate } | SourcePreset::ExpDecayCosPsi { amp, rate } => {
                if rate >= 0.0 {
                    amp.abs()
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

impl SourcePreset {
    /// Sample-based decay probe: `sup e^{K eta} |S|` over `[0, L]` is finite
    /// when the preset decays at least at rate `k`.
    pub fn decays_at(&self, k: f64) -> bool {
        match *self {
            SourcePreset::Zero => true,
            SourcePreset::ExpDecay { amp, rate } | SourcePreset::ExpDecayCosPsi { amp, rate } => {
                amp == 0.0 || rate >= k
            }
        }
    }
}

/// A source tabulated on the solver grid, linear in `sin(phi)` and `eta`
/// between nodes and constant beyond the outermost polar nodes.
#[derive(Debug, Clone)]
pub struct GridSource {
    pub field: Field,
    bound: f64,
}

impl GridSource {
    pub fn new(field: Field) -> Self {
        let bound = field.max_abs();
        GridSource { field, bound }
    }

    fn at_node(&self, i: usize, s: f64, l: usize) -> f64 {
        let g = &*self.field.grid;
        let n = g.n_phi();
        let sp = &g.sin_phi;
        if s <= sp[0] {
            return self.field.get(i, 0, l);
        }
        if s >= sp[n - 1] {
            return self.field.get(i, n - 1, l);
        }
        let k = (sp.partition_point(|&v| v <= s) - 1).min(n - 2);
        let t = (s - sp[k]) / (sp[k + 1] - sp[k]);
        let a = self.field.get(i, k, l);
        let b = self.field.get(i, k + 1, l);
        a + t * (b - a)
    }
}

impl Source for GridSource {
    fn value(&self, p: &SourcePoint) -> f64 {
        let a = self.at_node(p.lo, p.sin_phi, p.l);
        if p.frac == 0.0 {
            return a;
        }
        let b = self.at_node(p.lo + 1, p.sin_phi, p.l);
        a + p.frac * (b - a)
    }

    fn is_zero(&self) -> bool {
        self.bound == 0.0
    }

    fn sup_bound(&self) -> f64 {
        self.bound
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_grid::{GridSpec, PhaseGrid};

    #[test]
    fn datum_values() {
        let h = DatumPreset::SinPhi { amp: 2.0 };
        assert!((h.value(0.5, 1.0) - 2.0 * 0.5f64.sin()).abs() < 1e-15);
        let h = DatumPreset::CosPhiSinPsi { amp: 1.0 };
        assert!((h.d_psi(0.3, 0.7) - 0.3f64.cos() * 0.7f64.cos()).abs() < 1e-15);
        assert!(DatumPreset::Zero.is_zero());
        assert!(DatumPreset::Constant { value: 0.0 }.is_zero());
    }

    #[test]
    fn datum_psi_derivative_matches_difference() {
        let h = DatumPreset::CosPhiCos2Psi { offset: 0.2, amp: 0.7 };
        let d = 1e-6;
        let fd = (h.value(0.4, 1.1 + d) - h.value(0.4, 1.1 - d)) / (2.0 * d);
        assert!((fd - h.d_psi(0.4, 1.1)).abs() < 1e-8);
    }

    #[test]
    fn grid_source_reproduces_nodes_and_is_linear() {
        let g = std::sync::Arc::new(
            PhaseGrid::new(&GridSpec { n_eta: 5, n_phi: 8, n_psi: 4, ..GridSpec::default() }, 1.0).unwrap(),
        );
        let f = Field::from_fn(g.clone(), |e, p, _| 1.0 + e + 2.0 * p.sin());
        let src = GridSource::new(f);
        for j in 0..g.n_phi() {
            let p = SourcePoint {
                eta: g.eta[2],
                lo: 2,
                frac: 0.0,
                sin_phi: g.sin_phi[j],
                cos_phi: g.cos_phi[j],
                psi: g.psi[1],
                l: 1,
            };
            assert!((src.value(&p) - (1.0 + g.eta[2] + 2.0 * g.sin_phi[j])).abs() < 1e-14);
        }
        let s = 0.5 * (g.sin_phi[4] + g.sin_phi[5]);
        let p = SourcePoint { eta: 0.0, lo: 1, frac: 0.5, sin_phi: s, cos_phi: 0.0, psi: 0.0, l: 0 };
        let e = 0.5 * (g.eta[1] + g.eta[2]);
        assert!((src.value(&p) - (1.0 + e + 2.0 * s)).abs() < 1e-14);
    }
}
