//! Tensor grid on `[0, L] x (-pi/2, pi/2) x [-pi, pi)` and the angular
//! quadrature carrying the `cos(phi)` Jacobian.
//!
//! The polar rule is Gauss–Legendre in `s = sin(phi)` on each half-range, so
//! `ds = cos(phi) dphi` is absorbed into the weights and no node sits on the
//! grazing value `s = 0`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

pub const FOUR_PI: f64 = 4.0 * PI;
/// `||sin(phi)||^2 = 4 pi / 3`.
pub const SIN_SQ_NORM: f64 = 4.0 * PI / 3.0;

/// Depth-node distribution on `[0, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Grading {
    /// Widths grow by `ratio` over the first quarter of the steps (at most 40), then stay uniform.
    Geometric { ratio: f64 },
    /// `eta_k = L (k / (n - 1))^exponent`: widths grow like `eta^(1 - 1/exponent)`.
    Power { exponent: f64 },
}

impl Default for Grading {
    fn default() -> Self {
        Grading::Geometric { ratio: 1.15 }
    }
}

impl Grading {
    pub fn nodes(&self, n: usize, length: f64) -> Vec<f64> {
        match *self {
            Grading::Geometric { ratio } => graded_nodes(n, length, ratio),
            Grading::Power { exponent } => power_nodes(n, length, exponent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub n_eta: usize,
    /// Total polar nodes, even: `n_phi / 2` per half-range.
    pub n_phi: usize,
    pub n_psi: usize,
    pub grading: Grading,
    /// Rigid shift of the azimuthal nodes.
    pub psi_offset: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n_eta: 256, n_phi: 32, n_psi: 16, grading: Grading::Geometric { ratio: 1.15 }, psi_offset: 0.0 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_eta < 3 {
            return Err(Error::InvalidParameter("n_eta must be at least 3".into()));
        }
        if self.n_phi < 2 || !self.n_phi.is_multiple_of(2) {
            return Err(Error::InvalidParameter("n_phi must be even and positive".into()));
        }
        if self.n_psi == 0 {
            return Err(Error::InvalidParameter("n_psi must be positive".into()));
        }
        match self.grading {
            Grading::Geometric { ratio } if !(ratio >= 1.0 && ratio.is_finite()) => {
                return Err(Error::InvalidParameter("geometric grading ratio must be >= 1".into()));
            }
            Grading::Power { exponent } if !(exponent >= 1.0 && exponent.is_finite()) => {
                return Err(Error::InvalidParameter("power grading exponent must be >= 1".into()));
            }
            _ => {}
        }
        if !self.psi_offset.is_finite() {
            return Err(Error::InvalidParameter("psi_offset must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseGrid {
    pub slab_length: f64,
    pub eta: Vec<f64>,
    pub w_eta: Vec<f64>,
    /// Ascending; index `j` and `n_phi - 1 - j` are a `+-phi` pair.
    pub phi: Vec<f64>,
    pub sin_phi: Vec<f64>,
    pub cos_phi: Vec<f64>,
    /// Includes the `cos(phi)` Jacobian.
    pub w_phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub w_psi: Vec<f64>,
}

impl PhaseGrid {
    pub fn new(spec: &GridSpec, slab_length: f64) -> Result<Self> {
        spec.validate()?;
        if !(slab_length > 0.0 && slab_length.is_finite()) {
            return Err(Error::InvalidParameter(format!("slab length {slab_length}")));
        }
        let eta = spec.grading.nodes(spec.n_eta, slab_length);
        let w_eta = trapezoid_weights(&eta);

        let half = spec.n_phi / 2;
        let (x, w) = gauss_legendre(half);
        let mut s = Vec::with_capacity(spec.n_phi);
        let mut w_phi = Vec::with_capacity(spec.n_phi);
        // (0,1] half: s = (x+1)/2, ds = dx/2.
        for k in (0..half).rev() {
            s.push(-0.5 * (x[k] + 1.0));
            w_phi.push(0.5 * w[k]);
        }
        for k in 0..half {
            s.push(0.5 * (x[k] + 1.0));
            w_phi.push(0.5 * w[k]);
        }
        let phi: Vec<f64> = s.iter().map(|v| v.asin()).collect();
        let cos_phi: Vec<f64> = s.iter().map(|v| (1.0 - v * v).sqrt()).collect();

        let n = spec.n_psi;
        let h = 2.0 * PI / n as f64;
        let psi: Vec<f64> = (0..n).map(|l| (l as f64 - (n / 2) as f64) * h + spec.psi_offset).collect();
        let w_psi = vec![h; n];

        let grid = PhaseGrid { slab_length, eta, w_eta, phi, sin_phi: s, cos_phi, w_phi, psi, w_psi };
        grid.check_pairing()?;
        Ok(grid)
    }

    pub fn n_eta(&self) -> usize {
        self.eta.len()
    }
    pub fn n_phi(&self) -> usize {
        self.phi.len()
    }
    pub fn n_psi(&self) -> usize {
        self.psi.len()
    }
    pub fn half(&self) -> usize {
        self.phi.len() / 2
    }
    pub fn len(&self) -> usize {
        self.n_eta() * self.n_phi() * self.n_psi()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Polar index of `-phi_j`.
    #[inline]
    pub fn mirror(&self, j: usize) -> usize {
        self.n_phi() - 1 - j
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.n_phi() + j) * self.n_psi() + l
    }

    /// Specular pairing: every node has a mirror with equal weight.
    pub fn check_pairing(&self) -> Result<()> {
        for j in 0..self.n_phi() {
            let m = self.mirror(j);
            if (self.sin_phi[j] + self.sin_phi[m]).abs() > 1e-15 || self.w_phi[j] != self.w_phi[m] {
                return Err(Error::InvalidParameter(format!("polar node {j} has no mirror")));
            }
            if self.sin_phi[j] == 0.0 {
                return Err(Error::InvalidParameter("polar node on the grazing set".into()));
            }
        }
        Ok(())
    }

    /// `sum w_phi w_psi`, which equals `4 pi`.
    pub fn angular_measure(&self) -> f64 {
        let a: f64 = self.w_phi.iter().sum();
        let b: f64 = self.w_psi.iter().sum();
        a * b
    }

    /// `sum sin^2(phi) w_phi w_psi`, which equals `4 pi / 3`.
    pub fn sin_sq_moment(&self) -> f64 {
        let a: f64 = self.w_phi.iter().zip(&self.sin_phi).map(|(w, s)| w * s * s).sum();
        let b: f64 = self.w_psi.iter().sum();
        a * b
    }

    /// Index of the node interval `[eta_k, eta_{k+1}]` containing `x` and the
    /// fraction of the way through it.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.n_eta();
        if x <= self.eta[0] {
            return (0, 0.0);
        }
        if x >= self.eta[n - 1] {
            return (n - 2, 1.0);
        }
        let k = self.eta.partition_point(|&e| e <= x) - 1;
        let k = k.min(n - 2);
        let t = (x - self.eta[k]) / (self.eta[k + 1] - self.eta[k]);
        (k, t)
    }

    /// Linear interpolation of a per-node array.
    pub fn interp_eta(&self, values: &[f64], x: f64) -> f64 {
        let (k, t) = self.locate(x);
        values[k] + t * (values[k + 1] - values[k])
    }
}

/// Geometric grading from `eta = 0` with a uniform tail; the last node is `L` exactly.
pub fn graded_nodes(n: usize, length: f64, ratio: f64) -> Vec<f64> {
    let steps = n - 1;
    let m = ((0.25 * steps as f64).round() as usize).min(40);
    let mut widths = Vec::with_capacity(steps);
    let mut h = 1.0;
    for k in 0..steps {
        widths.push(h);
        if k + 1 < m {
            h *= ratio;
        }
    }
    let total: f64 = widths.iter().sum();
    let mut nodes = Vec::with_capacity(n);
    let mut acc = 0.0;
    nodes.push(0.0);
    for w in &widths[..steps - 1] {
        acc += w * length / total;
        nodes.push(acc);
    }
    nodes.push(length);
    nodes
}

/// `L (k / (n - 1))^p`; the last node is `L` exactly.
pub fn power_nodes(n: usize, length: f64, exponent: f64) -> Vec<f64> {
    let steps = (n - 1) as f64;
    let mut nodes: Vec<f64> = (0..n).map(|k| length * (k as f64 / steps).powf(exponent)).collect();
    nodes[n - 1] = length;
    nodes
}

/// Composite trapezoid weights on arbitrary ascending nodes.
pub fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = x[k + 1] - x[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

/// Scalar samples over a [`PhaseGrid`], indexed `(eta, phi, psi)` row-major.
#[derive(Debug, Clone)]
pub struct Field {
    pub grid: Arc<PhaseGrid>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Norms {
    pub l2_total: f64,
    pub linf_total: f64,
    pub l2_at: Vec<f64>,
    pub linf_at: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Arc<PhaseGrid>) -> Self {
        let n = grid.len();
        Field { grid, values: vec![0.0; n] }
    }

    pub fn constant(grid: Arc<PhaseGrid>, c: f64) -> Self {
        let n = grid.len();
        Field { grid, values: vec![c; n] }
    }

    pub fn from_fn(grid: Arc<PhaseGrid>, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.n_eta() {
            for j in 0..grid.n_phi() {
                for l in 0..grid.n_psi() {
                    values.push(f(grid.eta[i], grid.phi[j], grid.psi[l]));
                }
            }
        }
        Field { grid, values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        self.values[self.grid.idx(i, j, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, l: usize, v: f64) {
        let k = self.grid.idx(i, j, l);
        self.values[k] = v;
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Field { grid: self.grid.clone(), values })
    }

    /// `sum_{phi,psi} w weight(j,l) f` at one depth.
    pub fn moment_at(&self, i: usize, weight: impl Fn(usize, usize) -> f64) -> f64 {
        let g = &*self.grid;
        let mut s = 0.0;
        for j in 0..g.n_phi() {
            let mut row = 0.0;
            for l in 0..g.n_psi() {
                row += g.w_psi[l] * weight(j, l) * self.get(i, j, l);
            }
            s += g.w_phi[j] * row;
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Values at depth `i` as an `(n_phi, n_psi)` row-major slice.
    pub fn slice_at(&self, i: usize) -> &[f64] {
        let k = self.grid.n_phi() * self.grid.n_psi();
        &self.values[i * k..(i + 1) * k]
    }

    /// `d/d eta` by second-order differences on the nonuniform nodes.
    pub fn d_eta(&self) -> Field {
        let g = &*self.grid;
        let mut out = Field::zeros(self.grid.clone());
        for j in 0..g.n_phi() {
            for l in 0..g.n_psi() {
                let col: Vec<f64> = (0..g.n_eta()).map(|i| self.get(i, j, l)).collect();
                let d = diff_nonuniform(&g.eta, &col);
                for (i, v) in d.into_iter().enumerate() {
                    out.set(i, j, l, v);
                }
            }
        }
        out
    }

    /// `d/d phi` by second-order differences on the polar nodes.
    pub fn d_phi(&self) -> Field {
        let g = &*self.grid;
        let mut out = Field::zeros(self.grid.clone());
        for i in 0..g.n_eta() {
            for l in 0..g.n_psi() {
                let row: Vec<f64> = (0..g.n_phi()).map(|j| self.get(i, j, l)).collect();
                let d = diff_nonuniform(&g.phi, &row);
                for (j, v) in d.into_iter().enumerate() {
                    out.set(i, j, l, v);
                }
            }
        }
        out
    }

    /// `d/d psi` by periodic spectral differentiation.
    pub fn d_psi(&self) -> Field {
        let g = &*self.grid;
        let n = g.n_psi();
        let dm = spectral_diff_matrix(n);
        let mut out = Field::zeros(self.grid.clone());
        for i in 0..g.n_eta() {
            for j in 0..g.n_phi() {
                for l in 0..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += dm[l * n + m] * self.get(i, j, m);
                    }
                    out.set(i, j, l, s);
                }
            }
        }
        out
    }

    /// CSV with header `eta,phi,psi,value`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let g = &*self.grid;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["eta", "phi", "psi", "value"]).map_err(|e| Error::Io(e.to_string()))?;
        for i in 0..g.n_eta() {
            for j in 0..g.n_phi() {
                for l in 0..g.n_psi() {
                    w.write_record(&[
                        format!("{:.17e}", g.eta[i]),
                        format!("{:.17e}", g.phi[j]),
                        format!("{:.17e}", g.psi[l]),
                        format!("{:.17e}", self.get(i, j, l)),
                    ])
                    .map_err(|e| Error::Io(e.to_string()))?;
                }
            }
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }

    /// JSON sidecar: node arrays, weights and the config hash.
    pub fn metadata_json(&self, config_hash: &str) -> serde_json::Value {
        let g = &*self.grid;
        serde_json::json!({
            "config_hash": config_hash,
            "version": env!("CARGO_PKG_VERSION"),
            "slab_length": g.slab_length,
            "eta_nodes": g.eta,
            "phi_nodes": g.phi,
            "psi_nodes": g.psi,
            "w_eta": g.w_eta,
            "w_phi": g.w_phi,
            "w_psi": g.w_psi,
        })
    }
}

/// Second-order first derivative on ascending nonuniform nodes.
pub fn diff_nonuniform(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            let s = (y[1] - y[0]) / (x[1] - x[0]);
            d[0] = s;
            d[1] = s;
        }
        return d;
    }
    for k in 1..n - 1 {
        let h0 = x[k] - x[k - 1];
        let h1 = x[k + 1] - x[k];
        d[k] = -h1 / (h0 * (h0 + h1)) * y[k - 1] + (h1 - h0) / (h0 * h1) * y[k] + h0 / (h1 * (h0 + h1)) * y[k + 1];
    }
    let (h0, h1) = (x[1] - x[0], x[2] - x[1]);
    d[0] = -(2.0 * h0 + h1) / (h0 * (h0 + h1)) * y[0] + (h0 + h1) / (h0 * h1) * y[1] - h0 / (h1 * (h0 + h1)) * y[2];
    let (h0, h1) = (x[n - 2] - x[n - 3], x[n - 1] - x[n - 2]);
    d[n - 1] = h1 / (h0 * (h0 + h1)) * y[n - 3] - (h0 + h1) / (h0 * h1) * y[n - 2]
        + (2.0 * h1 + h0) / (h1 * (h0 + h1)) * y[n - 1];
    d
}

/// Periodic spectral differentiation matrix on `n` uniform nodes, row-major.
pub fn spectral_diff_matrix(n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    if n < 2 {
        return d;
    }
    let h = 2.0 * PI / n as f64;
    for l in 0..n {
        for m in 0..n {
            if l == m {
                continue;
            }
            let k = l as f64 - m as f64;
            let sign = if (l + m) % 2 == 0 { 1.0 } else { -1.0 };
            d[l * n + m] = if n.is_multiple_of(2) {
                0.5 * sign / (0.5 * k * h).tan()
            } else {
                0.5 * sign / (0.5 * k * h).sin()
            };
        }
    }
    d
}

/// `fbar(eta) = (1/4pi) int int f cos(phi) dphi dpsi` at every depth.
pub fn bar(f: &Field) -> Vec<f64> {
    (0..f.grid.n_eta()).map(|i| f.moment_at(i, |_, _| 1.0) / FOUR_PI).collect()
}

/// `<f, g>(eta_i)` with the `cos(phi)` weight.
pub fn inner(f: &Field, g: &Field, eta_index: usize) -> Result<f64> {
    if !f.same_grid(g) {
        return Err(Error::GridMismatch);
    }
    if eta_index >= f.grid.n_eta() {
        return Err(Error::InvalidParameter(format!("eta index {eta_index}")));
    }
    Ok(f.moment_at(eta_index, |j, l| g.get(eta_index, j, l)))
}

pub fn norms(f: &Field) -> Norms {
    let g = &*f.grid;
    let mut l2_at = Vec::with_capacity(g.n_eta());
    let mut linf_at = Vec::with_capacity(g.n_eta());
    for i in 0..g.n_eta() {
        l2_at.push(f.moment_at(i, |j, l| f.get(i, j, l)).max(0.0).sqrt());
        linf_at.push(f.slice_at(i).iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let l2_total = g.w_eta.iter().zip(&l2_at).map(|(w, v)| w * v * v).sum::<f64>().sqrt();
    let linf_total = linf_at.iter().fold(0.0f64, |m, &v| m.max(v));
    Norms { l2_total, linf_total, l2_at, linf_at }
}

/// `P[f](eta_i) = -(1/4pi) int int_{sin phi < 0} f sin(phi) cos(phi) dphi dpsi`.
pub fn p_flux(f: &Field, eta_index: usize) -> f64 {
    let g = &*f.grid;
    let mut s = 0.0;
    for j in 0..g.half() {
        let mut row = 0.0;
        for l in 0..g.n_psi() {
            row += g.w_psi[l] * f.get(eta_index, j, l);
        }
        s += g.w_phi[j] * g.sin_phi[j] * row;
    }
    -s / FOUR_PI
}
