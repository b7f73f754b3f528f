//! Source iteration for the Milne problem with geometric correction, and the
//! derivative problems in `tau_i` and `psi`.
//!
//! The mild formulation is linear in the angular average, so one sweep is the
//! affine map `fbar -> A fbar + b` assembled once by [`kernel::Kernel`]. The
//! iteration lags `fbar` exactly as the continuous scheme does; only the
//! sweep cost is reduced.

pub mod kernel;

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{psi_weights, CurvatureProfile, LocalGeometry, MilneConfig};
use crate::phase_grid::{bar, Field, PhaseGrid, FOUR_PI, SIN_SQ_NORM};
use crate::presets::{Datum, DatumPreset, GridSource, PsiDerivativeDatum, ShiftedDatum, Source, SourcePoint, SourcePreset};
use crate::quadrature::Rule;

pub use kernel::{Kernel, System};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Inflow,
    Diffusive,
}

#[derive(Debug, Clone)]
pub struct MilneProblem {
    pub cfg: MilneConfig,
    pub prof: CurvatureProfile,
    pub tau: [f64; 2],
    pub h: Arc<dyn Datum>,
    pub source: Arc<dyn Source>,
    pub boundary: BoundaryKind,
}

impl MilneProblem {
    pub fn new(cfg: MilneConfig, prof: CurvatureProfile, h: impl Datum + 'static) -> Result<Self> {
        cfg.validate()?;
        cfg.check_profile(&prof)?;
        Ok(MilneProblem {
            cfg,
            prof,
            tau: [0.0; 2],
            h: Arc::new(h),
            source: Arc::new(SourcePreset::Zero),
            boundary: BoundaryKind::Inflow,
        })
    }

    pub fn with_source(mut self, s: impl Source + 'static) -> Self {
        self.source = Arc::new(s);
        self
    }

    pub fn with_source_arc(mut self, s: Arc<dyn Source>) -> Self {
        self.source = s;
        self
    }

    pub fn with_datum_arc(mut self, h: Arc<dyn Datum>) -> Self {
        self.h = h;
        self
    }

    pub fn with_tau(mut self, tau: [f64; 2]) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_boundary(mut self, b: BoundaryKind) -> Self {
        self.boundary = b;
        self
    }

    pub fn geometry(&self) -> LocalGeometry {
        self.prof.local(self.cfg.epsilon, self.tau)
    }

    pub fn grid(&self) -> Result<Arc<PhaseGrid>> {
        Ok(Arc::new(PhaseGrid::new(&self.cfg.grid, self.cfg.slab_length)?))
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Ok(Kernel::new(self.grid()?, self.geometry()))
    }

    fn source_opt(&self) -> Option<&dyn Source> {
        if self.source.is_zero() {
            None
        } else {
            Some(&*self.source)
        }
    }
}

#[derive(Debug, Clone)]
pub struct MilneSolution {
    pub f: Field,
    pub fbar: Vec<f64>,
    /// `beta(L) / (4 pi / 3)`.
    pub f_l: f64,
    /// Mean of `fbar` over the last tenth of the slab.
    pub f_l_tail: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// `||bar(f) - fbar||_inf sqrt(4 pi L)`: residual of the discrete mild equation.
    pub equation_residual: f64,
    /// Constant added to the in-flow datum: `P[f](0)` for diffusive
    /// re-emission, minus the removed limit for tangential solves.
    pub boundary_shift: f64,
    pub problem: MilneProblem,
}

impl MilneSolution {
    pub fn grid(&self) -> &PhaseGrid {
        &self.f.grid
    }

    pub fn f_l_discrepancy(&self) -> f64 {
        (self.f_l - self.f_l_tail).abs()
    }

    /// `f - f_L`.
    pub fn deviation(&self) -> Field {
        let c = self.f_l;
        self.f.map(|v| v - c)
    }
}

/// `K[p]`: attenuated boundary datum.
pub fn apply_k(problem: &MilneProblem, datum: &dyn Datum) -> Result<Field> {
    let k = problem.kernel()?;
    let f = k.evaluate(Some(datum), 0.0, None, None);
    f.check_finite("apply_k")?;
    Ok(f)
}

/// `T[S]`: accumulated source along characteristics.
pub fn apply_t(problem: &MilneProblem, source: &dyn Source) -> Result<Field> {
    let k = problem.kernel()?;
    let f = k.evaluate(None, 0.0, None, Some(source));
    f.check_finite("apply_t")?;
    Ok(f)
}

/// `(1/pi) int int_{sin phi > 0} h sin(phi) cos(phi)`: flux-weighted mean of `h`.
fn flux_mean(grid: &PhaseGrid, h: &dyn Datum) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in grid.half()..grid.n_phi() {
        for l in 0..grid.n_psi() {
            let w = grid.w_phi[j] * grid.sin_phi[j] * grid.w_psi[l];
            num += w * h.value(grid.phi[j], grid.psi[l]);
            den += w;
        }
    }
    num / den
}

struct Iterate {
    fbar: Vec<f64>,
    shift: f64,
    iterations: usize,
    history: Vec<f64>,
}

/// Lagged-`fbar` iteration with vector Aitken extrapolation every five sweeps.
/// With `coupled`, the in-flow datum is shifted by the re-emitted flux.
fn source_iteration(sys: &System, cfg: &MilneConfig, x0: f64, s_sup: f64, coupled: bool) -> Result<Iterate> {
    let n = sys.n;
    let mut x = vec![x0; n];
    let mut c = 0.0;
    let mut next = vec![0.0; n];
    let mut d_prev: Option<Vec<f64>> = None;
    let mut history = Vec::new();
    for k in 1..=cfg.max_iterations {
        sys.apply(&x, c, &mut next);
        let c_next = if coupled { sys.flux(&x, c) } else { 0.0 };
        let x_sup = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = (sys.h_sup + c.abs()).max(x_sup + s_sup);
        let value = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if value > bound * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::MaximumPrinciple { sweep: k, value, bound });
        }
        if !next.iter().all(|v| v.is_finite()) || !c_next.is_finite() {
            return Err(Error::NonFinite("source iteration"));
        }
        let mut d: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        d.push(c_next - c);
        let res = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        history.push(res);
        x.copy_from_slice(&next);
        c = c_next;
        if res <= cfg.fixed_point_tol {
            return Ok(Iterate { fbar: x, shift: c, iterations: k, history });
        }
        if k % 5 == 0 {
            if let Some(dp) = &d_prev {
                let num: f64 = d.iter().zip(dp).map(|(a, b)| a * b).sum();
                let den: f64 = dp.iter().map(|a| a * a).sum();
                let rho = if den > 0.0 { num / den } else { 0.0 };
                if rho > 0.0 && rho < 0.99 {
                    let g = rho / (1.0 - rho);
                    for (xi, di) in x.iter_mut().zip(&d) {
                        *xi += g * di;
                    }
                    if coupled {
                        c += g * d[n];
                    }
                }
            }
        }
        d_prev = Some(d);
    }
    let last = history.last().copied().unwrap_or(f64::INFINITY);
    Err(Error::NonConvergence { iterations: cfg.max_iterations, last, residual_history: history })
}

fn finish(problem: &MilneProblem, kernel: &Kernel, datum: &dyn Datum, it: Iterate) -> Result<MilneSolution> {
    let f = kernel.evaluate(Some(datum), it.shift, Some(&it.fbar), problem.source_opt());
    f.check_finite("solver sweep")?;
    let g = &*f.grid;
    let fb = bar(&f);
    let eq = fb.iter().zip(&it.fbar).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let equation_residual = eq * (FOUR_PI * g.slab_length).sqrt();
    let f_l = beta_at(&f, g.n_eta() - 1) / SIN_SQ_NORM;
    let f_l_tail = tail_mean(g, &it.fbar);
    Ok(MilneSolution {
        f,
        fbar: it.fbar,
        f_l,
        f_l_tail,
        iterations: it.iterations,
        residual_history: it.history,
        equation_residual,
        boundary_shift: it.shift,
        problem: problem.clone(),
    })
}

fn beta_at(f: &Field, i: usize) -> f64 {
    let s = &f.grid.sin_phi;
    f.moment_at(i, |j, _| s[j] * s[j])
}

fn tail_mean(g: &PhaseGrid, fbar: &[f64]) -> f64 {
    let cut = 0.9 * g.slab_length;
    let (mut s, mut n) = (0.0, 0);
    for (e, v) in g.eta.iter().zip(fbar) {
        if *e >= cut {
            s += v;
            n += 1;
        }
    }
    s / n as f64
}

/// In-flow problem: `f(0) = h` on `sin(phi) > 0`, specular at `L`.
pub fn solve_inflow(problem: &MilneProblem) -> Result<MilneSolution> {
    let kernel = problem.kernel()?;
    let sys = kernel.assemble(&*problem.h, problem.source_opt());
    let x0 = flux_mean(&kernel.grid, &*problem.h);
    let it = source_iteration(&sys, &problem.cfg, x0, problem.source.sup_bound(), false)?;
    finish(problem, &kernel, &*problem.h, it)
}

/// `f_L = beta(L) / ||sin(phi)||^2`.
pub fn estimate_fl(sol: &MilneSolution) -> f64 {
    beta_at(&sol.f, sol.grid().n_eta() - 1) / SIN_SQ_NORM
}

/// Left side of the compatibility condition under grid quadrature.
///
/// The source term carries the weight `e^{-2V}`, the integrating factor of
/// the flux balance `d/deta <sin phi, f> + 2F <sin phi, f> = <S, 1>`.
pub fn check_compatibility(problem: &MilneProblem) -> Result<f64> {
    let g = problem.grid()?;
    let mut defect = 0.0;
    for j in g.half()..g.n_phi() {
        for l in 0..g.n_psi() {
            defect += g.w_phi[j] * g.w_psi[l] * g.sin_phi[j] * problem.h.value(g.phi[j], g.psi[l]);
        }
    }
    if !problem.source.is_zero() {
        let geo = problem.geometry();
        let mut vol = 0.0;
        for i in 0..g.n_eta() {
            let mut s = 0.0;
            for l in 0..g.n_psi() {
                let (s2, c2) = psi_weights(g.psi[l]);
                let weight = (-2.0 * geo.potential(g.eta[i], s2, c2)).exp();
                for j in 0..g.n_phi() {
                    let p = SourcePoint {
                        eta: g.eta[i],
                        lo: i,
                        frac: 0.0,
                        sin_phi: g.sin_phi[j],
                        cos_phi: g.cos_phi[j],
                        psi: g.psi[l],
                        l,
                    };
                    s += g.w_phi[j] * g.w_psi[l] * weight * problem.source.value(&p);
                }
            }
            vol += g.w_eta[i] * s;
        }
        defect += vol;
    }
    Ok(defect)
}

fn compatibility_scale(problem: &MilneProblem) -> Result<f64> {
    let g = problem.grid()?;
    let mut s = 0.0;
    for j in g.half()..g.n_phi() {
        for l in 0..g.n_psi() {
            s += g.w_phi[j] * g.w_psi[l] * g.sin_phi[j] * problem.h.value(g.phi[j], g.psi[l]).abs();
        }
    }
    Ok(1.0 + s)
}

pub const COMPATIBILITY_TOL: f64 = 1e-8;

/// Diffusive problem `f(0) = h + P[f](0)`, solved as the coupled iteration
/// of `fbar` and the re-emitted level `P[f](0)`. Requires compatible data.
pub fn solve_diffusive(problem: &MilneProblem) -> Result<MilneSolution> {
    let defect = check_compatibility(problem)?;
    if defect.abs() > COMPATIBILITY_TOL * compatibility_scale(problem)? {
        return Err(Error::Incompatible { defect });
    }
    let kernel = problem.kernel()?;
    let sys = kernel.assemble(&*problem.h, problem.source_opt());
    let x0 = flux_mean(&kernel.grid, &*problem.h);
    let it = source_iteration(&sys, &problem.cfg, x0, problem.source.sup_bound(), true)?;
    finish(problem, &kernel, &*problem.h, it)
}

/// Splits `h = (h - m) + m` with `m = defect / pi`, so that `h - m` is compatible.
pub fn compatible_shift(problem: &MilneProblem) -> Result<(MilneProblem, f64)> {
    let m = check_compatibility(problem)? / PI;
    let shifted: Arc<dyn Datum> = Arc::new(ShiftedDatum { base: problem.h.clone(), shift: -m });
    Ok((problem.clone().with_datum_arc(shifted), m))
}

/// Diffusive solve of the compatible part `h - m`, with the constant `m` added back.
pub fn solve_diffusive_shifted(problem: &MilneProblem) -> Result<(MilneSolution, f64)> {
    let (p, m) = compatible_shift(problem)?;
    let mut sol = solve_diffusive(&p)?;
    sol.f = sol.f.map(|v| v + m);
    for v in &mut sol.fbar {
        *v += m;
    }
    sol.f_l += m;
    sol.f_l_tail += m;
    sol.problem = problem.clone();
    Ok((sol, m))
}

/// Mean-force coefficient of the hydrodynamic lift:
/// `Fbar = (3 / 2pi) int int F sin^2(phi) cos(phi) = -eps (k1/(1-eps eta k1) + k2/(1-eps eta k2))`.
pub fn mean_force(geo: &LocalGeometry, eta: f64) -> f64 {
    let e = geo.eps;
    -e * (geo.k1 / (1.0 - e * eta * geo.k1) + geo.k2 / (1.0 - e * eta * geo.k2))
}

#[derive(Debug, Clone, Serialize)]
pub struct HydroLift {
    pub eta: Vec<f64>,
    pub a: Vec<f64>,
    /// `da/deta = -Fbar a + 3 S_Q`.
    pub da: Vec<f64>,
}

/// `a(eta)` with `f2 = a(eta) sin(phi)` carrying the angular mean `S_Q` of the
/// source: `a' = -Fbar a + 3 S_Q` and `a(L) = 0`.
///
/// With `e^{int_0^y Fbar} = (1 - eps y k1)(1 - eps y k2) =: P(y)`, the solution is
/// `a(eta) = -(1 / P(eta)) int_eta^L P(y) 3 S_Q(y) dy`.
pub fn hydro_lift(problem: &MilneProblem, s_q: &dyn Fn(f64) -> f64) -> Result<HydroLift> {
    let g = problem.grid()?;
    let geo = problem.geometry();
    let e = geo.eps;
    let p = |y: f64| (1.0 - e * y * geo.k1) * (1.0 - e * y * geo.k2);
    let rule = Rule::new(10);
    let n = g.n_eta();
    let mut tail = vec![0.0; n];
    for i in (0..n - 1).rev() {
        tail[i] = tail[i + 1] + rule.integrate(g.eta[i], g.eta[i + 1], |y| p(y) * 3.0 * s_q(y));
    }
    let a: Vec<f64> = (0..n).map(|i| -tail[i] / p(g.eta[i])).collect();
    let da = (0..n).map(|i| -mean_force(&geo, g.eta[i]) * a[i] + 3.0 * s_q(g.eta[i])).collect();
    Ok(HydroLift { eta: g.eta.clone(), a, da })
}

/// `-(1/4pi) int int (sin(phi) d_eta f2 + F cos(phi) d_phi f2) cos(phi) + S_Q`
/// for `f2 = a sin(phi)` under the grid's angular quadrature, at every depth.
pub fn hydro_moment_residual(problem: &MilneProblem, lift: &HydroLift, s_q: &dyn Fn(f64) -> f64) -> Result<Vec<f64>> {
    let g = problem.grid()?;
    let geo = problem.geometry();
    let mut out = Vec::with_capacity(g.n_eta());
    for (i, &eta) in lift.eta.iter().enumerate() {
        let mut m = 0.0;
        for j in 0..g.n_phi() {
            let (s, c) = (g.sin_phi[j], g.cos_phi[j]);
            for l in 0..g.n_psi() {
                let (s2, c2) = psi_weights(g.psi[l]);
                let force = geo.force(eta, s2, c2);
                // d_eta f2 = a' sin(phi), d_phi f2 = a cos(phi).
                m += g.w_phi[j] * g.w_psi[l] * (s * lift.da[i] * s + force * c * lift.a[i] * c);
            }
        }
        out.push(-m / FOUR_PI + s_q(eta));
    }
    Ok(out)
}

/// `eps (dR1 sin^2 psi / (R1 - eps eta)^2 + dR2 cos^2 psi / (R2 - eps eta)^2)`.
fn tangential_factor(geo: &LocalGeometry, prof: &CurvatureProfile, tau: [f64; 2], i: usize, eta: f64, psi: f64) -> f64 {
    let (d1, d2) = prof.d_radii(tau, i);
    let (r1, r2) = prof.radii(tau);
    let e = geo.eps;
    let (s2, c2) = psi_weights(psi);
    let t1 = if d1 == 0.0 { 0.0 } else { d1 * s2 / (r1 - e * eta).powi(2) };
    let t2 = if d2 == 0.0 { 0.0 } else { d2 * c2 / (r2 - e * eta).powi(2) };
    e * (t1 + t2)
}

/// `w = d v / d tau_i` for `v = f - f_L`.
///
/// Differentiating the equation gives the same Milne operator with source
/// `dS/dtau_i - eps (dR1 sin^2 psi/(R1-eps eta)^2 + dR2 cos^2 psi/(R2-eps eta)^2) cos(phi) d_phi v`.
/// The in-flow datum of `w` is `-d f_L / d tau_i`, a constant that is fixed by
/// `w_L = 0`: the solve uses zero datum and then removes the limit, which is
/// the constant solution of the homogeneous problem.
pub fn solve_tangential(problem: &MilneProblem, base: &MilneSolution, i: usize) -> Result<MilneSolution> {
    if i > 1 {
        return Err(Error::InvalidParameter(format!("tangent index {i}")));
    }
    let grid = base.f.grid.clone();
    let geo = problem.geometry();
    let dphi = base.deviation().d_phi();
    let mut src = Field::zeros(grid.clone());
    for a in 0..grid.n_eta() {
        for l in 0..grid.n_psi() {
            let t = tangential_factor(&geo, &problem.prof, problem.tau, i, grid.eta[a], grid.psi[l]);
            if t == 0.0 {
                continue;
            }
            for j in 0..grid.n_phi() {
                src.set(a, j, l, -t * grid.cos_phi[j] * dphi.get(a, j, l));
            }
        }
    }
    let sub = problem
        .clone()
        .with_datum_arc(Arc::new(DatumPreset::Zero))
        .with_source_arc(Arc::new(GridSource::new(src)));
    let mut w = solve_inflow(&sub)?;
    let lim = w.f_l;
    w.f = w.f.map(|v| v - lim);
    for v in &mut w.fbar {
        *v -= lim;
    }
    w.f_l_tail -= lim;
    w.f_l = estimate_fl(&w);
    w.boundary_shift = -lim;
    Ok(w)
}

/// `w' = d v / d psi`: no angular-average term, so a single `K + T` sweep with
/// datum `dh/dpsi` and source
/// `dS/dpsi + eps sin(2 psi) (1/(R1-eps eta) - 1/(R2-eps eta)) cos(phi) d_phi v`.
pub fn solve_psi_derivative(problem: &MilneProblem, base: &MilneSolution) -> Result<MilneSolution> {
    let grid = base.f.grid.clone();
    let geo = problem.geometry();
    let kernel = Kernel::new(grid.clone(), geo);
    let dphi = base.f.d_phi();
    let e = geo.eps;
    let mut src = Field::zeros(grid.clone());
    for a in 0..grid.n_eta() {
        let eta = grid.eta[a];
        let coeff = e * (geo.k1 / (1.0 - e * eta * geo.k1) - geo.k2 / (1.0 - e * eta * geo.k2));
        for j in 0..grid.n_phi() {
            for l in 0..grid.n_psi() {
                let psi = grid.psi[l];
                let p = SourcePoint {
                    eta,
                    lo: a,
                    frac: 0.0,
                    sin_phi: grid.sin_phi[j],
                    cos_phi: grid.cos_phi[j],
                    psi,
                    l,
                };
                let v = problem.source.d_psi(&p) + coeff * (2.0 * psi).sin() * grid.cos_phi[j] * dphi.get(a, j, l);
                src.set(a, j, l, v);
            }
        }
    }
    let datum = PsiDerivativeDatum(problem.h.clone());
    let source = GridSource::new(src);
    let src_opt: Option<&dyn Source> = if source.is_zero() { None } else { Some(&source) };
    let f = kernel.evaluate(Some(&datum), 0.0, None, src_opt);
    f.check_finite("psi derivative sweep")?;
    let fbar = bar(&f);
    let f_l = beta_at(&f, grid.n_eta() - 1) / SIN_SQ_NORM;
    let f_l_tail = tail_mean(&grid, &fbar);
    Ok(MilneSolution {
        f,
        fbar,
        f_l,
        f_l_tail,
        iterations: 1,
        residual_history: vec![],
        equation_residual: 0.0,
        boundary_shift: 0.0,
        problem: problem.clone(),
    })
}
