//! Diffusive limit on the unit ball: the leading interior solution, the
//! boundary-layer datum it induces, and a backward Monte Carlo solver of
//!
//! `eps w . grad u + u - ubar = 0`, `u = P[u] + eps g` on incoming directions,
//!
//! with `P[u](x) = (1/pi) int_{w.n > 0} u(x, w) (w . n) dw`.
//!
//! Polar angles on the sphere are measured from `e1`, so `cos(theta) = x_1`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::presets::Datum;

pub type Vec3 = [f64; 3];

#[inline]
fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn axpy(x: Vec3, s: f64, w: Vec3) -> Vec3 {
    [x[0] + s * w[0], x[1] + s * w[1], x[2] + s * w[2]]
}

/// Unit vectors `t1, t2` completing `n` to a right-handed orthonormal frame.
pub fn tangent_frame(n: Vec3) -> (Vec3, Vec3) {
    let a = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let t1 = {
        let p = axpy(a, -dot(a, n), n);
        let l = norm(p);
        [p[0] / l, p[1] / l, p[2] / l]
    };
    let t2 = [n[1] * t1[2] - n[2] * t1[1], n[2] * t1[0] - n[0] * t1[2], n[0] * t1[1] - n[1] * t1[0]];
    (t1, t2)
}

/// Boundary data on the sphere, independent of the direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallDatum {
    Zero,
    /// `g = cos(theta)`.
    CosTheta,
    /// `g = P2(cos(theta)) = (3 cos^2(theta) - 1) / 2`.
    LegendreP2,
}

impl BallDatum {
    #[inline]
    pub fn value(&self, x: Vec3) -> f64 {
        let c = x[0] / norm(x);
        match self {
            BallDatum::Zero => 0.0,
            BallDatum::CosTheta => c,
            BallDatum::LegendreP2 => 0.5 * (3.0 * c * c - 1.0),
        }
    }

    /// `int_{sphere} int_{w.n<0} g (w.n) dw dS = -pi int_{sphere} g dS`, by a
    /// Gauss rule in `cos(theta)` (exact for these polynomial families).
    pub fn compatibility_defect(&self) -> f64 {
        let rule = crate::quadrature::Rule::new(8);
        let zonal = rule.integrate(-1.0, 1.0, |c| self.value([c, (1.0 - c * c).max(0.0).sqrt(), 0.0]));
        -PI * 2.0 * PI * zonal
    }
}

/// Coefficient relating the Neumann data of the interior solution to
/// `int int_{sin phi > 0} g sin(phi) cos(phi) dphi dpsi = pi g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NeumannScaling {
    /// `dU0/dn = (1/pi^2) int int g sin cos = g / pi`.
    #[default]
    InversePi,
    /// `dU0/dn = (3/(4 pi)) int int g sin cos = 3 g / 4`: the balance of the
    /// diffusive flux `(4 pi / 3) dU0/dn` against the boundary influx `pi g`.
    FluxBalance,
}

impl NeumannScaling {
    /// Factor `c` in `dU0/dn = c g`.
    pub fn factor(&self) -> f64 {
        match self {
            NeumannScaling::InversePi => 1.0 / PI,
            NeumannScaling::FluxBalance => 0.75,
        }
    }
}

/// Monte Carlo switches; both on for the transport problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McMode {
    /// Collisions redirect the particle; when off they absorb it.
    pub scattering: bool,
    /// Boundary hits re-emit by the cosine law; when off the first hit ends the history.
    pub reflection: bool,
}

impl Default for McMode {
    fn default() -> Self {
        McMode { scattering: true, reflection: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallProblem {
    pub epsilon: f64,
    pub g_mode: BallDatum,
    pub n_samples: usize,
    pub seed: u64,
    pub tally_points: Vec<Vec3>,
    /// History length in collision times.
    pub t_max: f64,
    /// Boundary hits per cycle before truncation.
    pub k_max: usize,
    pub neumann: NeumannScaling,
    pub mode: McMode,
}

/// Default tally probes: four depths on the polar axis and four off-axis points.
pub fn default_tallies() -> Vec<Vec3> {
    vec![
        [0.5, 0.0, 0.0],
        [0.25, 0.0, 0.0],
        [-0.25, 0.0, 0.0],
        [-0.5, 0.0, 0.0],
        [0.3, 0.3, 0.0],
        [0.3, 0.0, -0.3],
        [-0.3, 0.0, 0.3],
        [0.0, 0.0, 0.0],
    ]
}

/// `40 + 5 / eps^2` collision times.
pub fn default_t_max(eps: f64) -> f64 {
    40.0 + 5.0 / (eps * eps)
}

impl BallProblem {
    pub fn new(epsilon: f64, g_mode: BallDatum, n_samples: usize, seed: u64) -> Result<Self> {
        let p = BallProblem {
            epsilon,
            g_mode,
            n_samples,
            seed,
            tally_points: default_tallies(),
            t_max: default_t_max(epsilon),
            k_max: 1_000_000,
            neumann: NeumannScaling::default(),
            mode: McMode::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Domain(format!("ball epsilon {} outside (0, 1)", self.epsilon)));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be positive".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidParameter("t_max must be positive".into()));
        }
        for x in &self.tally_points {
            if !(norm(*x) < 1.0) {
                return Err(Error::Domain(format!("tally point {x:?} not interior")));
            }
        }
        let d = self.g_mode.compatibility_defect();
        if d.abs() > 1e-10 {
            return Err(Error::Incompatible { defect: d });
        }
        Ok(())
    }
}

/// Leading interior solution `U0(x)`, a solid harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InteriorU0 {
    pub g_mode: BallDatum,
    pub scaling: NeumannScaling,
}

impl InteriorU0 {
    pub fn value(&self, x: Vec3) -> f64 {
        let c = self.scaling.factor();
        match self.g_mode {
            BallDatum::Zero => 0.0,
            // r cos(theta) has unit normal derivative.
            BallDatum::CosTheta => c * x[0],
            // r^2 P2 has normal derivative 2 P2.
            BallDatum::LegendreP2 => 0.5 * c * 0.5 * (3.0 * x[0] * x[0] - dot(x, x)),
        }
    }

    pub fn gradient(&self, x: Vec3) -> Vec3 {
        let c = self.scaling.factor();
        match self.g_mode {
            BallDatum::Zero => [0.0; 3],
            BallDatum::CosTheta => [c, 0.0, 0.0],
            BallDatum::LegendreP2 => {
                let a = 0.25 * c;
                [a * 4.0 * x[0], -a * 2.0 * x[1], -a * 2.0 * x[2]]
            }
        }
    }
}

pub fn interior_u0(problem: &BallProblem) -> InteriorU0 {
    InteriorU0 { g_mode: problem.g_mode, scaling: problem.neumann }
}

/// Exit time of the backward ray `x - eps t w` and its footpoint.
#[inline]
fn exit(x: Vec3, w: Vec3, eps: f64) -> (f64, Vec3) {
    let b = dot(x, w);
    let c = 1.0 - dot(x, x);
    // Larger root of eps^2 t^2 - 2 eps b t - c = 0, written without cancellation.
    let disc = (b * b + c.max(0.0)).sqrt();
    let s = if b >= 0.0 { b + disc } else { c.max(0.0) / (disc - b) };
    let t = s / eps;
    let mut y = axpy(x, -s, w);
    let r = norm(y);
    y = [y[0] / r, y[1] / r, y[2] / r];
    (t, y)
}

/// `t_b(x, w) = inf { t > 0 : x - eps t w not in the ball }` and the footpoint.
pub fn hitting_time(x: Vec3, w: Vec3, eps: f64) -> Result<(f64, Vec3)> {
    let r = norm(x);
    if !(r < 1.0) {
        return Err(Error::Domain(format!("point {x:?} not interior")));
    }
    if ((norm(w) - 1.0).abs()) > 1e-12 {
        return Err(Error::Domain("direction is not a unit vector".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Domain("epsilon must be positive".into()));
    }
    Ok(exit(x, w, eps))
}

/// Direction `w` with `w . n > 0` drawn from the density `(w . n) / pi`.
#[inline]
pub fn cosine_direction<R: Rng + ?Sized>(n: Vec3, rng: &mut R) -> Vec3 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let mu = u1.sqrt();
    let st = (1.0 - u1).max(0.0).sqrt();
    let a = 2.0 * PI * u2;
    let (t1, t2) = tangent_frame(n);
    let (sa, ca) = a.sin_cos();
    [
        mu * n[0] + st * (ca * t1[0] + sa * t2[0]),
        mu * n[1] + st * (ca * t1[1] + sa * t2[1]),
        mu * n[2] + st * (ca * t1[2] + sa * t2[2]),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The boundary source ended the cycle (no re-emission).
    BoundarySource,
    Truncation,
}

/// Back-time cycle of pure boundary-to-boundary flights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRecord {
    pub times: Vec<f64>,
    /// `x_1, ..., x_k` on the sphere.
    pub footpoints: Vec<Vec3>,
    pub directions: Vec<Vec3>,
    pub termination: Termination,
}

/// `t_{k+1} = t_k + t_b(x_k, w_k)`, `x_{k+1} = x_k - eps t_b w_k`, with
/// `w_{k+1}` drawn from the cosine law at `x_{k+1}`. Stops after `k_max`
/// reflections or past `t_max`; without reflection the first hit ends it.
pub fn sample_cycle<R: Rng + ?Sized>(problem: &BallProblem, start: (Vec3, Vec3), rng: &mut R) -> Result<CycleRecord> {
    let (x0, w0) = start;
    hitting_time(x0, w0, problem.epsilon)?;
    let mut rec = CycleRecord { times: vec![0.0], footpoints: vec![], directions: vec![w0], termination: Termination::Truncation };
    let mut x = x0;
    let mut w = w0;
    let mut time = 0.0;
    loop {
        let (tb, y) = exit(x, w, problem.epsilon);
        time += tb;
        rec.times.push(time);
        rec.footpoints.push(y);
        if !problem.mode.reflection {
            rec.termination = Termination::BoundarySource;
            break;
        }
        if rec.footpoints.len() >= problem.k_max || time >= problem.t_max {
            break;
        }
        x = y;
        w = cosine_direction(y, rng);
        rec.directions.push(w);
    }
    Ok(rec)
}

/// Estimate of `ubar` at one point with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tally {
    pub x: Vec3,
    pub estimate: f64,
    pub se: f64,
    pub u0: f64,
    /// Relative standard error above 50%.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult {
    pub epsilon: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub t_max: f64,
    pub tallies: Vec<Tally>,
    /// Fraction of histories cut at `t_max` or `k_max`.
    pub truncated_fraction: f64,
}

const CHUNK: usize = 4096;

/// Score of one history started at `x` with `w` uniform on the sphere.
#[inline]
fn history<R: Rng + ?Sized>(p: &BallProblem, x0: Vec3, rng: &mut R) -> (f64, bool) {
    let eps = p.epsilon;
    let mut x = x0;
    let mut w: Vec3 = UnitSphere.sample(rng);
    let mut t = 0.0;
    let mut score = 0.0;
    let mut hits = 0usize;
    loop {
        let (tb, y) = exit(x, w, eps);
        let s: f64 = Exp1.sample(rng);
        if s < tb {
            if !p.mode.scattering {
                return (score, false);
            }
            t += s;
            if t >= p.t_max {
                return (score, true);
            }
            x = axpy(x, -eps * s, w);
            w = UnitSphere.sample(rng);
        } else {
            t += tb;
            if t >= p.t_max {
                return (score, true);
            }
            score += eps * p.g_mode.value(y);
            if !p.mode.reflection {
                return (score, false);
            }
            hits += 1;
            if hits >= p.k_max {
                return (score, true);
            }
            x = y;
            w = cosine_direction(y, rng);
        }
    }
}

/// Generator for history `h` of tally `k`: one ChaCha stream per pair.
pub fn history_rng(seed: u64, tally: usize, h: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tally as u64) << 40) | h as u64);
    rng
}

/// Sums `(n, sum, sum of squares, truncated)` of one chunk of histories.
fn chunk_sums(p: &BallProblem, k: usize, x: Vec3, lo: usize, hi: usize) -> (f64, f64, usize) {
    let (mut s, mut s2, mut tr) = (0.0, 0.0, 0);
    for h in lo..hi {
        let mut rng = history_rng(p.seed, k, h);
        let (v, cut) = history(p, x, &mut rng);
        s += v;
        s2 += v * v;
        tr += usize::from(cut);
    }
    (s, s2, tr)
}

/// Pairwise sum in a fixed tree order.
fn pairwise(v: &[(f64, f64, usize)]) -> (f64, f64, usize) {
    match v.len() {
        0 => (0.0, 0.0, 0),
        1 => v[0],
        n => {
            let (a, b) = v.split_at(n / 2);
            let (x, y) = (pairwise(a), pairwise(b));
            (x.0 + y.0, x.1 + y.1, x.2 + y.2)
        }
    }
}

/// Backward Monte Carlo estimate of `ubar` at every tally point.
///
/// Each history runs the mild formulation backwards: a collision at rate one
/// redraws the direction uniformly (the `ubar` term), a boundary hit scores
/// `eps g` and re-emits by the cosine law (the `P[u]` term). Histories are cut
/// at `t_max` collision times.
pub fn mc_solve(problem: &BallProblem) -> Result<McResult> {
    problem.validate()?;
    let u0 = interior_u0(problem);
    let n = problem.n_samples;
    let mut tallies = Vec::with_capacity(problem.tally_points.len());
    let mut truncated = 0usize;
    for (k, &x) in problem.tally_points.iter().enumerate() {
        let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK).map(|lo| (lo, (lo + CHUNK).min(n))).collect();
        let sums: Vec<(f64, f64, usize)> =
            chunks.par_iter().map(|&(lo, hi)| chunk_sums(problem, k, x, lo, hi)).collect();
        let (s, s2, tr) = pairwise(&sums);
        truncated += tr;
        let nf = n as f64;
        let mean = s / nf;
        let var = if n > 1 { ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
        let se = (var / nf).sqrt();
        let flagged = se > 0.5 * mean.abs() && se > 0.0;
        tallies.push(Tally { x, estimate: mean, se, u0: u0.value(x), flagged });
    }
    if tallies.iter().any(|t| !t.estimate.is_finite() || !t.se.is_finite()) {
        return Err(Error::NonFinite("monte carlo tally"));
    }
    Ok(McResult {
        epsilon: problem.epsilon,
        n_samples: n,
        seed: problem.seed,
        t_max: problem.t_max,
        tallies,
        truncated_fraction: truncated as f64 / (n * problem.tally_points.len().max(1)) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub epsilon: f64,
    /// `max_k |estimate_k - U0(x_k)|`.
    pub max_error: f64,
    /// Standard error of the tally attaining the maximum.
    pub max_error_se: f64,
    pub result: McResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    /// Least-squares slope of `ln max_error` against `ln eps`.
    pub slope: f64,
    /// Each error below the previous one plus one standard error of each.
    pub monotone_within_se: bool,
}

/// Runs `mc_solve` for each `eps` (strictly decreasing, at least three) with
/// the template's other settings and `t_max` rescaled to each `eps`.
pub fn convergence_study(eps_list: &[f64], template: &BallProblem) -> Result<StudyTable> {
    if eps_list.len() < 3 {
        return Err(Error::InvalidParameter("convergence study needs at least three epsilons".into()));
    }
    if eps_list.windows(2).any(|p| !(p[1] < p[0])) {
        return Err(Error::InvalidParameter("epsilons must be strictly decreasing".into()));
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for &e in eps_list {
        let p = BallProblem { epsilon: e, t_max: default_t_max(e), ..template.clone() };
        let result = mc_solve(&p)?;
        let (mut max_error, mut max_error_se) = (0.0f64, 0.0);
        for t in &result.tallies {
            let d = (t.estimate - t.u0).abs();
            if d >= max_error {
                max_error = d;
                max_error_se = t.se;
            }
        }
        rows.push(StudyRow { epsilon: e, max_error, max_error_se, result });
    }
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.max_error > 0.0).map(|r| (r.epsilon.ln(), r.max_error.ln())).collect();
    let slope = if pts.len() >= 2 { crate::diagnostics::linear_fit(&pts).0 } else { f64::NAN };
    let monotone_within_se = rows.windows(2).all(|p| p[1].max_error <= p[0].max_error + p[0].max_error_se + p[1].max_error_se);
    Ok(StudyTable { rows, slope, monotone_within_se })
}

/// Milne in-flow datum induced by `U0` at a boundary point `x0`:
/// `g1 = (w . grad U0 - P[w . grad U0]) + g` with
/// `w = -sin(phi) n + cos(phi) sin(psi) t1 + cos(phi) cos(psi) t2`, so that
/// `sin(phi) > 0` points into the ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryLayerDatum {
    /// `dU0/dn` along the outward normal.
    pub dn: f64,
    pub dt1: f64,
    pub dt2: f64,
    /// `g(x0)`.
    pub g0: f64,
}

impl BoundaryLayerDatum {
    /// `P[w . grad U0] = (1/pi) dU0/dn int_{w.n>0} (w.n)^2 dw = (2/3) dU0/dn`.
    pub fn p_term(&self) -> f64 {
        2.0 / 3.0 * self.dn
    }

    /// `int int_{sin phi > 0} g1 sin(phi) cos(phi) dphi dpsi = -(4 pi / 3) dU0/dn + pi g0`.
    pub fn compatibility_defect(&self) -> f64 {
        -4.0 * PI / 3.0 * self.dn + PI * self.g0
    }
}

impl Datum for BoundaryLayerDatum {
    fn value(&self, phi: f64, psi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        let (sp, cp) = psi.sin_cos();
        -s * self.dn + c * sp * self.dt1 + c * cp * self.dt2 - self.p_term() + self.g0
    }

    fn d_psi(&self, phi: f64, psi: f64) -> f64 {
        let c = phi.cos();
        let (sp, cp) = psi.sin_cos();
        c * cp * self.dt1 - c * sp * self.dt2
    }

    fn is_zero(&self) -> bool {
        self.dn == 0.0 && self.dt1 == 0.0 && self.dt2 == 0.0 && self.g0 == 0.0
    }
}

/// Builds `g1` at the boundary point `x0` and checks its compatibility.
pub fn boundary_layer_datum(problem: &BallProblem, u0: &InteriorU0, x0: Vec3) -> Result<BoundaryLayerDatum> {
    let r = norm(x0);
    if (r - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("{x0:?} is not on the unit sphere")));
    }
    let n = x0;
    let (t1, t2) = tangent_frame(n);
    let grad = u0.gradient(x0);
    let d = BoundaryLayerDatum { dn: dot(grad, n), dt1: dot(grad, t1), dt2: dot(grad, t2), g0: problem.g_mode.value(x0) };
    let defect = d.compatibility_defect();
    let scale = 1.0 + PI * d.g0.abs() + 4.0 * PI / 3.0 * d.dn.abs();
    if defect.abs() > 1e-8 * scale {
        return Err(Error::Incompatible { defect });
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hitting_time_examples() {
        let (t, y) = hitting_time([0.0; 3], [0.0, 1.0, 0.0], 0.1).unwrap();
        assert!((t - 10.0).abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
        let (t, y) = hitting_time([0.5, 0.0, 0.0], [1.0, 0.0, 0.0], 0.1).unwrap();
        assert!((t - 15.0).abs() < 1e-12 && (y[0] + 1.0).abs() < 1e-12);
        let (t, y) = hitting_time([0.5, 0.0, 0.0], [-1.0, 0.0, 0.0], 0.1).unwrap();
        assert!((t - 5.0).abs() < 1e-12 && (y[0] - 1.0).abs() < 1e-12);
        assert!(hitting_time([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn interior_u0_examples() {
        let p = BallProblem::new(0.2, BallDatum::CosTheta, 10, 1).unwrap();
        let u = interior_u0(&p);
        assert!((u.value([0.5, 0.2, 0.1]) - 0.5 / PI).abs() < 1e-15);
        let u2 = InteriorU0 { g_mode: BallDatum::LegendreP2, scaling: NeumannScaling::InversePi };
        // r^2 P2 / (2 pi) at r = 0.6 on the axis: 0.36 / (2 pi).
        assert!((u2.value([0.6, 0.0, 0.0]) - 0.36 / (2.0 * PI)).abs() < 1e-15);
        let z = InteriorU0 { g_mode: BallDatum::Zero, scaling: NeumannScaling::FluxBalance };
        assert_eq!(z.value([0.1, 0.2, 0.3]), 0.0);
    }

    #[test]
    fn cosine_law_normalization_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = [0.0, 0.6, 0.8];
        let m = 100_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..m {
            let w = cosine_direction(n, &mut rng);
            assert!((norm(w) - 1.0).abs() < 1e-12);
            let c = dot(w, n);
            assert!(c >= 0.0);
            s += c;
            s2 += c * c;
        }
        let mean = s / m as f64;
        let sd = (s2 / m as f64 - mean * mean).sqrt() / (m as f64).sqrt();
        assert!((mean - 2.0 / 3.0).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn cycle_geometry() {
        let p = BallProblem { k_max: 50, ..BallProblem::new(0.3, BallDatum::CosTheta, 10, 3).unwrap() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rec = sample_cycle(&p, ([0.2, 0.1, 0.0], [0.0, 0.0, 1.0]), &mut rng).unwrap();
        assert_eq!(rec.termination, Termination::Truncation);
        let mut x = [0.2, 0.1, 0.0];
        for k in 0..rec.footpoints.len() {
            let (tb, y) = exit(x, rec.directions[k], p.epsilon);
            assert_eq!(rec.times[k + 1], rec.times[k] + tb);
            let z = axpy(x, -p.epsilon * tb, rec.directions[k]);
            assert!((norm(z) - 1.0).abs() < 1e-10);
            assert!((0..3).all(|c| (z[c] - rec.footpoints[k][c]).abs() < 1e-10));
            x = y;
        }
    }

    #[test]
    fn zero_datum_gives_zero_tallies() {
        let p = BallProblem::new(0.4, BallDatum::Zero, 200, 5).unwrap();
        let r = mc_solve(&p).unwrap();
        assert!(r.tallies.iter().all(|t| t.estimate == 0.0 && t.se == 0.0));
    }

    #[test]
    fn pure_attenuation_mode() {
        // No scattering, no re-emission, g = cos(theta): E = eps <e^{-t_b} g(footpoint)>.
        let mut p = BallProblem::new(0.5, BallDatum::CosTheta, 40_000, 9).unwrap();
        p.mode = McMode { scattering: false, reflection: false };
        p.tally_points = vec![[0.3, 0.0, 0.0]];
        let r = mc_solve(&p).unwrap();
        let rule = crate::quadrature::Rule::new(40);
        let x = [0.3, 0.0, 0.0];
        // Average over w uniform on the sphere, axisymmetric about e1.
        let exact = 0.5
            * 0.5
            * rule.integrate(-1.0, 1.0, |c| {
                let w = [c, (1.0 - c * c).sqrt(), 0.0];
                let (t, y) = exit(x, w, 0.5);
                (-t).exp() * y[0]
            });
        let t = &r.tallies[0];
        assert!((t.estimate - exact).abs() < 4.0 * t.se, "{} vs {exact} (se {})", t.estimate, t.se);
    }

    #[test]
    fn boundary_layer_datum_compatibility() {
        let mut p = BallProblem::new(0.2, BallDatum::CosTheta, 10, 1).unwrap();
        p.neumann = NeumannScaling::FluxBalance;
        let u = interior_u0(&p);
        let d = boundary_layer_datum(&p, &u, [1.0, 0.0, 0.0]).unwrap();
        assert!(d.compatibility_defect().abs() < 1e-12);
        p.neumann = NeumannScaling::InversePi;
        let u = interior_u0(&p);
        assert!(matches!(boundary_layer_datum(&p, &u, [1.0, 0.0, 0.0]), Err(Error::Incompatible { .. })));
        let z = BallProblem::new(0.2, BallDatum::Zero, 10, 1).unwrap();
        let d = boundary_layer_datum(&z, &interior_u0(&z), [0.0, 1.0, 0.0]).unwrap();
        assert!(d.is_zero());
    }

    #[test]
    fn deterministic_given_seed() {
        let p = BallProblem::new(0.4, BallDatum::CosTheta, 3000, 42).unwrap();
        let a = serde_json::to_string(&mc_solve(&p).unwrap()).unwrap();
        let b = serde_json::to_string(&mc_solve(&p).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
