//! Discrete mild formulation `f = K[h] + T[fbar + S]`.
//!
//! Every grid node `(eta_i, +-phi_j, psi_l)` owns one characteristic path that
//! enters at `eta = 0`, climbs through the depth nodes to its turning depth or
//! to `L`, and (for `-phi`) comes back down to `eta_i`. The path is sampled at
//! the depth nodes it crosses plus the turning or reflection point. Between
//! samples `Q = fbar + S` is linear in optical depth, so each segment
//! contributes with exact exponential weights. The boundary weight plus all
//! segment weights telescopes to one, which makes every sweep a convex
//! combination of `h` and `Q`: the maximum principle and the exactness on
//! constants hold by construction.

use std::sync::Arc;

use rayon::prelude::*;

use crate::characteristics::PathGeometry;
use crate::geometry::{psi_weights, LocalGeometry};
use crate::phase_grid::{Field, PhaseGrid, FOUR_PI};
use crate::presets::{Datum, Source, SourcePoint};
use crate::quadrature::Rule;

/// Segments farther than this optical depth from the evaluation point are dropped.
const OPTICAL_CUTOFF: f64 = 45.0;
const CELL_RULE: usize = 4;
/// Upper bound on the pieces one depth cell is split into along a path.
const MAX_PIECES: usize = 32;

/// Cells whose far end is at least this many cell widths below the turning
/// depth use the tabulated rule without the square-root substitution.
const FAR_CELLS: f64 = 4.0;

/// Azimuths sharing the same characteristic geometry, with `e^{2V}`
/// tabulated at the depth nodes and at the cell quadrature nodes.
#[derive(Debug, Clone)]
pub struct PsiClass {
    pub s2: f64,
    pub c2: f64,
    pub members: Vec<usize>,
    e2v_node: Vec<f64>,
    e2v_cell: Vec<f64>,
}

impl PsiClass {
    fn new(s2: f64, c2: f64, members: Vec<usize>, grid: &PhaseGrid, geo: &LocalGeometry, rule: &Rule) -> Self {
        let e2v = |x: f64| (2.0 * geo.potential(x, s2, c2)).exp();
        let e2v_node = grid.eta.iter().map(|&x| e2v(x)).collect();
        let mut e2v_cell = Vec::with_capacity(grid.n_eta().saturating_sub(1) * rule.x.len());
        for c in grid.eta.windows(2) {
            let (mid, half) = (0.5 * (c[0] + c[1]), 0.5 * (c[1] - c[0]));
            e2v_cell.extend(rule.x.iter().map(|&x| e2v(mid + half * x)));
        }
        PsiClass { s2, c2, members, e2v_node, e2v_cell }
    }

    /// `(sin, cos)` of the polar angle at node `m` for energy `e`.
    #[inline]
    fn angles_at(&self, e: f64, m: usize) -> (f64, f64) {
        let c2 = e * e * self.e2v_node[m];
        ((1.0 - c2).max(0.0).sqrt(), c2.sqrt().min(1.0))
    }

    /// Optical length of cell `k` of width `h` for energy `e`.
    #[inline]
    fn cell_length(&self, e: f64, k: usize, h: f64, rule: &Rule) -> f64 {
        let n = rule.x.len();
        let w = &self.e2v_cell[k * n..(k + 1) * n];
        let e2 = e * e;
        let mut s = 0.0;
        for (wq, &v) in rule.w.iter().zip(w) {
            s += wq / (1.0 - e2 * v).sqrt();
        }
        0.5 * h * s
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PathPt {
    m: usize,
    frac: f64,
    eta: f64,
    sin: f64,
    cos: f64,
    tau: f64,
}

#[derive(Debug, Default)]
struct Path {
    pts: Vec<PathPt>,
    w_plus: Vec<f64>,
    w_minus: Vec<f64>,
    k_plus: f64,
    k_minus: f64,
    /// Index of the `+phi` evaluation point; the `-phi` one is the last.
    plus_end: usize,
    phi0: f64,
}

/// Linear operator of one sweep in the coupling variable `fbar`:
/// `bar(f) = a fbar + b + c kappa` where `c` shifts the in-flow datum.
#[derive(Debug, Clone)]
pub struct System {
    pub n: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Outgoing flux at `eta = 0`: `P[f](0) = flux_row . fbar + flux_b + c flux_kappa`.
    pub flux_row: Vec<f64>,
    pub flux_b: f64,
    pub flux_kappa: f64,
    /// `sup |h|` over all entry angles of the assembled paths.
    pub h_sup: f64,
}

impl System {
    #[allow(clippy::needless_range_loop)]
    pub fn apply(&self, fbar: &[f64], shift: f64, out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            let mut s = 0.0;
            for (aij, x) in row.iter().zip(fbar) {
                s += aij * x;
            }
            out[i] = s + self.b[i] + shift * self.kappa[i];
        }
    }

    pub fn flux(&self, fbar: &[f64], shift: f64) -> f64 {
        let s: f64 = self.flux_row.iter().zip(fbar).map(|(a, b)| a * b).sum();
        s + self.flux_b + shift * self.flux_kappa
    }
}

#[derive(Debug, Clone)]
pub struct Kernel {
    pub grid: Arc<PhaseGrid>,
    pub geo: LocalGeometry,
    pub classes: Vec<PsiClass>,
    rule: Rule,
}

#[inline]
fn segment_weights(d: f64) -> (f64, f64) {
    // Exact integrals of e^{-s} (1 - s/d) and e^{-s} s/d over [0, d].
    if d <= 0.0 {
        return (0.0, 0.0);
    }
    let em = -(-d).exp_m1();
    let far = if d < 1e-3 {
        d * (0.5 - d * (1.0 / 3.0 - d * (0.125 - d / 30.0)))
    } else {
        em / d - (1.0 - em)
    };
    (em - far, far)
}

impl Kernel {
    pub fn new(grid: Arc<PhaseGrid>, geo: LocalGeometry) -> Self {
        let rule = Rule::new(CELL_RULE);
        let classes = psi_classes(&grid, &geo)
            .into_iter()
            .map(|(s2, c2, members)| PsiClass::new(s2, c2, members, &grid, &geo, &rule))
            .collect();
        Kernel { grid, geo, classes, rule }
    }

    fn build_path(&self, i: usize, jp: usize, class: &PsiClass, path: &mut Path) {
        let g = &*self.grid;
        let n = g.n_eta();
        let l_end = g.slab_length;
        let (s2, c2) = (class.s2, class.c2);
        let e = self.geo.exp_neg_v(g.eta[i], s2, c2) * g.cos_phi[jp];
        let pg = PathGeometry::new(&self.geo, e, s2, c2);
        let threshold = self.geo.exp_neg_v(l_end, s2, c2);
        let wall = e <= threshold || pg.turning >= l_end;

        path.pts.clear();
        // Q is linear in time along each piece; pieces are split so that the
        // curvature of eta(s), of size |F| cos^2, costs no more than the
        // depth interpolation itself.
        let f_root = self.geo.force(0.0, s2, c2).abs().max(self.geo.force(l_end, s2, c2).abs()).sqrt();
        let mut tau = 0.0;
        let mut prev = 0.0;
        let mut plus_end = 0;
        for m in 0..n {
            let x = g.eta[m];
            if !(wall || m <= i || x < pg.turning) {
                break;
            }
            let far = pg.turning - x > FAR_CELLS * (x - prev);
            if m > 0 {
                let whole = if far {
                    class.cell_length(e, m - 1, x - prev, &self.rule)
                } else {
                    pg.optical_length(&self.rule, prev, x)
                };
                tau = self.push_pieces(&pg, path, m - 1, prev, x, whole, f_root, tau);
            }
            prev = x;
            if m == i {
                plus_end = path.pts.len();
            }
            let (sin, cos) = if far { class.angles_at(e, m) } else { (pg.sin_at(x), pg.cos_at(x)) };
            path.pts.push(PathPt { m, frac: 0.0, eta: x, sin, cos, tau });
        }
        let up = path.pts.len();
        if wall {
            let last = path.pts[up - 1];
            path.pts.push(PathPt { sin: -last.sin, ..last });
        } else {
            let t = pg.turning;
            let k = path.pts[up - 1].m;
            let whole = pg.optical_length(&self.rule, prev, t);
            tau = self.push_pieces(&pg, path, k, prev, t, whole, f_root, tau);
            let frac = ((t - g.eta[k]) / (g.eta[k + 1] - g.eta[k])).clamp(0.0, 1.0);
            path.pts.push(PathPt { m: k, frac, eta: t, sin: 0.0, cos: 1.0, tau });
        }
        // Return leg: same pieces in reverse with the polar angle mirrored.
        let top = path.pts.len() - 1 - usize::from(wall);
        for q in (plus_end..top).rev() {
            tau += path.pts[q + 1].tau - path.pts[q].tau;
            let p = path.pts[q];
            path.pts.push(PathPt { sin: -p.sin, tau, ..p });
        }
        path.plus_end = plus_end;
        let p0 = path.pts[0];
        path.phi0 = p0.sin.atan2(p0.cos);

        let len = path.pts.len();
        path.w_plus.clear();
        path.w_plus.resize(len, 0.0);
        path.w_minus.clear();
        path.w_minus.resize(len, 0.0);
        path.k_plus = weights(&path.pts, plus_end, &mut path.w_plus);
        path.k_minus = weights(&path.pts, len - 1, &mut path.w_minus);
    }

    /// Pushes the interior split points of `[a, b]` inside cell `k` and returns
    /// the optical depth at `b`; `whole` is the optical length of `[a, b]`.
    #[allow(clippy::too_many_arguments)]
    fn push_pieces(
        &self,
        pg: &PathGeometry,
        path: &mut Path,
        k: usize,
        a: f64,
        b: f64,
        whole: f64,
        f_root: f64,
        tau: f64,
    ) -> f64 {
        let g = &*self.grid;
        let cell = g.eta[k + 1] - g.eta[k];
        let pieces = ((whole * f_root / cell).ceil() as usize).clamp(1, MAX_PIECES);
        if pieces == 1 {
            return tau + whole;
        }
        // Uniform in u = sqrt(turning - xi) when a turning depth exists.
        let at = |r: f64| -> f64 {
            if pg.turning.is_finite() {
                let ua = (pg.turning - a).max(0.0).sqrt();
                let ub = (pg.turning - b).max(0.0).sqrt();
                let u = ua + r * (ub - ua);
                (pg.turning - u * u).clamp(a, b)
            } else {
                a + r * (b - a)
            }
        };
        let mut t = tau;
        let mut lo = a;
        for q in 1..pieces {
            let x = at(q as f64 / pieces as f64);
            t += pg.optical_length(&self.rule, lo, x);
            lo = x;
            let frac = ((x - g.eta[k]) / cell).clamp(0.0, 1.0);
            path.pts.push(PathPt { m: k, frac, eta: x, sin: pg.sin_at(x), cos: pg.cos_at(x), tau: t });
        }
        t + pg.optical_length(&self.rule, lo, b)
    }

    fn source_point(&self, p: &PathPt, l: usize) -> SourcePoint {
        SourcePoint {
            eta: p.eta,
            lo: p.m,
            frac: p.frac,
            sin_phi: p.sin,
            cos_phi: p.cos,
            psi: self.grid.psi[l],
            l,
        }
    }

    fn source_sum(&self, path: &Path, w: &[f64], l: usize, source: &dyn Source) -> f64 {
        let mut s = 0.0;
        for (p, &wk) in path.pts.iter().zip(w) {
            if wk != 0.0 {
                s += wk * source.value(&self.source_point(p, l));
            }
        }
        s
    }

    /// Visits every path of depth row `i`.
    fn for_each_path(&self, i: usize, path: &mut Path, mut visit: impl FnMut(usize, &PsiClass, &Path)) {
        let g = &*self.grid;
        for jp in g.half()..g.n_phi() {
            for class in &self.classes {
                self.build_path(i, jp, class, path);
                visit(jp, class, path);
            }
        }
    }

    /// One-sweep operator in `fbar`, assembled row by row.
    #[allow(clippy::type_complexity)]
    pub fn assemble(&self, datum: &dyn Datum, source: Option<&dyn Source>) -> System {
        let g = &*self.grid;
        let n = g.n_eta();
        let rows: Vec<(Vec<f64>, f64, f64, f64, Option<(Vec<f64>, f64, f64)>)> = (0..n)
            .into_par_iter()
            .map_init(Path::default, |path, i| {
                let mut row = vec![0.0; n];
                let mut b = 0.0;
                let mut kappa = 0.0;
                let mut h_sup: f64 = 0.0;
                let mut flux = if i == 0 { Some((vec![0.0; n], 0.0, 0.0)) } else { None };
                self.for_each_path(i, path, |jp, class, p| {
                    let jm = g.mirror(jp);
                    let wsum: f64 = class.members.iter().map(|&l| g.w_psi[l]).sum();
                    let c = g.w_phi[jp] / FOUR_PI;
                    for (k, pt) in p.pts.iter().enumerate() {
                        let w = p.w_plus[k] + p.w_minus[k];
                        if w != 0.0 {
                            scatter(&mut row, pt, c * wsum * w);
                        }
                    }
                    kappa += c * wsum * (p.k_plus + p.k_minus);
                    // Outgoing flux uses only the -phi node at eta = 0.
                    let fc = -g.w_phi[jm] * g.sin_phi[jm] / FOUR_PI;
                    if let Some((frow, _, fk)) = flux.as_mut() {
                        for (k, pt) in p.pts.iter().enumerate() {
                            if p.w_minus[k] != 0.0 {
                                scatter(frow, pt, fc * wsum * p.w_minus[k]);
                            }
                        }
                        *fk += fc * wsum * p.k_minus;
                    }
                    for &l in &class.members {
                        let h = datum.value(p.phi0, g.psi[l]);
                        h_sup = h_sup.max(h.abs());
                        let mut sp = p.k_plus * h;
                        let mut sm = p.k_minus * h;
                        if let Some(src) = source {
                            sp += self.source_sum(p, &p.w_plus, l, src);
                            sm += self.source_sum(p, &p.w_minus, l, src);
                        }
                        b += c * g.w_psi[l] * (sp + sm);
                        if let Some((_, fb, _)) = flux.as_mut() {
                            *fb += fc * g.w_psi[l] * sm;
                        }
                    }
                });
                (row, b, kappa, h_sup, flux)
            })
            .collect();

        let mut sys = System {
            n,
            a: Vec::with_capacity(n * n),
            b: Vec::with_capacity(n),
            kappa: Vec::with_capacity(n),
            flux_row: vec![0.0; n],
            flux_b: 0.0,
            flux_kappa: 0.0,
            h_sup: 0.0,
        };
        for (row, b, kappa, h_sup, flux) in rows {
            sys.a.extend_from_slice(&row);
            sys.b.push(b);
            sys.kappa.push(kappa);
            sys.h_sup = sys.h_sup.max(h_sup);
            if let Some((frow, fb, fk)) = flux {
                sys.flux_row = frow;
                sys.flux_b = fb;
                sys.flux_kappa = fk;
            }
        }
        sys
    }

    /// Evaluates `K[h + shift] + T[fbar + S]` at every grid node.
    pub fn evaluate(&self, datum: Option<&dyn Datum>, shift: f64, fbar: Option<&[f64]>, source: Option<&dyn Source>) -> Field {
        let g = &*self.grid;
        let n = g.n_eta();
        let per_row = g.n_phi() * g.n_psi();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map_init(Path::default, |path, i| {
                let mut out = vec![0.0; per_row];
                self.for_each_path(i, path, |jp, class, p| {
                    let jm = g.mirror(jp);
                    let (qp, qm) = match fbar {
                        Some(fb) => (interp_sum(&p.pts, &p.w_plus, fb), interp_sum(&p.pts, &p.w_minus, fb)),
                        None => (0.0, 0.0),
                    };
                    for &l in &class.members {
                        let h = datum.map_or(0.0, |d| d.value(p.phi0, g.psi[l])) + shift;
                        let mut vp = p.k_plus * h + qp;
                        let mut vm = p.k_minus * h + qm;
                        if let Some(src) = source {
                            vp += self.source_sum(p, &p.w_plus, l, src);
                            vm += self.source_sum(p, &p.w_minus, l, src);
                        }
                        out[jp * g.n_psi() + l] = vp;
                        out[jm * g.n_psi() + l] = vm;
                    }
                });
                out
            })
            .collect();
        let mut values = Vec::with_capacity(g.len());
        for r in rows {
            values.extend_from_slice(&r);
        }
        Field { grid: self.grid.clone(), values }
    }

    /// Optical length of the `+phi_j` path from the wall up to node `i`.
    pub fn optical_depth_to(&self, i: usize, jp: usize, psi: f64) -> f64 {
        let (s2, c2) = psi_weights(psi);
        let class = PsiClass::new(s2, c2, vec![], &self.grid, &self.geo, &self.rule);
        let mut path = Path::default();
        self.build_path(i, jp, &class, &mut path);
        path.pts[path.plus_end].tau
    }
}

#[inline]
fn scatter(row: &mut [f64], pt: &PathPt, w: f64) {
    if pt.frac == 0.0 {
        row[pt.m] += w;
    } else {
        row[pt.m] += w * (1.0 - pt.frac);
        row[pt.m + 1] += w * pt.frac;
    }
}

#[inline]
fn interp_sum(pts: &[PathPt], w: &[f64], fbar: &[f64]) -> f64 {
    let mut s = 0.0;
    for (p, &wk) in pts.iter().zip(w) {
        if wk != 0.0 {
            let v = if p.frac == 0.0 { fbar[p.m] } else { fbar[p.m] + p.frac * (fbar[p.m + 1] - fbar[p.m]) };
            s += wk * v;
        }
    }
    s
}

/// Point weights of the evaluation at `pts[end]`; returns the boundary weight `e^{-tau}`.
fn weights(pts: &[PathPt], end: usize, w: &mut [f64]) -> f64 {
    let t_end = pts[end].tau;
    // e = e^{-(t_end - tau_s)}, carried down the path.
    let mut e = 1.0;
    for s in (1..=end).rev() {
        if t_end - pts[s].tau > OPTICAL_CUTOFF {
            break;
        }
        let d = pts[s].tau - pts[s - 1].tau;
        let (near, far) = segment_weights(d);
        w[s] += e * near;
        w[s - 1] += e * far;
        e *= 1.0 - (near + far);
    }
    (-t_end).exp()
}

/// Groups azimuth nodes by identical `sin^2(psi)`; a single class when the
/// two curvatures agree and the geometry is `psi`-independent.
pub fn psi_classes(grid: &PhaseGrid, geo: &LocalGeometry) -> Vec<(f64, f64, Vec<usize>)> {
    if geo.k1 == geo.k2 {
        return vec![(1.0, 0.0, (0..grid.n_psi()).collect())];
    }
    let mut classes: Vec<(f64, f64, Vec<usize>)> = Vec::new();
    for (l, &psi) in grid.psi.iter().enumerate() {
        let (s2, c2) = psi_weights(psi);
        match classes.iter_mut().find(|c| (c.0 - s2).abs() < 1e-13) {
            Some(c) => c.2.push(l),
            None => classes.push((s2, c2, vec![l])),
        }
    }
    classes
}
