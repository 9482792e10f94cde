//! Ray tracing through sampled lens geometry.
//!
//! Uses only the refraction kernel and the sampled profiles: faces are rebuilt as cubic
//! Hermite curves with finite-difference tangents, never from the map or solver state.

use rayon::prelude::*;
use serde::Serialize;

use crate::collimated::{lower_normal, LowerProfileCartesian, UpperProfile};
use crate::error::{LensError, Result};
use crate::numerics::{fine_grid_derivative, hermite, UniformGrid};
use crate::pointsource::{Color, LensConditions, LensGeometry};
use crate::refraction::{cross2, polar_normal, refract, Direction2, MediumPair};


/// Planar curve through samples at uniform parameters.
#[derive(Debug, Clone)]
pub struct ProfileCurve {
    grid: UniformGrid,
    pts: Vec<[f64; 2]>,
    tan: Vec<[f64; 2]>,
}

impl ProfileCurve {
    pub fn new(t: &[f64], pts: &[[f64; 2]]) -> Self {
        let grid = UniformGrid::from_nodes(t);
        let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p[1]).collect();
        let (dx, dy) = if pts.len() > 1 {
            (fine_grid_derivative(&xs, grid.h), fine_grid_derivative(&ys, grid.h))
        } else {
            (vec![0.0], vec![0.0])
        };
        Self { grid, pts: pts.to_vec(), tan: dx.into_iter().zip(dy).map(|(a, b)| [a, b]).collect() }
    }

    /// Point and tangent at parameter `s`.
    pub fn eval(&self, s: f64) -> Option<([f64; 2], [f64; 2])> {
        let (k, u) = self.grid.locate(s, 1e-9 * self.grid.h)?;
        Some(self.eval_segment(k, u))
    }

    /// Like [`ProfileCurve::eval`], continuing the end segments by up to half a cell.
    fn eval_extended(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let x = (s - self.grid.t0) / self.grid.h;
        let k = (x.floor().max(0.0) as usize).min(self.pts.len() - 2);
        self.eval_segment(k, x - k as f64)
    }

    fn eval_segment(&self, k: usize, u: f64) -> ([f64; 2], [f64; 2]) {
        let h = self.grid.h;
        let (x, dx) = hermite(u, h, self.pts[k][0], self.pts[k + 1][0], self.tan[k][0], self.tan[k + 1][0]);
        let (y, dy) = hermite(u, h, self.pts[k][1], self.pts[k + 1][1], self.tan[k][1], self.tan[k + 1][1]);
        ([x, y], [dx, dy])
    }

    fn param(&self, k: usize) -> f64 {
        self.grid.t0 + k as f64 * self.grid.h
    }

    /// First crossing of the ray `origin + lambda dir`, `lambda > 0`: parameter, point and
    /// residual `|dir x (f(s) - origin)|`.
    pub fn intersect(&self, origin: [f64; 2], dir: &Direction2) -> Result<(f64, [f64; 2], f64)> {
        let d = dir.as_array();
        let g = |p: [f64; 2]| cross2(d, [p[0] - origin[0], p[1] - origin[1]]);
        let along = |p: [f64; 2]| d[0] * (p[0] - origin[0]) + d[1] * (p[1] - origin[1]);
        let n = self.pts.len();
        if n < 2 {
            return Err(LensError::MissedSurface);
        }
        let half = 0.5 * self.grid.h;
        let mut params = Vec::with_capacity(n + 2);
        params.push(self.param(0) - half);
        params.extend((0..n).map(|k| self.param(k)));
        params.push(self.param(n - 1) + half);
        let gv: Vec<f64> = params.iter().map(|s| g(self.eval_extended(*s).0)).collect();
        let mut best: Option<(f64, f64, [f64; 2], f64)> = None;
        let mut consider = |s: f64, p: [f64; 2], r: f64| {
            let lam = along(p);
            if lam > 0.0 && best.is_none_or(|b| lam < b.0) {
                best = Some((lam, s, p, r));
            }
        };
        for k in 0..params.len() - 1 {
            let (g0, g1) = (gv[k], gv[k + 1]);
            if g0 == 0.0 {
                consider(params[k], self.eval_extended(params[k]).0, 0.0);
                continue;
            }
            if g0 * g1 > 0.0 {
                continue;
            }
            let (mut lo, mut hi) = (params[k], params[k + 1]);
            let mut glo = g0;
            let mut mid = lo;
            let mut mid_pt = self.eval_extended(lo).0;
            let mut mid_g = g0;
            for _ in 0..200 {
                mid = 0.5 * (lo + hi);
                mid_pt = self.eval_extended(mid).0;
                mid_g = g(mid_pt);
                if mid_g == 0.0 || hi - lo <= 4.0 * f64::EPSILON * mid.abs().max(self.grid.h) {
                    break;
                }
                if (mid_g > 0.0) == (glo > 0.0) {
                    lo = mid;
                    glo = mid_g;
                } else {
                    hi = mid;
                }
            }
            consider(mid, mid_pt, mid_g.abs());
        }
        best.map(|b| (b.1, b.2, b.3)).ok_or(LensError::MissedSurface)
    }

    /// Unit normal at `s`, oriented along `toward`.
    pub fn normal(&self, s: f64, toward: &Direction2) -> Result<Direction2> {
        if self.pts.len() < 2 {
            return Err(LensError::MissedSurface);
        }
        let (_, tan) = self.eval_extended(s);
        let nu = Direction2::new(-tan[1], tan[0])?;
        Ok(if nu.dot(toward) < 0.0 { nu.neg() } else { nu })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceResult {
    pub entry_point: [f64; 2],
    pub interior_dir: Direction2,
    pub exit_point: [f64; 2],
    pub exit_dir: Direction2,
    /// Parameter of the upper face where the ray leaves.
    pub hit_param: f64,
    pub intersection_residual: f64,
}

fn exit_through(
    curve: &ProfileCurve,
    entry: [f64; 2],
    interior: Direction2,
    n: f64,
) -> Result<TraceResult> {
    let (s, p, r) = curve.intersect(entry, &interior)?;
    let nu = curve.normal(s, &interior)?;
    let exit_dir = refract(&interior, &nu, &MediumPair::new(n, 1.0)?)?;
    Ok(TraceResult { entry_point: entry, interior_dir: interior, exit_point: p, exit_dir, hit_param: s, intersection_residual: r })
}

/// Tracer for a sampled point-source lens.
#[derive(Debug, Clone)]
pub struct PointSourceTracer<'a> {
    geom: &'a LensGeometry,
    grid: UniformGrid,
    rho_prime: Vec<f64>,
    red: ProfileCurve,
    blue: ProfileCurve,
}

impl<'a> PointSourceTracer<'a> {
    pub fn new(geom: &'a LensGeometry) -> Self {
        let grid = UniformGrid::from_nodes(&geom.t);
        let rho_prime =
            if geom.len() > 1 { fine_grid_derivative(&geom.rho, grid.h) } else { vec![0.0] };
        Self {
            geom,
            grid,
            rho_prime,
            red: ProfileCurve::new(&geom.t, &geom.f_r),
            blue: ProfileCurve::new(&geom.t, &geom.f_b),
        }
    }

    pub fn curve(&self, surface: Color) -> &ProfileCurve {
        match surface {
            Color::Red => &self.red,
            Color::Blue => &self.blue,
        }
    }

    /// Lower face radius and its derivative at `t`.
    pub fn lower(&self, t: f64) -> Result<(f64, f64)> {
        if self.geom.len() == 1 {
            return if t == self.geom.t[0] { Ok((self.geom.rho[0], 0.0)) } else { Err(LensError::MissedSurface) };
        }
        let (k, u) = self.grid.locate(t, 1e-9 * self.grid.h).ok_or(LensError::MissedSurface)?;
        let g = self.geom;
        Ok(hermite(u, self.grid.h, g.rho[k], g.rho[k + 1], self.rho_prime[k], self.rho_prime[k + 1]))
    }

    /// Ray leaving the origin at angle `t` with index `n`, exiting through the face sampled
    /// by `surface`.
    pub fn trace_with_index(&self, t: f64, n: f64, surface: Color) -> Result<TraceResult> {
        let (rho, drho) = self.lower(t)?;
        let x = Direction2::from_angle(t);
        let nu = polar_normal(rho, drho, t)?;
        let interior = refract(&x, &nu, &MediumPair::new(1.0, n)?)?;
        let entry = [rho * t.sin(), rho * t.cos()];
        if self.geom.len() == 1 {
            let p = self.geom.surface(surface)[0];
            let exit_dir = refract(&interior, &Direction2::E, &MediumPair::new(n, 1.0)?)?;
            return Ok(TraceResult { entry_point: entry, interior_dir: interior, exit_point: p, exit_dir, hit_param: 0.0, intersection_residual: 0.0 });
        }
        exit_through(self.curve(surface), entry, interior, n)
    }

    pub fn trace(&self, t: f64, color: Color, surface: Color) -> Result<TraceResult> {
        self.trace_with_index(t, self.geom.index(color), surface)
    }
}

/// Traces the ray of `color` from angle `t` through that colour's own face.
pub fn trace_point_source(geom: &LensGeometry, t: f64, color: Color) -> Result<TraceResult> {
    PointSourceTracer::new(geom).trace(t, color, color)
}

/// Traces a vertical ray entering the lower face at abscissa `x0` with index `n`.
pub fn trace_collimated(lower: &LowerProfileCartesian, upper: &UpperProfile, x0: f64, n: f64) -> Result<TraceResult> {
    let (u, du) = lower.eval(x0).ok_or(LensError::MissedSurface)?;
    let interior = refract(&Direction2::E, &lower_normal(du), &MediumPair::new(1.0, n)?)?;
    let curve = ProfileCurve::new(&upper.t, &upper.f);
    exit_through(&curve, [x0, u], interior, n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationConditions {
    #[serde(flatten)]
    pub lens: LensConditions,
    pub traces_complete: bool,
    pub reciprocal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub max_angle_err_r: f64,
    pub max_angle_err_b: f64,
    pub reparam_sup: f64,
    pub conditions: VerificationConditions,
    pub pass: bool,
    pub angle_tol: f64,
    pub reparam_tol: f64,
    pub worst_t_r: f64,
    pub worst_t_b: f64,
    pub reparam_worst_t: f64,
    /// Largest `|s - phi(t)|` where `s` is the parameter at which the red ray from `t`
    /// meets the blue-parametrized face.
    pub reciprocal_sup: f64,
    pub max_intersection_residual: f64,
    pub trace_failures: usize,
    pub nodes: usize,
    pub degenerate: bool,
}

struct NodeTrace {
    err_r: f64,
    err_b: f64,
    reparam: f64,
    reciprocal: f64,
    residual: f64,
    failures: usize,
}

/// Traces every node of a lens and checks the exit directions, the shared exit points and
/// the lens conditions. Angles are compared against `tol`, exit points against
/// `1e-6 (rho0 + d0)`.
pub fn verify_design(geom: &LensGeometry, tol: f64) -> VerificationReport {
    let tracer = PointSourceTracer::new(geom);
    let e = Direction2::E;
    let scale = geom.rho0 + geom.d0;
    let h = if geom.len() > 1 { geom.t[1] - geom.t[0] } else { 0.0 };
    let nodes: Vec<NodeTrace> = (0..geom.len())
        .into_par_iter()
        .map(|i| {
            let t = geom.t[i];
            let mut failures = 0;
            let mut residual = 0.0f64;
            let mut angle = |color: Color| match tracer.trace(t, color, color) {
                Ok(r) => {
                    residual = residual.max(r.intersection_residual);
                    r.exit_dir.angle_to(&e)
                }
                Err(_) => {
                    failures += 1;
                    std::f64::consts::PI
                }
            };
            let err_r = angle(Color::Red);
            let err_b = angle(Color::Blue);
            let (reparam, reciprocal) = if geom.len() == 1 {
                let d = (geom.f_r[0][0] - geom.f_b[0][0]).hypot(geom.f_r[0][1] - geom.f_b[0][1]);
                (d, geom.phi[0].abs())
            } else {
                let reparam = match tracer.blue.eval(geom.phi[i]) {
                    Some((p, _)) => (geom.f_r[i][0] - p[0]).hypot(geom.f_r[i][1] - p[1]),
                    None => f64::INFINITY,
                };
                let reciprocal = match tracer.trace(t, Color::Red, Color::Blue) {
                    Ok(r) => (r.hit_param - geom.phi[i]).abs(),
                    Err(_) => {
                        failures += 1;
                        f64::INFINITY
                    }
                };
                (reparam, reciprocal)
            };
            NodeTrace { err_r, err_b, reparam, reciprocal, residual, failures }
        })
        .collect();

    let argmax = |f: &dyn Fn(&NodeTrace) -> f64| -> (f64, f64) {
        let mut best = (0.0f64, 0.0);
        for (i, nd) in nodes.iter().enumerate() {
            let v = f(nd);
            if v > best.0 || v.is_nan() {
                best = (v, geom.t[i]);
            }
        }
        best
    };
    let (max_r, worst_t_r) = argmax(&|n| n.err_r);
    let (max_b, worst_t_b) = argmax(&|n| n.err_b);
    let (reparam_sup, reparam_worst_t) = argmax(&|n| n.reparam);
    let (reciprocal_sup, _) = argmax(&|n| n.reciprocal);
    let (max_residual, _) = argmax(&|n| n.residual);
    let trace_failures: usize = nodes.iter().map(|n| n.failures).sum();
    let reparam_tol = 1e-6 * scale;
    let conditions = VerificationConditions {
        lens: geom.conditions(),
        traces_complete: trace_failures == 0,
        reciprocal: reciprocal_sup <= 0.5 * h || geom.len() == 1,
    };
    let pass = max_r <= tol
        && max_b <= tol
        && reparam_sup <= reparam_tol
        && max_residual <= 1e-10 * scale
        && conditions.lens.all()
        && conditions.traces_complete
        && conditions.reciprocal;
    VerificationReport {
        max_angle_err_r: max_r,
        max_angle_err_b: max_b,
        reparam_sup,
        conditions,
        pass,
        angle_tol: tol,
        reparam_tol,
        worst_t_r,
        worst_t_b,
        reparam_worst_t,
        reciprocal_sup,
        max_intersection_residual: max_residual,
        trace_failures,
        nodes: geom.len(),
        degenerate: geom.len() == 1,
    }
}
