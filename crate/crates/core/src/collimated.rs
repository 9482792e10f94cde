//! Upper surfaces for a vertical parallel beam entering through a sampled lower face.
//!
//! Given the lower face `u(t)` and an index `n`, a vertical ray entering at `(t, u(t))`
//! refracts into `m(t)`, travels a distance `d(t)` and reaches the upper face at
//! `f(t) = (t, u(t)) + d(t) m(t)`, where the second refraction sends it into `w`.

use std::io::Write;

use serde::Serialize;

use crate::error::{LensError, Result};
use crate::numerics::{hermite, UniformGrid};
use crate::refraction::{phi_kappa, Direction2};

const GRID_REL_TOL: f64 = 1e-9;
const ANCHOR_SLOPE_TOL: f64 = 1e-10;

/// Samples of a lower face `y = u(t)` with its slope, on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerProfileCartesian {
    t: Vec<f64>,
    u: Vec<f64>,
    u_prime: Vec<f64>,
}

impl LowerProfileCartesian {
    pub fn new(t: Vec<f64>, u: Vec<f64>, u_prime: Vec<f64>) -> Result<Self> {
        if t.len() < 2 || t.len() != u.len() || t.len() != u_prime.len() {
            return Err(LensError::InvalidInput("profile needs at least two samples of equal length".into()));
        }
        let h = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        if !(h > 0.0) {
            return Err(LensError::InvalidInput("grid must be strictly increasing".into()));
        }
        for (i, w) in t.windows(2).enumerate() {
            if !(w[1] > w[0]) || ((w[1] - w[0]) - h).abs() > GRID_REL_TOL * h.max(t[i].abs()) {
                return Err(LensError::InvalidInput(format!("grid is not uniform near t = {}", w[0])));
            }
        }
        if let Some(i) = u.iter().position(|v| !(*v > 0.0)) {
            return Err(LensError::InvalidInput(format!("u must be positive, u({}) = {}", t[i], u[i])));
        }
        if u_prime.iter().any(|v| !v.is_finite()) {
            return Err(LensError::InvalidInput("slopes must be finite".into()));
        }
        Ok(Self { t, u, u_prime })
    }

    /// Samples `u` and `u'` at `n` uniform points of `[a, b]`.
    pub fn from_fn(a: f64, b: f64, n: usize, u: impl Fn(f64) -> f64, du: impl Fn(f64) -> f64) -> Result<Self> {
        if n < 2 {
            return Err(LensError::InvalidInput("need at least two samples".into()));
        }
        let t: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
        let uu = t.iter().map(|&x| u(x)).collect();
        let dd = t.iter().map(|&x| du(x)).collect();
        Self::new(t, uu, dd)
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn u_prime(&self) -> &[f64] {
        &self.u_prime
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn grid(&self) -> UniformGrid {
        UniformGrid::from_nodes(&self.t)
    }

    /// Height and slope at an arbitrary `t` from the Hermite interpolant of `(u, u')`.
    pub fn eval(&self, t: f64) -> Option<(f64, f64)> {
        let g = self.grid();
        let (k, s) = g.locate(t, 1e-12 * g.h)?;
        Some(hermite(s, g.h, self.u[k], self.u[k + 1], self.u_prime[k], self.u_prime[k + 1]))
    }

    /// Slope at `t0`, linear between samples.
    pub fn slope_at(&self, t0: f64) -> Option<f64> {
        let g = self.grid();
        let (k, s) = g.locate(t0, 1e-12 * g.h)?;
        Some((1.0 - s) * self.u_prime[k] + s * self.u_prime[k + 1])
    }

    /// Upward unit normal `(-u', 1) / sqrt(1 + u'^2)` at sample `i`.
    pub fn normal(&self, i: usize) -> Direction2 {
        lower_normal(self.u_prime[i])
    }
}

pub(crate) fn lower_normal(slope: f64) -> Direction2 {
    let r = (1.0 + slope * slope).sqrt();
    Direction2::new(-slope / r, 1.0 / r).expect("finite slope")
}

/// Upper face built over a lower face for one index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpperProfile {
    pub n: f64,
    pub w: Direction2,
    pub c: f64,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub f: Vec<[f64; 2]>,
    pub d: Vec<f64>,
    pub m: Vec<Direction2>,
}

impl UpperProfile {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        wtr.write_record(["t", "u", "fx", "fy", "d", "mx", "my"])?;
        for i in 0..self.len() {
            let row = [self.t[i], self.u[i], self.f[i][0], self.f[i][1], self.d[i], self.m[i].x(), self.m[i].y()];
            wtr.write_record(row.iter().map(|v| crate::fmt_f64(*v)))?;
        }
        wtr.flush()
    }
}

/// Builds the upper face refracting every vertical ray into `w`, with `d` fixed by the constant `c`.
pub fn build_upper_surface(lower: &LowerProfileCartesian, n: f64, w: Direction2, c: f64) -> Result<UpperProfile> {
    if !(n > 1.0) {
        return Err(LensError::Domain(format!("lens index must exceed 1, got {n}")));
    }
    if !(w.y() > 0.0) {
        return Err(LensError::Domain("target direction must point upwards".into()));
    }
    let e = Direction2::E;
    let margin = 1e-6 * c.abs() / (n - 1.0);
    let len = lower.len();
    // compatibility first: a reflecting sample rules out every choice of c
    let mut m = Vec::with_capacity(len);
    for i in 0..len {
        let nu = lower.normal(i);
        let lambda = phi_kappa(e.dot(&nu), n)?;
        let mi = Direction2::new((e.x() - lambda * nu.x()) / n, (e.y() - lambda * nu.y()) / n)?;
        if lambda * nu.dot(&w) > e.dot(&w) - 1.0 + 1e-14 {
            return Err(LensError::TotalInternalReflection { cos_incidence: mi.dot(&w), kappa: 1.0 / n });
        }
        m.push(mi);
    }
    let mut f = Vec::with_capacity(len);
    let mut d = Vec::with_capacity(len);
    for (i, mi) in m.iter().enumerate() {
        let (t, u) = (lower.t[i], lower.u[i]);
        let di = (c - ((e.x() - w.x()) * t + (e.y() - w.y()) * u)) / (n - w.dot(mi));
        if !(di > margin) {
            return Err(LensError::NonpositiveThickness { t, d: di });
        }
        f.push([t + di * mi.x(), u + di * mi.y()]);
        d.push(di);
    }
    Ok(UpperProfile { n, w, c, t: lower.t.clone(), u: lower.u.clone(), f, d, m })
}

/// Factor `g` with `|m_b - m_r| <= g |n_b - n_r|`.
pub fn direction_gap_factor(n_r: f64, n_b: f64) -> f64 {
    let s = n_r * (n_b * n_b - 1.0).sqrt() + n_b * (n_r * n_r - 1.0).sqrt();
    (2.0 + (n_b + n_r) / s) / (n_b * n_r)
}

/// Upper bound on `|m_b(t) - m_r(t)|` valid for every lower face.
pub fn direction_gap_bound(n_r: f64, n_b: f64) -> f64 {
    (n_b - n_r).abs() * direction_gap_factor(n_r, n_b)
}

/// Constant `C'` with `|d_r - d_b| <= C' |n_b - n_r|` for nominal thickness `d0`.
pub fn thickness_gap_constant(n_r: f64, n_b: f64, d0: f64) -> f64 {
    let g = direction_gap_factor(n_r, n_b);
    d0 * (2.0 + (1.0 + n_r) * g) / ((n_r - 1.0) * (n_b - 1.0))
}

/// Constant `C_bar` with `|f_r - f_b| <= C_bar |n_b - n_r|`.
pub fn surface_gap_constant(n_r: f64, n_b: f64, d0: f64) -> f64 {
    d0 * direction_gap_factor(n_r, n_b) + thickness_gap_constant(n_r, n_b, d0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapSample {
    pub t: f64,
    pub f_r: [f64; 2],
    pub f_b: [f64; 2],
    pub gap: f64,
    pub m_gap: f64,
    pub d_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceGap {
    pub sup_gap: f64,
    pub per_t: Vec<GapSample>,
    /// Pointwise direction estimate holds at every sample.
    pub bound_check: bool,
    /// Pointwise thickness estimate holds at every sample.
    pub thickness_check: bool,
    pub m_bound: f64,
    pub c_prime: f64,
    pub c_bar: f64,
}

/// Builds both upper faces for `w = e` anchored so that they meet at `t0` with thickness `d0`,
/// and measures how far apart they are.
pub fn surface_gap(lower: &LowerProfileCartesian, n_r: f64, n_b: f64, d0: f64, t0: f64) -> Result<SurfaceGap> {
    if !(n_b >= n_r && n_r > 1.0) {
        return Err(LensError::Ordering(format!("need n_b >= n_r > 1, got n_r = {n_r}, n_b = {n_b}")));
    }
    if !(d0 > 0.0) {
        return Err(LensError::InvalidInput(format!("thickness must be positive, got {d0}")));
    }
    let slope = lower
        .slope_at(t0)
        .ok_or_else(|| LensError::InvalidInput(format!("anchor t0 = {t0} outside the profile")))?;
    if slope.abs() > ANCHOR_SLOPE_TOL {
        return Err(LensError::AnchorInvalid { t0, slope });
    }
    let e = Direction2::E;
    let fr = build_upper_surface(lower, n_r, e, (n_r - 1.0) * d0)?;
    let fb = build_upper_surface(lower, n_b, e, (n_b - 1.0) * d0)?;
    let m_bound = direction_gap_bound(n_r, n_b);
    let c_prime = thickness_gap_constant(n_r, n_b, d0);
    let d_bound = c_prime * (n_b - n_r);
    let slack = 1e-12 * (1.0 + d0);
    let mut bound_check = true;
    let mut thickness_check = true;
    let mut sup_gap = 0.0f64;
    let per_t = (0..lower.len())
        .map(|i| {
            let gap = (fr.f[i][0] - fb.f[i][0]).hypot(fr.f[i][1] - fb.f[i][1]);
            let m_gap = (fr.m[i].x() - fb.m[i].x()).hypot(fr.m[i].y() - fb.m[i].y());
            let d_gap = (fr.d[i] - fb.d[i]).abs();
            bound_check &= m_gap <= m_bound + 1e-15;
            thickness_check &= d_gap <= d_bound + slack;
            sup_gap = sup_gap.max(gap);
            GapSample { t: lower.t[i], f_r: fr.f[i], f_b: fb.f[i], gap, m_gap, d_gap }
        })
        .collect();
    Ok(SurfaceGap {
        sup_gap,
        per_t,
        bound_check,
        thickness_check,
        m_bound,
        c_prime,
        c_bar: surface_gap_constant(n_r, n_b, d0),
    })
}

fn segment_distance(p0: [f64; 2], p1: [f64; 2], q0: [f64; 2], q1: [f64; 2]) -> (f64, f64, f64) {
    let d1 = [p1[0] - p0[0], p1[1] - p0[1]];
    let d2 = [q1[0] - q0[0], q1[1] - q0[1]];
    let r = [p0[0] - q0[0], p0[1] - q0[1]];
    let a = d1[0] * d1[0] + d1[1] * d1[1];
    let e = d2[0] * d2[0] + d2[1] * d2[1];
    let f = d2[0] * r[0] + d2[1] * r[1];
    let c = d1[0] * r[0] + d1[1] * r[1];
    let b = d1[0] * d2[0] + d1[1] * d2[1];
    let denom = a * e - b * b;
    let mut s = if denom > 0.0 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let mut t = if e > 0.0 { (b * s + f) / e } else { 0.0 };
    if t < 0.0 {
        t = 0.0;
        s = if a > 0.0 { (-c / a).clamp(0.0, 1.0) } else { 0.0 };
    } else if t > 1.0 {
        t = 1.0;
        s = if a > 0.0 { ((b - c) / a).clamp(0.0, 1.0) } else { 0.0 };
    }
    let dx = p0[0] + s * d1[0] - q0[0] - t * d2[0];
    let dy = p0[1] + s * d1[1] - q0[1] - t * d2[1];
    (dx.hypot(dy), s, t)
}

/// Parameter pairs `(t_r, t_b)` where the two sampled faces come within `1e-8` of their diameter.
pub fn detect_surface_intersection(fr: &UpperProfile, fb: &UpperProfile) -> Vec<(f64, f64)> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in fr.f.iter().chain(&fb.f) {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let tol = 1e-8 * (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
    let segs = |p: &UpperProfile| -> Vec<(usize, [f64; 2], [f64; 2])> {
        if p.len() == 1 {
            return vec![(0, p.f[0], p.f[0])];
        }
        (0..p.len() - 1).map(|i| (i, p.f[i], p.f[i + 1])).collect()
    };
    let (sr, sb) = (segs(fr), segs(fb));
    let lerp = |t: &[f64], i: usize, s: f64| if i + 1 < t.len() { t[i] + s * (t[i + 1] - t[i]) } else { t[i] };
    let mut pairs = Vec::new();
    for &(i, p0, p1) in &sr {
        let (pminx, pmaxx) = (p0[0].min(p1[0]), p0[0].max(p1[0]));
        let (pminy, pmaxy) = (p0[1].min(p1[1]), p0[1].max(p1[1]));
        for &(j, q0, q1) in &sb {
            if q0[0].max(q1[0]) < pminx - tol
                || q0[0].min(q1[0]) > pmaxx + tol
                || q0[1].max(q1[1]) < pminy - tol
                || q0[1].min(q1[1]) > pmaxy + tol
            {
                continue;
            }
            let (dist, s, u) = segment_distance(p0, p1, q0, q1);
            if dist <= tol {
                let pair = (lerp(&fr.t, i, s), lerp(&fb.t, j, u));
                if pairs.last() != Some(&pair) {
                    pairs.push(pair);
                }
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat(u0: f64) -> LowerProfileCartesian {
        LowerProfileCartesian::from_fn(-1.0, 1.0, 41, |_| u0, |_| 0.0).unwrap()
    }

    fn bowl(eps: f64) -> LowerProfileCartesian {
        LowerProfileCartesian::from_fn(-1.0, 1.0, 81, |t| 1.0 + eps * t * t, |t| 2.0 * eps * t).unwrap()
    }

    #[test]
    fn flat_face_gives_parallel_plane() {
        let up = build_upper_surface(&flat(2.0), 1.5, Direction2::E, 0.5 * 3.0).unwrap();
        for i in 0..up.len() {
            assert_abs_diff_eq!(up.d[i], 3.0, epsilon = 1e-14);
            assert_eq!(up.m[i], Direction2::E);
            assert_abs_diff_eq!(up.f[i][1], 5.0, epsilon = 1e-14);
            assert_abs_diff_eq!(up.f[i][0], up.t[i]);
        }
    }

    #[test]
    fn curved_face_positive_thickness() {
        let up = build_upper_surface(&bowl(0.1), 1.5, Direction2::E, 0.5 * 2.0).unwrap();
        assert!(up.d.iter().all(|d| *d > 0.0));
        for i in 0..up.len() {
            assert_abs_diff_eq!(up.f[i][0], up.t[i] + up.d[i] * up.m[i].x(), epsilon = 1e-14);
            assert_abs_diff_eq!(up.f[i][1], up.u[i] + up.d[i] * up.m[i].y(), epsilon = 1e-14);
        }
        assert!(up.f.windows(2).all(|p| p[1][0] > p[0][0]));
    }

    #[test]
    fn steep_face_with_tilted_target_reflects() {
        let lower = LowerProfileCartesian::from_fn(0.0, 1.0, 11, |t| 1.0 + 2.0 * t, |_| 2.0).unwrap();
        let w = Direction2::from_angle(30f64.to_radians());
        let err = build_upper_surface(&lower, 1.5, w, 1.0).unwrap_err();
        assert!(matches!(err, LensError::TotalInternalReflection { .. }));
    }

    #[test]
    fn thin_constant_fails_thickness() {
        let lower = LowerProfileCartesian::from_fn(0.0, 1.0, 11, |t| 1.0 + t, |_| 1.0).unwrap();
        let w = Direction2::from_angle(0.2);
        let err = build_upper_surface(&lower, 1.5, w, -5.0).unwrap_err();
        assert!(matches!(err, LensError::NonpositiveThickness { .. }));
    }

    #[test]
    fn gap_bound_examples() {
        assert_eq!(direction_gap_bound(1.5, 1.5), 0.0);
        assert_abs_diff_eq!(direction_gap_bound(1.5, 1.7), 0.220196581119728142, epsilon = 1e-15);
        assert_abs_diff_eq!(direction_gap_bound(1.5, 1.6), 0.118602090633203210, epsilon = 1e-15);
        assert!(direction_gap_bound(1.5, 1.6) < direction_gap_bound(1.5, 1.7));
    }

    #[test]
    fn flat_face_has_no_gap() {
        let g = surface_gap(&flat(1.0), 1.5, 1.7, 2.0, 0.0).unwrap();
        assert_eq!(g.sup_gap, 0.0);
        assert!(g.bound_check && g.thickness_check);
    }

    #[test]
    fn quadratic_face_gap_within_estimate() {
        let g = surface_gap(&bowl(0.2), 1.5, 1.7, 2.0, 0.0).unwrap();
        assert!(g.sup_gap > 0.0);
        assert!(g.bound_check && g.thickness_check);
        assert!(g.sup_gap <= g.c_bar * 0.2 + 1e-14);
    }

    #[test]
    fn tilted_anchor_rejected() {
        let err = surface_gap(&bowl(0.2), 1.5, 1.7, 2.0, 0.5).unwrap_err();
        assert!(matches!(err, LensError::AnchorInvalid { .. }));
    }

    #[test]
    fn convex_faces_are_disjoint() {
        let lower = LowerProfileCartesian::from_fn(0.1, 1.0, 60, |t| 1.0 + 0.3 * t * t, |t| 0.6 * t).unwrap();
        let fr = build_upper_surface(&lower, 1.5, Direction2::E, 0.5 * 2.0).unwrap();
        let fb = build_upper_surface(&lower, 1.7, Direction2::E, 0.7 * 2.0).unwrap();
        assert!(detect_surface_intersection(&fr, &fb).is_empty());
    }

    #[test]
    fn parallel_planes_overlap_only_when_thin() {
        let lower = flat(1.0);
        let c = 1e-9;
        let fr = build_upper_surface(&lower, 1.5, Direction2::E, c).unwrap();
        let fb = build_upper_surface(&lower, 1.7, Direction2::E, c).unwrap();
        assert!(!detect_surface_intersection(&fr, &fb).is_empty());
        let c = 1.0;
        let fr = build_upper_surface(&lower, 1.5, Direction2::E, c).unwrap();
        let fb = build_upper_surface(&lower, 1.7, Direction2::E, c).unwrap();
        assert!(detect_surface_intersection(&fr, &fb).is_empty());
    }

    #[test]
    fn csv_header_and_rows() {
        let up = build_upper_surface(&flat(1.0), 1.5, Direction2::E, 0.5).unwrap();
        let mut buf = Vec::new();
        up.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,u,fx,fy,d,mx,my"));
        assert_eq!(lines.count(), up.len());
    }
}
