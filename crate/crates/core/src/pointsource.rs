//! Point-source lens for two colours.
//!
//! Rays leave the origin in direction `x(t) = (sin t, cos t)`, enter the lens at the polar
//! face `rho(t) x(t)` and must all leave vertically. The red ray from `t` and the blue ray
//! from `phi(t)` share an exit point, `f_r(t) = f_b(phi(t))`. Writing the lower face as
//! `v = (-rho cos t, rho sin t)`, the unknowns
//!
//! ```text
//! z1 = phi,  z2 = v1 + rho0,  z3 = v2,  z4 = v1',  z5 = v2' - rho0
//! ```
//!
//! satisfy a functional differential equation solved by [`crate::fde`].

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};
use crate::fde::{
    contraction_diagnostics, default_eps, solve_algebraic_anchor, solve_fde, AnchorP, ContractionDiagnostics,
    GridSolution, HArgs, HMap, SolverConfig,
};
use crate::numerics::WeightedNorm;
use crate::refraction::Direction2;

/// Problem data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HContext {
    pub n_r: f64,
    pub n_b: f64,
    pub rho0: f64,
    pub d0: f64,
}

impl HContext {
    pub fn new(n_r: f64, n_b: f64, rho0: f64, d0: f64) -> Result<Self> {
        if !(n_r > 1.0 && n_b > n_r && n_b.is_finite()) {
            return Err(LensError::Ordering(format!("need 1 < n_r < n_b, got n_r = {n_r}, n_b = {n_b}")));
        }
        if !(rho0 > 0.0 && d0 > 0.0 && rho0.is_finite() && d0.is_finite()) {
            return Err(LensError::InvalidInput(format!("rho0 and d0 must be positive, got {rho0}, {d0}")));
        }
        Ok(Self { n_r, n_b, rho0, d0 })
    }

    pub fn c_r(&self) -> f64 {
        (self.n_r - 1.0) * self.d0
    }

    pub fn c_b(&self) -> f64 {
        (self.n_b - 1.0) * self.d0
    }

    pub fn k0(&self) -> f64 {
        self.rho0 / self.d0
    }

    pub fn delta_r(&self) -> f64 {
        delta_of(self.n_r)
    }

    pub fn delta_b(&self) -> f64 {
        delta_of(self.n_b)
    }

    pub fn threshold(&self) -> f64 {
        k0_threshold(self.n_r, self.n_b)
    }

    pub fn optics(&self, color: Color) -> Optics {
        match color {
            Color::Red => Optics { n: self.n_r, rho0: self.rho0, c: self.c_r() },
            Color::Blue => Optics { n: self.n_b, rho0: self.rho0, c: self.c_b() },
        }
    }
}

/// `n / (n - 1)`.
pub fn delta_of(n: f64) -> f64 {
    n / (n - 1.0)
}

/// Largest `rho0 / d0` for which the anchor system has a real solution.
pub fn k0_threshold(n_r: f64, n_b: f64) -> f64 {
    let (dr, db) = (delta_of(n_r), delta_of(n_b));
    (dr - db).powi(2) / (4.0 * dr * db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Color {
    Red,
    Blue,
}

/// Single-colour optics of the lens: index, on-axis radius and thickness constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optics {
    pub n: f64,
    pub rho0: f64,
    pub c: f64,
}

/// Geometric quantities of one colour at `(t, Z)`.
///
/// `m = (mu, tau)` is the refracted direction inside the lens, `d` the distance travelled to
/// the upper face, `(f1, f2)` the exit point and `lam2 = |e - m / n|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blocks {
    pub a: f64,
    pub mu: f64,
    pub tau: f64,
    pub d: f64,
    pub f1: f64,
    pub f2: f64,
    pub lam2: f64,
    radius: f64,
    root: f64,
}

/// Time derivatives of [`Blocks`] along a trajectory with derivative `Z'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tilde {
    pub a: f64,
    pub mu: f64,
    pub tau: f64,
    pub d: f64,
    pub f1: f64,
    pub f2: f64,
    pub lam2: f64,
}

impl Optics {
    pub fn blocks(&self, t: f64, z: &[f64]) -> Result<Blocks> {
        let n = self.n;
        let q = (z[1] - self.rho0, z[2]);
        let w = (z[3], z[4] + self.rho0);
        let radius = q.0.hypot(q.1);
        if !(radius > 1e-12 * self.rho0) {
            return Err(LensError::SingularEvaluation { guard: "lower face radius vanishes" });
        }
        let root = (radius * radius + (n * n - 1.0) * (w.0 * w.0 + w.1 * w.1)).sqrt();
        let a = (1.0 - n * n) / (radius + root);
        let (s, c) = t.sin_cos();
        let mu = (s - a * z[3]) / n;
        let tau = (c - a * w.1) / n;
        if !(n - tau > 1e-12 * n) {
            return Err(LensError::SingularEvaluation { guard: "n - tau must be positive" });
        }
        let d = (self.c - radius - z[1] + self.rho0) / (n - tau);
        let f1 = z[2] + d * mu;
        let f2 = -z[1] + self.rho0 + d * tau;
        let lam_sq = 1.0 + 1.0 / (n * n) - 2.0 * tau / n;
        if !(lam_sq > 0.0) {
            return Err(LensError::SingularEvaluation { guard: "Lambda2 must be positive" });
        }
        Ok(Blocks { a, mu, tau, d, f1, f2, lam2: lam_sq.sqrt(), radius, root })
    }

    pub fn tilde(&self, t: f64, z: &[f64], xi: &[f64], b: &Blocks) -> Tilde {
        let n = self.n;
        let q = (z[1] - self.rho0, z[2]);
        let w = (z[3], z[4] + self.rho0);
        let q_dot = q.0 * xi[1] + q.1 * xi[2];
        let radius_dot = q_dot / b.radius;
        let root_dot = (q_dot + (n * n - 1.0) * (w.0 * xi[3] + w.1 * xi[4])) / b.root;
        let a = b.a * b.a / (n * n - 1.0) * (radius_dot + root_dot);
        let (s, c) = t.sin_cos();
        let mu = (c - b.a * xi[3] - a * z[3]) / n;
        let tau = (-s - b.a * xi[4] - a * w.1) / n;
        let d = (-radius_dot - xi[1] + tau * b.d) / (n - b.tau);
        let f1 = xi[2] + b.d * mu + d * b.mu;
        let f2 = -xi[1] + b.d * tau + d * b.tau;
        let lam2 = -(tau / n) / b.lam2;
        Tilde { a, mu, tau, d, f1, f2, lam2 }
    }
}

/// The five-component map whose fixed point describes the lens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LensH {
    pub ctx: HContext,
    red: Optics,
    blue: Optics,
}

pub fn build_h(ctx: &HContext) -> LensH {
    LensH { ctx: *ctx, red: ctx.optics(Color::Red), blue: ctx.optics(Color::Blue) }
}

impl LensH {
    pub fn optics(&self, color: Color) -> &Optics {
        match color {
            Color::Red => &self.red,
            Color::Blue => &self.blue,
        }
    }
}

impl HMap for LensH {
    fn dim(&self) -> usize {
        5
    }

    fn eval(&self, x: &HArgs<'_>, out: &mut [f64]) -> Result<()> {
        let (t, z0, z1, x0, x1) = (x.t, x.zeta0, x.zeta1, x.xi0, x.xi1);
        let rho0 = self.ctx.rho0;
        let nr = self.red.n;
        let phi = z0[0];
        let br = self.red.blocks(t, z0)?;
        let bb = self.blue.blocks(phi, z1)?;
        let tr = self.red.tilde(t, z0, x0, &br);
        let tb = self.blue.tilde(phi, z1, x1, &bb);

        if !(tb.f1.abs() > 1e-14 * (rho0 + self.ctx.d0)) {
            return Err(LensError::SingularEvaluation { guard: "blue exit abscissa derivative vanishes" });
        }
        let denom = br.a * bb.lam2 / nr;
        if !(denom.abs() * rho0 > 1e-14) {
            return Err(LensError::SingularEvaluation { guard: "A_r * Lambda2_b vanishes" });
        }
        let (s, c) = t.sin_cos();
        out[0] = tr.f1 / tb.f1;
        out[1] = z0[3];
        out[2] = z0[4] + rho0;
        let num = x0[0] * (tb.mu * br.lam2 - tb.lam2 * br.mu) + bb.mu * tr.lam2
            - (c - tr.a * z0[3]) * bb.lam2 / nr;
        out[3] = -num / denom;
        out[4] = -s / c * x0[3] - 2.0 / (c * c) * z0[3] - 2.0 * s / (c * c * c) * (z0[1] - rho0);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feasibility {
    Infeasible,
    Boundary,
    Feasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub n_r: f64,
    pub n_b: f64,
    pub rho0: f64,
    pub d0: f64,
    pub k0: f64,
    pub delta_r: f64,
    pub delta_b: f64,
    pub threshold: f64,
    pub discriminant: f64,
    #[serde(rename = "P")]
    pub p: Option<[f64; 5]>,
    #[serde(rename = "P_prime")]
    pub p_prime: Option<[f64; 5]>,
    pub p1: Option<f64>,
    pub p1_prime: Option<f64>,
    pub rho2_window: [f64; 2],
    pub rho2_over_rho0: Option<f64>,
    pub rho2_over_rho0_prime: Option<f64>,
    pub feasible: Feasibility,
}

/// Relative size below which the discriminant is treated as zero.
pub const BOUNDARY_REL_TOL: f64 = 1e-12;

/// Closed-form solutions of the anchor system and their classification.
pub fn feasibility(ctx: &HContext) -> FeasibilityReport {
    let (dr, db) = (ctx.delta_r(), ctx.delta_b());
    let k0 = ctx.k0();
    let gap = dr - db;
    let disc = gap * gap - 4.0 * k0 * dr * db;
    let feasible = if disc.abs() <= BOUNDARY_REL_TOL * gap * gap {
        Feasibility::Boundary
    } else if disc < 0.0 {
        Feasibility::Infeasible
    } else {
        Feasibility::Feasible
    };
    let sum = dr / ctx.n_r + db / ctx.n_b;
    let anchor = |sign: f64| -> Option<([f64; 5], f64)> {
        if feasible == Feasibility::Infeasible {
            return None;
        }
        let root = if feasible == Feasibility::Boundary { 0.0 } else { disc.sqrt() };
        let p1 = (gap - sign * root) / (-gap - sign * root);
        let p4 = (-sum - sign * root) / 2.0 * ctx.rho0;
        Some(([p1, 0.0, ctx.rho0, p4, 0.0], 1.0 - p4 / ctx.rho0))
    };
    let main = anchor(1.0);
    let other = anchor(-1.0);
    FeasibilityReport {
        n_r: ctx.n_r,
        n_b: ctx.n_b,
        rho0: ctx.rho0,
        d0: ctx.d0,
        k0,
        delta_r: dr,
        delta_b: db,
        threshold: ctx.threshold(),
        discriminant: disc,
        p: main.map(|a| a.0),
        p_prime: other.map(|a| a.0),
        p1: main.map(|a| a.0[0]),
        p1_prime: other.map(|a| a.0[0]),
        rho2_window: [db, dr],
        rho2_over_rho0: main.map(|a| a.1),
        rho2_over_rho0_prime: other.map(|a| a.1),
        feasible,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThreeColorReport {
    pub feasible: Feasibility,
    /// Window for `rho''(0) / rho0` from the middle and red colours.
    pub upper_pair: [f64; 2],
    /// Window from the blue and middle colours.
    pub lower_pair: [f64; 2],
    pub explanation: String,
}

/// Three colours never admit a lens: the two windows for `rho''(0) / rho0` are disjoint.
pub fn three_color_feasibility(n_r: f64, n_j: f64, n_b: f64) -> Result<ThreeColorReport> {
    if !(1.0 < n_r && n_r < n_j && n_j < n_b && n_b.is_finite()) {
        return Err(LensError::Ordering(format!("need 1 < n_r < n_j < n_b, got {n_r}, {n_j}, {n_b}")));
    }
    let (dr, dj, db) = (delta_of(n_r), delta_of(n_j), delta_of(n_b));
    let upper_pair = [dj, dr];
    let lower_pair = [db, dj];
    let disjoint = lower_pair[1] <= upper_pair[0];
    debug_assert!(disjoint);
    Ok(ThreeColorReport {
        feasible: Feasibility::Infeasible,
        upper_pair,
        lower_pair,
        explanation: format!(
            "rho''(0)/rho0 would have to lie in ({dj}, {dr}) and in ({db}, {dj}) at once; the intervals are disjoint"
        ),
    })
}

/// Weights of the max norm under which the map contracts, with the intermediate constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormWeights {
    pub weights: [f64; 5],
    pub delta0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub n_factor: f64,
    pub a: f64,
    pub c: f64,
    pub b_bound: f64,
}

impl NormWeights {
    pub fn norm(&self) -> WeightedNorm {
        WeightedNorm::new(self.weights.to_vec())
    }
}

pub fn build_norm_weights(ctx: &HContext) -> Result<NormWeights> {
    let rep = feasibility(ctx);
    let p = rep
        .p
        .ok_or_else(|| LensError::Infeasible(format!("k0 = {} exceeds the threshold {}", rep.k0, rep.threshold)))?;
    let (dr, db) = (rep.delta_r, rep.delta_b);
    let lead = db / ctx.n_b + p[3] / ctx.rho0;
    let a = 1.0 / (ctx.rho0 + ctx.d0 / db * lead);
    let c = ctx.rho0 * lead;
    let delta0 = 2.0 * db / (dr + db);
    let delta2 = 0.5 * (1.0 + delta0);
    let delta1 = 0.5 * (delta0 + delta2);
    let b_bound = dr * rep.threshold;
    let n_factor = 2.0 * b_bound / (delta1 - delta0);
    let l4 = delta2 / c.abs();
    Ok(NormWeights { weights: [1.0, 1.0, n_factor * l4, l4, 1.0], delta0, delta1, delta2, n_factor, a, c, b_bound })
}

/// Sampled lens geometry; everything the ray tracer needs and nothing from the solver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LensGeometry {
    pub n_r: f64,
    pub n_b: f64,
    pub rho0: f64,
    pub d0: f64,
    pub t: Vec<f64>,
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
    pub f_r: Vec<[f64; 2]>,
    pub f_b: Vec<[f64; 2]>,
    pub d_r: Vec<f64>,
    pub d_b: Vec<f64>,
    pub m_r: Vec<Direction2>,
    pub m_b: Vec<Direction2>,
}

pub const LENS_CSV_HEADER: [&str; 13] =
    ["t", "rho", "phi", "frx", "fry", "fbx", "fby", "dr", "db", "mrx", "mry", "mbx", "mby"];

impl LensGeometry {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn index(&self, color: Color) -> f64 {
        match color {
            Color::Red => self.n_r,
            Color::Blue => self.n_b,
        }
    }

    pub fn surface(&self, color: Color) -> &[[f64; 2]] {
        match color {
            Color::Red => &self.f_r,
            Color::Blue => &self.f_b,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        wtr.write_record(LENS_CSV_HEADER)?;
        for i in 0..self.len() {
            let row = [
                self.t[i],
                self.rho[i],
                self.phi[i],
                self.f_r[i][0],
                self.f_r[i][1],
                self.f_b[i][0],
                self.f_b[i][1],
                self.d_r[i],
                self.d_b[i],
                self.m_r[i].x(),
                self.m_r[i].y(),
                self.m_b[i].x(),
                self.m_b[i].y(),
            ];
            wtr.write_record(row.iter().map(|v| crate::fmt_f64(*v)))?;
        }
        wtr.flush()
    }

    /// Reads geometry written by [`LensGeometry::write_csv`].
    pub fn read_csv<R: Read>(ctx: &HContext, input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(|e| LensError::InvalidInput(e.to_string()))?.clone();
        if header.iter().ne(LENS_CSV_HEADER.iter().copied()) {
            return Err(LensError::InvalidInput(format!("unexpected CSV header {header:?}")));
        }
        let mut g = LensGeometry {
            n_r: ctx.n_r,
            n_b: ctx.n_b,
            rho0: ctx.rho0,
            d0: ctx.d0,
            t: vec![],
            rho: vec![],
            phi: vec![],
            f_r: vec![],
            f_b: vec![],
            d_r: vec![],
            d_b: vec![],
            m_r: vec![],
            m_b: vec![],
        };
        for rec in rdr.records() {
            let rec = rec.map_err(|e| LensError::InvalidInput(e.to_string()))?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| LensError::InvalidInput(format!("bad number in CSV: {e}")))?;
            if v.len() != LENS_CSV_HEADER.len() {
                return Err(LensError::InvalidInput("short CSV row".into()));
            }
            g.t.push(v[0]);
            g.rho.push(v[1]);
            g.phi.push(v[2]);
            g.f_r.push([v[3], v[4]]);
            g.f_b.push([v[5], v[6]]);
            g.d_r.push(v[7]);
            g.d_b.push(v[8]);
            g.m_r.push(Direction2::new(v[9], v[10])?);
            g.m_b.push(Direction2::new(v[11], v[12])?);
        }
        if g.is_empty() {
            return Err(LensError::InvalidInput("empty lens CSV".into()));
        }
        Ok(g)
    }
}

/// A solved lens together with the data that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LensSolution {
    pub geometry: LensGeometry,
    pub ctx: HContext,
    pub anchor: AnchorP,
    pub weights: NormWeights,
    pub diagnostics: ContractionDiagnostics,
    pub grid: GridSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignOptions {
    pub delta: f64,
    pub grid_n: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub eps: Option<f64>,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self { delta: 0.1, grid_n: 2001, tol: 1e-10, max_iter: 200, eps: None }
    }
}

/// Builds the lens for `ctx` on the largest working interval the solver finds.
pub fn design_lens(ctx: &HContext, delta: f64, grid_n: usize, tol: f64) -> Result<LensSolution> {
    design_lens_with(ctx, &DesignOptions { delta, grid_n, tol, ..DesignOptions::default() })
}

pub fn design_lens_with(ctx: &HContext, opts: &DesignOptions) -> Result<LensSolution> {
    let rep = feasibility(ctx);
    let guess = match rep.feasible {
        Feasibility::Feasible => rep.p.expect("feasible report carries P"),
        Feasibility::Boundary => {
            return Err(LensError::Infeasible(format!("k0 = {} sits on the threshold", rep.k0)));
        }
        Feasibility::Infeasible => {
            return Err(LensError::Infeasible(format!("k0 = {} exceeds the threshold {}", rep.k0, rep.threshold)));
        }
    };
    let h = build_h(ctx);
    let weights = build_norm_weights(ctx)?;
    let norm = weights.norm();
    let anchor = solve_algebraic_anchor(&h, &guess)?;
    let (eps, diagnostics) = select_neighbourhood(&h, &anchor, &norm, opts.eps)?;
    let cfg = SolverConfig {
        delta: opts.delta,
        grid_n: opts.grid_n,
        tol: opts.tol,
        max_iter: opts.max_iter,
        eps: Some(eps),
        max_halvings: 8,
    };
    let grid = solve_fde(&h, &anchor, &cfg, &norm)?;
    let geometry = reconstruct(&h, &grid)?;
    Ok(LensSolution { geometry, ctx: *ctx, anchor, weights, diagnostics, grid })
}

/// Number of tenfold reductions of the default radius tried before giving up.
pub const EPS_REDUCTIONS: usize = 3;

/// Picks the neighbourhood radius: the given one, or the default shrunk tenfold until the
/// diagnostics report a contraction.
pub fn select_neighbourhood(
    h: &LensH,
    anchor: &AnchorP,
    norm: &WeightedNorm,
    eps: Option<f64>,
) -> Result<(f64, ContractionDiagnostics)> {
    let candidates: Vec<f64> = match eps {
        Some(e) => vec![e],
        None => {
            let e0 = default_eps(anchor, norm);
            (0..=EPS_REDUCTIONS).map(|k| e0 * 10f64.powi(-(k as i32))).collect()
        }
    };
    let mut last = None;
    for e in candidates {
        let d = contraction_diagnostics(h, anchor, e, norm)?;
        if d.contraction_ok {
            return Ok((e, d));
        }
        last = Some(d);
    }
    let d = last.expect("at least one radius tried");
    Err(LensError::NotContractive { c0: d.c0, c1: d.c1 })
}

/// Lens geometry from a solved trajectory.
pub fn reconstruct(h: &LensH, grid: &GridSolution) -> Result<LensGeometry> {
    let ctx = h.ctx;
    let len = grid.grid_n;
    let mut g = LensGeometry {
        n_r: ctx.n_r,
        n_b: ctx.n_b,
        rho0: ctx.rho0,
        d0: ctx.d0,
        t: grid.t.clone(),
        rho: Vec::with_capacity(len),
        phi: Vec::with_capacity(len),
        f_r: Vec::with_capacity(len),
        f_b: Vec::with_capacity(len),
        d_r: Vec::with_capacity(len),
        d_b: Vec::with_capacity(len),
        m_r: Vec::with_capacity(len),
        m_b: Vec::with_capacity(len),
    };
    for (t, z) in grid.t.iter().zip(&grid.z) {
        let br = h.red.blocks(*t, z)?;
        let bb = h.blue.blocks(*t, z)?;
        g.rho.push(-(z[1] - ctx.rho0) / t.cos());
        g.phi.push(z[0]);
        g.f_r.push([br.f1, br.f2]);
        g.f_b.push([bb.f1, bb.f2]);
        g.d_r.push(br.d);
        g.d_b.push(bb.d);
        g.m_r.push(Direction2::new(br.mu, br.tau)?);
        g.m_b.push(Direction2::new(bb.mu, bb.tau)?);
    }
    Ok(g)
}

/// Pointwise lens conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LensConditions {
    pub rho_positive: bool,
    pub thickness_positive: bool,
    pub no_internal_reflection: bool,
    pub phi_within_t: bool,
    pub phi_injective: bool,
    pub no_self_intersection: bool,
}

impl LensConditions {
    pub fn all(&self) -> bool {
        self.rho_positive
            && self.thickness_positive
            && self.no_internal_reflection
            && self.phi_within_t
            && self.phi_injective
            && self.no_self_intersection
    }
}

fn strictly_monotone(v: impl Iterator<Item = f64>) -> bool {
    let v: Vec<f64> = v.collect();
    v.windows(2).all(|w| w[1] > w[0]) || v.windows(2).all(|w| w[1] < w[0])
}

impl LensGeometry {
    pub fn conditions(&self) -> LensConditions {
        let slack = 1e-12;
        LensConditions {
            rho_positive: self.rho.iter().all(|r| *r > 0.0),
            thickness_positive: self.d_r.iter().chain(&self.d_b).all(|d| *d > 0.0),
            no_internal_reflection: self.m_r.iter().all(|m| m.y() >= 1.0 / self.n_r - slack)
                && self.m_b.iter().all(|m| m.y() >= 1.0 / self.n_b - slack),
            phi_within_t: self.phi.iter().zip(&self.t).all(|(p, t)| p.abs() <= t.abs() + slack * t.abs()),
            phi_injective: self.len() == 1 || strictly_monotone(self.phi.iter().copied()),
            no_self_intersection: self.len() == 1
                || (strictly_monotone(self.f_r.iter().map(|p| p[0]))
                    && strictly_monotone(self.f_b.iter().map(|p| p[0]))),
        }
    }
}

/// Largest `|mu^2 + tau^2 - 1|` over the nodes and both colours.
pub fn unit_defect(sol: &LensSolution) -> Result<f64> {
    let h = build_h(&sol.ctx);
    let mut worst = 0.0f64;
    for (t, z) in sol.grid.t.iter().zip(&sol.grid.z) {
        for color in [Color::Red, Color::Blue] {
            let b = h.optics(color).blocks(*t, z)?;
            worst = worst.max((b.mu * b.mu + b.tau * b.tau - 1.0).abs());
        }
    }
    Ok(worst)
}

/// `sup_t |f_r(t) - f_b(phi(t))|` with `Z(phi)` from the solver's Hermite interpolant, and
/// where it is attained.
pub fn reparam_residual(sol: &LensSolution) -> Result<(f64, f64)> {
    let h = build_h(&sol.ctx);
    let mut worst = (0.0f64, 0.0);
    for (i, t) in sol.grid.t.iter().enumerate() {
        let phi = sol.geometry.phi[i];
        let (zphi, _) = composed(&sol.grid, i, phi)?;
        let bb = h.blue.blocks(phi, &zphi)?;
        let fr = sol.geometry.f_r[i];
        let r = (fr[0] - bb.f1).hypot(fr[1] - bb.f2);
        if r > worst.0 {
            worst = (r, *t);
        }
    }
    Ok(worst)
}

fn composed(grid: &GridSolution, i: usize, s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if i == grid.center() {
        return Ok((grid.z[i].clone(), grid.zprime[i].clone()));
    }
    grid.eval(s).ok_or(LensError::CompositionOutOfRange { t: grid.t[i], z1: s })
}

/// Largest `|mu_r(t) Lambda2_b(phi) - mu_b(phi) Lambda2_r(t)|` over the nodes.
pub fn colinearity_residual(sol: &LensSolution) -> Result<f64> {
    let h = build_h(&sol.ctx);
    let mut worst = 0.0f64;
    for (i, t) in sol.grid.t.iter().enumerate() {
        let phi = sol.geometry.phi[i];
        let (zphi, _) = composed(&sol.grid, i, phi)?;
        let br = h.red.blocks(*t, &sol.grid.z[i])?;
        let bb = h.blue.blocks(phi, &zphi)?;
        worst = worst.max((br.mu * bb.lam2 - bb.mu * br.lam2).abs());
    }
    Ok(worst)
}

/// Agreement between a building block's derivative formula and central differences along
/// the solved trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub block: &'static str,
    pub color: Color,
    pub max_error: f64,
    pub scale: f64,
}

pub const BLOCK_NAMES: [&str; 7] = ["A", "mu", "tau", "D", "F1", "F2", "Lambda2"];

fn block_values(b: &Blocks) -> [f64; 7] {
    [b.a, b.mu, b.tau, b.d, b.f1, b.f2, b.lam2]
}

fn tilde_values(b: &Tilde) -> [f64; 7] {
    [b.a, b.mu, b.tau, b.d, b.f1, b.f2, b.lam2]
}

/// Compares each derivative formula with a fourth-order central difference taken with
/// node spacing `stride`.
pub fn derivative_consistency(sol: &LensSolution, stride: usize) -> Result<Vec<DerivativeCheck>> {
    let h = build_h(&sol.ctx);
    let grid = &sol.grid;
    let n = grid.grid_n;
    let s = stride.max(1);
    let mut out = Vec::new();
    for color in [Color::Red, Color::Blue] {
        let optics = h.optics(color);
        let values: Vec<[f64; 7]> = grid
            .t
            .iter()
            .zip(&grid.z)
            .map(|(t, z)| optics.blocks(*t, z).map(|b| block_values(&b)))
            .collect::<Result<_>>()?;
        let mut max_err = [0.0f64; 7];
        let mut scale = [0.0f64; 7];
        if n > 4 * s {
            let hs = (grid.t[1] - grid.t[0]) * s as f64;
            for i in 2 * s..n - 2 * s {
                let b = optics.blocks(grid.t[i], &grid.z[i])?;
                let formula = tilde_values(&optics.tilde(grid.t[i], &grid.z[i], &grid.zprime[i], &b));
                for k in 0..7 {
                    let fd = (values[i - 2 * s][k] - 8.0 * values[i - s][k] + 8.0 * values[i + s][k]
                        - values[i + 2 * s][k])
                        / (12.0 * hs);
                    max_err[k] = max_err[k].max((fd - formula[k]).abs());
                    scale[k] = scale[k].max(formula[k].abs()).max(values[i][k].abs());
                }
            }
        }
        for k in 0..7 {
            out.push(DerivativeCheck { block: BLOCK_NAMES[k], color, max_error: max_err[k], scale: scale[k].max(1.0) });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoWindow {
    pub value: f64,
    pub inside: bool,
    pub window: [f64; 2],
}

/// Finite-difference estimate of `rho''(0) / rho0` against the window `(Delta_b, Delta_r)`.
pub fn rho_window_check(sol: &LensSolution) -> RhoWindow {
    let g = &sol.geometry;
    let window = [sol.ctx.delta_b(), sol.ctx.delta_r()];
    let value = rho_second_derivative(g, sol.grid.center(), default_stride(g.len()));
    RhoWindow { value, inside: window[0] < value && value < window[1], window }
}

/// Node spacing for differences of solved quantities, coarse enough that the solver
/// tolerance does not dominate.
pub fn default_stride(len: usize) -> usize {
    ((len - 1) / 40).max(1)
}

/// Richardson-extrapolated central second difference of `rho / rho0` at node `c`.
pub fn rho_second_derivative(g: &LensGeometry, c: usize, stride: usize) -> f64 {
    let n = g.len();
    if n < 5 {
        return f64::NAN;
    }
    let s = stride.max(1).min((n - 1) / 4);
    let h = g.t[1] - g.t[0];
    let d2 = |k: usize| (g.rho[c + k] - 2.0 * g.rho[c] + g.rho[c - k]) / ((k as f64 * h).powi(2) * g.rho0);
    (4.0 * d2(s) - d2(2 * s)) / 3.0
}
