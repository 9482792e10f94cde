//! Picard iteration for functional differential equations of the form
//!
//! ```text
//! Z'(t) = H(t; Z(t), Z(z1(t)); Z'(t), Z'(z1(t))),   Z(0) = 0,
//! ```
//!
//! where `z1` is the first component of `Z`. The solution lives on a uniform grid over
//! `[-delta, delta]`; compositions are evaluated with the cubic Hermite interpolant of the
//! stored `(Z, Z')` samples and `Z` is recovered from `Z'` by cumulative Simpson quadrature.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LensError, Result};
use crate::numerics::{cumulative_simpson, halton, hermite, spectral_radius, UniformGrid, WeightedNorm, PRIMES};

/// Arguments of `H`: time, state, composed state, derivative and composed derivative.
#[derive(Debug, Clone, Copy)]
pub struct HArgs<'a> {
    pub t: f64,
    pub zeta0: &'a [f64],
    pub zeta1: &'a [f64],
    pub xi0: &'a [f64],
    pub xi1: &'a [f64],
}

pub trait HMap: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &HArgs<'_>, out: &mut [f64]) -> Result<()>;

    /// Radius of the neighbourhood of the anchor on which `H` is known to be smooth.
    fn radius(&self) -> Option<f64> {
        None
    }

    /// Whether `H` reads the composed slots. When it does not, they are pinned at the anchor
    /// and the restriction `|z1(t)| <= |t|` is not needed.
    fn uses_composition(&self) -> bool {
        true
    }

    fn eval_vec(&self, x: &HArgs<'_>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval(x, &mut out)?;
        Ok(out)
    }
}

/// `H` given by a closure.
pub struct FnHMap<F> {
    dim: usize,
    f: F,
    composition: bool,
}

impl<F> FnHMap<F>
where
    F: Fn(&HArgs<'_>, &mut [f64]) -> Result<()> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f, composition: true }
    }

    /// A map that ignores the composed slots.
    pub fn local(dim: usize, f: F) -> Self {
        Self { dim, f, composition: false }
    }
}

impl<F> HMap for FnHMap<F>
where
    F: Fn(&HArgs<'_>, &mut [f64]) -> Result<()> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &HArgs<'_>, out: &mut [f64]) -> Result<()> {
        (self.f)(x, out)
    }

    fn uses_composition(&self) -> bool {
        self.composition
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorP {
    pub p: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// `|p1| <= 1`, required before solving a map that composes.
    pub p1_within_unit: bool,
}

fn anchor_map<H: HMap + ?Sized>(h: &H, p: &[f64], out: &mut [f64]) -> Result<()> {
    let zero = vec![0.0; p.len()];
    h.eval(&HArgs { t: 0.0, zeta0: &zero, zeta1: &zero, xi0: p, xi1: p }, out)
}

fn anchor_residual<H: HMap + ?Sized>(h: &H, p: &[f64], g: &mut [f64]) -> Result<f64> {
    anchor_map(h, p, g)?;
    let mut r = 0.0f64;
    for (gi, pi) in g.iter_mut().zip(p) {
        *gi = pi - *gi;
        r = r.max(gi.abs());
    }
    if r.is_finite() {
        Ok(r)
    } else {
        Err(LensError::SingularEvaluation { guard: "non-finite anchor residual" })
    }
}

pub const ANCHOR_MAX_ITER: usize = 100;

/// Solves `P = H(0; 0, 0; P, P)` by damped Newton with a finite-difference Jacobian.
pub fn solve_algebraic_anchor<H: HMap + ?Sized>(h: &H, guess: &[f64]) -> Result<AnchorP> {
    solve_algebraic_anchor_with(h, guess, ANCHOR_MAX_ITER)
}

pub fn solve_algebraic_anchor_with<H: HMap + ?Sized>(h: &H, guess: &[f64], max_iter: usize) -> Result<AnchorP> {
    let n = h.dim();
    if guess.len() != n {
        return Err(LensError::InvalidInput(format!("guess has {} components, map has {n}", guess.len())));
    }
    let mut p = guess.to_vec();
    let mut g = vec![0.0; n];
    let mut res = anchor_residual(h, &p, &mut g)?;
    let mut stalled = 0;
    let mut iterations = 0;
    let mut scratch = vec![0.0; n];
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    while iterations < max_iter && res > 0.0 {
        iterations += 1;
        let mut jac = DMatrix::zeros(n, n);
        let mut pp = p.clone();
        for j in 0..n {
            let step = 1e-7 * p[j].abs().max(1.0);
            pp[j] = p[j] + step;
            anchor_map(h, &pp, &mut gp)?;
            pp[j] = p[j] - step;
            anchor_map(h, &pp, &mut gm)?;
            pp[j] = p[j];
            for i in 0..n {
                jac[(i, j)] = -(gp[i] - gm[i]) / (2.0 * step);
            }
            jac[(j, j)] += 1.0;
        }
        let rhs = DVector::from_iterator(n, g.iter().map(|v| -v));
        let dir = match jac.clone().lu().solve(&rhs) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => jac.transpose() * rhs,
        };
        let scale = p.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..30 {
            let trial: Vec<f64> = p.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
            if let Ok(r) = anchor_residual(h, &trial, &mut scratch) {
                if r < res {
                    accepted = Some((trial, r, alpha));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, r, alpha)) = accepted else {
            break;
        };
        let step_norm = alpha * dir.amax();
        p = trial;
        anchor_residual(h, &p, &mut g)?;
        stalled = if r > 0.5 * res { stalled + 1 } else { 0 };
        res = r;
        let tol = 1e-10 * scale;
        if res <= tol && (step_norm <= 1e-13 * scale || stalled >= 60) {
            break;
        }
    }
    let scale = p.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if res > 1e-10 * scale {
        return Err(LensError::NoConvergence { iterations, residual: res });
    }
    let p1_within_unit = p.first().is_some_and(|v| v.abs() <= 1.0);
    Ok(AnchorP { p, residual: res, iterations, p1_within_unit })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionDiagnostics {
    /// Bound on the partial derivative in `t`.
    pub lambda: f64,
    pub l0: f64,
    pub l1: f64,
    pub c0: f64,
    pub c1: f64,
    pub r_xi0: f64,
    pub r_xi1: f64,
    /// Bound on `H` over the neighbourhood.
    pub alpha: f64,
    /// Smallest admissible Lipschitz constant for `Z'`, when contractive.
    pub mu_min: Option<f64>,
    /// Largest `|h1|` seen, compared against 1.
    pub h1_max: f64,
    pub eps: f64,
    pub samples: usize,
    /// The constants come from finite differences at sample points, not analytic suprema.
    pub estimated: bool,
    pub contraction_ok: bool,
}

pub const DIAGNOSTIC_SAMPLES: usize = 200;

struct Point {
    t: f64,
    blocks: [Vec<f64>; 4],
}

impl Point {
    fn args(&self) -> HArgs<'_> {
        HArgs { t: self.t, zeta0: &self.blocks[0], zeta1: &self.blocks[1], xi0: &self.blocks[2], xi1: &self.blocks[3] }
    }
}

fn neighbourhood_point(index: usize, p: &[f64], eps: f64, norm: &WeightedNorm, composes: bool) -> Point {
    let n = p.len();
    let mut dim = 0;
    let mut next = || {
        let v = 2.0 * halton(index, PRIMES[dim % PRIMES.len()]) - 1.0;
        dim += 1;
        v
    };
    let t = next();
    let mut blocks: [Vec<f64>; 4] = Default::default();
    let mut total = t.abs();
    for (b, block) in blocks.iter_mut().enumerate() {
        let active = composes || b % 2 == 0;
        *block = (0..n).map(|i| if active { next() / norm.weights()[i] } else { 0.0 }).collect();
        total += norm.norm(block);
    }
    let scale = if total > 1.0 { eps / total } else { eps };
    let mut pt = Point { t: t * scale, blocks };
    for (b, block) in pt.blocks.iter_mut().enumerate() {
        for (i, v) in block.iter_mut().enumerate() {
            *v *= scale;
            if b >= 2 {
                *v += p[i];
            }
        }
    }
    pt
}

/// Finite-difference Lipschitz and contraction estimates of `H` on the neighbourhood
/// `|t| + |zeta0| + |zeta1| + |xi0 - P| + |xi1 - P| <= eps` of the anchor.
pub fn contraction_diagnostics<H: HMap + ?Sized>(
    h: &H,
    anchor: &AnchorP,
    eps: f64,
    norm: &WeightedNorm,
) -> Result<ContractionDiagnostics> {
    let n = h.dim();
    if norm.dim() != n || anchor.p.len() != n {
        return Err(LensError::InvalidInput("dimension mismatch between map, anchor and weights".into()));
    }
    if !(eps > 0.0) {
        return Err(LensError::InvalidInput(format!("neighbourhood radius must be positive, got {eps}")));
    }
    if let Some(r) = h.radius() {
        if eps > r {
            return Err(LensError::EvaluationOutsideDomain(format!("eps = {eps} exceeds declared radius {r}")));
        }
    }
    let composes = h.uses_composition();
    let outside = |e: LensError| LensError::EvaluationOutsideDomain(e.to_string());
    let mut d = ContractionDiagnostics {
        lambda: 0.0,
        l0: 0.0,
        l1: 0.0,
        c0: 0.0,
        c1: 0.0,
        r_xi0: 0.0,
        r_xi1: 0.0,
        alpha: 0.0,
        mu_min: None,
        h1_max: 0.0,
        eps,
        samples: DIAGNOSTIC_SAMPLES + 1,
        estimated: true,
        contraction_ok: false,
    };
    let mut hp = vec![0.0; n];
    let mut hm = vec![0.0; n];
    for index in 0..=DIAGNOSTIC_SAMPLES {
        let mut pt = if index == 0 {
            Point { t: 0.0, blocks: [vec![0.0; n], vec![0.0; n], anchor.p.clone(), anchor.p.clone()] }
        } else {
            neighbourhood_point(index, &anchor.p, eps, norm, composes)
        };
        let value = h.eval_vec(&pt.args()).map_err(outside)?;
        d.alpha = d.alpha.max(norm.norm(&value));
        d.h1_max = d.h1_max.max(value[0].abs());

        let t0 = pt.t;
        let step = 1e-6 * t0.abs().max(1.0);
        pt.t = t0 + step;
        h.eval(&pt.args(), &mut hp).map_err(outside)?;
        pt.t = t0 - step;
        h.eval(&pt.args(), &mut hm).map_err(outside)?;
        pt.t = t0;
        let dt: Vec<f64> = hp.iter().zip(&hm).map(|(a, b)| (a - b) / (2.0 * step)).collect();
        d.lambda = d.lambda.max(norm.norm(&dt));

        let mut jacs: Vec<DMatrix<f64>> = Vec::with_capacity(4);
        for b in 0..4 {
            let mut jac = DMatrix::zeros(n, n);
            if composes || b % 2 == 0 {
                for j in 0..n {
                    let x0 = pt.blocks[b][j];
                    let step = 1e-6 * x0.abs().max(1.0);
                    pt.blocks[b][j] = x0 + step;
                    h.eval(&pt.args(), &mut hp).map_err(outside)?;
                    pt.blocks[b][j] = x0 - step;
                    h.eval(&pt.args(), &mut hm).map_err(outside)?;
                    pt.blocks[b][j] = x0;
                    for i in 0..n {
                        jac[(i, j)] = (hp[i] - hm[i]) / (2.0 * step);
                    }
                }
            }
            jacs.push(jac);
        }
        d.l0 = d.l0.max(norm.induced(&jacs[0]));
        d.l1 = d.l1.max(norm.induced(&jacs[1]));
        d.c0 = d.c0.max(norm.induced(&jacs[2]));
        d.c1 = d.c1.max(norm.induced(&jacs[3]));
        if index == 0 {
            d.r_xi0 = spectral_radius(&jacs[2]);
            d.r_xi1 = spectral_radius(&jacs[3]);
        }
    }
    let all = [d.lambda, d.l0, d.l1, d.c0, d.c1, d.r_xi0, d.r_xi1, d.alpha];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(LensError::EvaluationOutsideDomain("non-finite derivative estimate".into()));
    }
    d.contraction_ok = d.c0 + d.c1 < 1.0;
    if d.contraction_ok {
        d.mu_min = Some((d.lambda + (d.l0 + d.l1) * d.alpha) / (1.0 - d.c0 - d.c1));
    }
    Ok(d)
}

/// Samples of `Z` and `Z'` on a uniform grid over `[-delta, delta]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSolution {
    pub delta: f64,
    pub grid_n: usize,
    pub t: Vec<f64>,
    #[serde(rename = "Z")]
    pub z: Vec<Vec<f64>>,
    #[serde(rename = "Zprime")]
    pub zprime: Vec<Vec<f64>>,
    pub residual: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub residual_history: Vec<f64>,
}

/// Observed Lipschitz constants of the samples against the configured bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassCheck {
    pub lip_z: f64,
    pub lip_zprime: f64,
    pub max_z1_excess: f64,
    pub within: bool,
}

fn grid_nodes(delta: f64, grid_n: usize) -> Vec<f64> {
    if grid_n == 1 {
        return vec![0.0];
    }
    let c = (grid_n - 1) / 2;
    let h = delta / c as f64;
    (0..grid_n).map(|i| (i as f64 - c as f64) * h).collect()
}

impl GridSolution {
    /// Seed iterate `Z(t) = t P`.
    pub fn seed(anchor: &AnchorP, delta: f64, grid_n: usize) -> Result<Self> {
        if grid_n % 2 == 0 || grid_n == 0 {
            return Err(LensError::InvalidInput(format!("grid_n must be odd so that t = 0 is a node, got {grid_n}")));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(LensError::InvalidInput(format!("delta must be positive, got {delta}")));
        }
        let t = grid_nodes(delta, grid_n);
        let z = t.iter().map(|ti| anchor.p.iter().map(|p| ti * p).collect()).collect();
        let zprime = vec![anchor.p.clone(); grid_n];
        Ok(Self { delta, grid_n, t, z, zprime, residual: f64::INFINITY, iterations: 0, residual_history: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.z.first().map_or(0, |v| v.len())
    }

    pub fn center(&self) -> usize {
        (self.grid_n - 1) / 2
    }

    pub fn grid(&self) -> UniformGrid {
        UniformGrid::from_nodes(&self.t)
    }

    /// `(Z(s), Z'(s))` from the cubic Hermite interpolant of the samples.
    pub fn eval(&self, s: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.grid_n == 1 {
            return (s.abs() <= 1e-300).then(|| (self.z[0].clone(), self.zprime[0].clone()));
        }
        let g = self.grid();
        let (k, u) = g.locate(s, 1e-9 * g.h)?;
        let n = self.dim();
        let mut z = vec![0.0; n];
        let mut zp = vec![0.0; n];
        for i in 0..n {
            let (v, d) = hermite(u, g.h, self.z[k][i], self.z[k + 1][i], self.zprime[k][i], self.zprime[k + 1][i]);
            z[i] = v;
            zp[i] = d;
        }
        Some((z, zp))
    }

    /// Component `i` of `Z` at every node.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.z.iter().map(|v| v[i]).collect()
    }

    pub fn component_prime(&self, i: usize) -> Vec<f64> {
        self.zprime.iter().map(|v| v[i]).collect()
    }

    pub fn check_class(&self, alpha: f64, mu: f64, norm: &WeightedNorm) -> ClassCheck {
        let mut lip_z = 0.0f64;
        let mut lip_zprime = 0.0f64;
        for k in 1..self.grid_n {
            let dt = self.t[k] - self.t[k - 1];
            lip_z = lip_z.max(norm.dist(&self.z[k], &self.z[k - 1]) / dt);
            lip_zprime = lip_zprime.max(norm.dist(&self.zprime[k], &self.zprime[k - 1]) / dt);
        }
        let max_z1_excess = self.t.iter().zip(&self.z).map(|(t, z)| z[0].abs() - t.abs()).fold(f64::NEG_INFINITY, f64::max);
        ClassCheck {
            lip_z,
            lip_zprime,
            max_z1_excess,
            within: lip_z <= alpha * (1.0 + 1e-9) && lip_zprime <= mu * (1.0 + 1e-9) && max_z1_excess <= 0.0,
        }
    }

    /// Largest `|Z'(t_i) - H(V_Z(t_i))|` over the nodes.
    pub fn relation_residual<H: HMap + ?Sized>(&self, h: &H, anchor: &AnchorP, norm: &WeightedNorm) -> Result<f64> {
        let (rhs, _) = apply_operator(h, self, anchor, f64::INFINITY, norm)?;
        Ok(rhs.iter().zip(&self.zprime).map(|(a, b)| norm.dist(a, b)).fold(0.0, f64::max))
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// Values of `H` along the current iterate, and the neighbourhood gauge
/// `max_t |t| + |Z| + |Z o z1| + |Z' - P| + |Z' o z1 - P|`.
fn apply_operator<H: HMap + ?Sized>(
    h: &H,
    cur: &GridSolution,
    anchor: &AnchorP,
    eps: f64,
    norm: &WeightedNorm,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = h.dim();
    let composes = h.uses_composition();
    let grid_tol = if cur.grid_n > 1 { 1e-9 * cur.grid().h } else { 0.0 };
    let pinned = vec![0.0; n];
    let mut gauge = 0.0f64;
    let mut out = Vec::with_capacity(cur.grid_n);
    for k in 0..cur.grid_n {
        let t = cur.t[k];
        let (z1, zp1) = if composes {
            let s = cur.z[k][0];
            if !(s.abs() <= t.abs() + grid_tol) {
                return Err(LensError::CompositionOutOfRange { t, z1: s });
            }
            if k == cur.center() {
                (cur.z[k].clone(), cur.zprime[k].clone())
            } else {
                cur.eval(s).ok_or(LensError::CompositionOutOfRange { t, z1: s })?
            }
        } else {
            (pinned.clone(), anchor.p.clone())
        };
        let s = t.abs()
            + norm.norm(&cur.z[k])
            + norm.norm(&z1)
            + norm.dist(&cur.zprime[k], &anchor.p)
            + norm.dist(&zp1, &anchor.p);
        gauge = gauge.max(s);
        if s > eps * (1.0 + 1e-12) {
            return Err(LensError::DeltaTooLarge { delta: cur.delta });
        }
        let mut v = vec![0.0; n];
        h.eval(&HArgs { t, zeta0: &cur.z[k], zeta1: &z1, xi0: &cur.zprime[k], xi1: &zp1 }, &mut v)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(LensError::SingularEvaluation { guard: "non-finite value of H" });
        }
        out.push(v);
    }
    Ok((out, gauge))
}

/// One application of `T Z(t) = int_0^t H(V_Z(s)) ds` without the neighbourhood check.
pub fn picard_step<H: HMap + ?Sized>(h: &H, current: &GridSolution, anchor: &AnchorP, norm: &WeightedNorm) -> Result<GridSolution> {
    picard_step_within(h, current, anchor, f64::INFINITY, norm)
}

fn picard_step_within<H: HMap + ?Sized>(
    h: &H,
    current: &GridSolution,
    anchor: &AnchorP,
    eps: f64,
    norm: &WeightedNorm,
) -> Result<GridSolution> {
    let (zprime, _) = apply_operator(h, current, anchor, eps, norm)?;
    let n = h.dim();
    let c = current.center();
    let gn = current.grid_n;
    let mut z = vec![vec![0.0; n]; gn];
    if gn > 1 {
        let hstep = current.grid().h;
        for i in 0..n {
            let right: Vec<f64> = (c..gn).map(|k| zprime[k][i]).collect();
            let left: Vec<f64> = (0..=c).rev().map(|k| zprime[k][i]).collect();
            for (j, v) in cumulative_simpson(&right, hstep).into_iter().enumerate() {
                z[c + j][i] = v;
            }
            for (j, v) in cumulative_simpson(&left, hstep).into_iter().enumerate() {
                z[c - j][i] = -v;
            }
        }
    }
    let step = norm_c1(&z, &zprime, current, norm);
    let mut history = current.residual_history.clone();
    history.push(step);
    Ok(GridSolution {
        delta: current.delta,
        grid_n: gn,
        t: current.t.clone(),
        z,
        zprime,
        residual: step,
        iterations: current.iterations + 1,
        residual_history: history,
    })
}

fn norm_c1(z: &[Vec<f64>], zp: &[Vec<f64>], other: &GridSolution, norm: &WeightedNorm) -> f64 {
    let a = z.iter().zip(&other.z).map(|(x, y)| norm.dist(x, y)).fold(0.0, f64::max);
    let b = zp.iter().zip(&other.zprime).map(|(x, y)| norm.dist(x, y)).fold(0.0, f64::max);
    a + b
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub delta: f64,
    pub grid_n: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Neighbourhood radius; defaults to `1e-2 (1 + |P|)`.
    pub eps: Option<f64>,
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { delta: 0.1, grid_n: 2001, tol: 1e-10, max_iter: 200, eps: None, max_halvings: 8 }
    }
}

pub fn default_eps(anchor: &AnchorP, norm: &WeightedNorm) -> f64 {
    1e-2 * (1.0 + norm.norm(&anchor.p))
}

/// Conservative initial cap on delta keeping the seed `t P` inside the neighbourhood.
pub fn seed_delta(anchor: &AnchorP, eps: f64, norm: &WeightedNorm, composes: bool) -> f64 {
    let pn = norm.norm(&anchor.p);
    let p1 = if composes { anchor.p[0].abs() } else { 0.0 };
    eps / (1.0 + pn + p1 * pn)
}

/// Runs Picard iteration from the seed `t P` at a fixed delta.
pub fn iterate_fixed_delta<H: HMap + ?Sized>(
    h: &H,
    anchor: &AnchorP,
    delta: f64,
    cfg: &SolverConfig,
    eps: f64,
    norm: &WeightedNorm,
) -> Result<GridSolution> {
    let mut cur = GridSolution::seed(anchor, delta, cfg.grid_n)?;
    for _ in 0..cfg.max_iter {
        let next = picard_step_within(h, &cur, anchor, eps, norm)?;
        if !next.residual.is_finite() {
            return Err(LensError::NoConvergence { iterations: next.iterations, residual: next.residual });
        }
        cur = next;
        if cur.residual <= cfg.tol {
            return Ok(cur);
        }
    }
    Err(LensError::NoConvergence { iterations: cur.iterations, residual: cur.residual })
}

/// Solves the functional differential equation near the anchor, halving delta when the
/// iterates leave the neighbourhood or fail to converge.
pub fn solve_fde<H: HMap + ?Sized>(h: &H, anchor: &AnchorP, cfg: &SolverConfig, norm: &WeightedNorm) -> Result<GridSolution> {
    if h.dim() != anchor.p.len() || norm.dim() != h.dim() {
        return Err(LensError::InvalidInput("dimension mismatch between map, anchor and weights".into()));
    }
    if cfg.tol <= 0.0 || cfg.max_iter == 0 {
        return Err(LensError::InvalidInput("tol must be positive and max_iter non-zero".into()));
    }
    let composes = h.uses_composition();
    if composes && !anchor.p1_within_unit {
        return Err(LensError::InvalidInput(format!("anchor has |p1| = {} > 1", anchor.p[0].abs())));
    }
    let eps = cfg.eps.unwrap_or_else(|| default_eps(anchor, norm));
    let diag = contraction_diagnostics(h, anchor, eps, norm)?;
    if !diag.contraction_ok {
        return Err(LensError::NotContractive { c0: diag.c0, c1: diag.c1 });
    }
    let mut delta = cfg.delta.min(seed_delta(anchor, eps, norm, composes));
    let mut last = LensError::DeltaTooLarge { delta };
    for _ in 0..=cfg.max_halvings {
        match iterate_fixed_delta(h, anchor, delta, cfg, eps, norm) {
            Ok(sol) => return Ok(sol),
            Err(
                e @ (LensError::DeltaTooLarge { .. }
                | LensError::NoConvergence { .. }
                | LensError::CompositionOutOfRange { .. }),
            ) => {
                last = match e {
                    LensError::NoConvergence { .. } => e,
                    _ => LensError::DeltaTooLarge { delta },
                };
                delta *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}
