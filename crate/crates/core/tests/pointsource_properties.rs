//! Feasibility, anchor and weight properties over random index pairs and distances.

use dichroic_lens::fde::{contraction_diagnostics, solve_algebraic_anchor, HArgs, HMap};
use dichroic_lens::numerics::spectral_radius;
use dichroic_lens::pointsource::{
    build_h, build_norm_weights, feasibility, k0_threshold, Feasibility, HContext,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Central-difference Jacobian of `H(0; 0, 0; xi0, xi1)` at `xi0 = xi1 = p` in one block.
fn jacobian(h: &impl HMap, p: &[f64], second: bool) -> DMatrix<f64> {
    let zero = [0.0; 5];
    let eval = |q: &[f64]| {
        let (a, b) = if second { (p, q) } else { (q, p) };
        h.eval_vec(&HArgs { t: 0.0, zeta0: &zero, zeta1: &zero, xi0: a, xi1: b }).unwrap()
    };
    let mut j = DMatrix::zeros(5, 5);
    for c in 0..5 {
        let step = 1e-6 * p[c].abs().max(1.0);
        let mut up = p.to_vec();
        let mut down = p.to_vec();
        up[c] += step;
        down[c] -= step;
        let (fu, fd) = (eval(&up), eval(&down));
        for r in 0..5 {
            j[(r, c)] = (fu[r] - fd[r]) / (2.0 * step);
        }
    }
    j
}

fn params() -> impl Strategy<Value = (f64, f64, f64)> {
    (1.3f64..1.8, 0.01f64..0.5, 0.01f64..2.0)
        .prop_filter("away from the threshold", |(_, _, frac)| (frac - 1.0).abs() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classification_matches_threshold((n_r, dn, frac) in params()) {
        let n_b = n_r + dn;
        let k0 = frac * k0_threshold(n_r, n_b);
        let ctx = HContext::new(n_r, n_b, 1.0, 1.0 / k0).unwrap();
        let rep = feasibility(&ctx);
        prop_assert!(ctx.delta_r() > ctx.delta_b());
        prop_assert_eq!(rep.feasible == Feasibility::Infeasible, frac > 1.0);
        prop_assert_eq!(rep.discriminant < 0.0, frac > 1.0);
        if rep.feasible == Feasibility::Feasible {
            let (p1, q1) = (rep.p1.unwrap(), rep.p1_prime.unwrap());
            prop_assert!(0.0 < p1.abs() && p1.abs() < 1.0 && 1.0 < q1.abs());
            let ratio = rep.rho2_over_rho0.unwrap();
            prop_assert!(ctx.delta_b() < ratio && ratio < ctx.delta_r());
            let s = ctx.delta_r() / n_r + ctx.delta_b() / n_b;
            prop_assert!((ratio - (2.0 + s + rep.discriminant.sqrt()) / 2.0).abs() <= 1e-12 * ratio);
            let p = rep.p.unwrap();
            prop_assert_eq!((p[1], p[2], p[4]), (0.0, ctx.rho0, 0.0));
        } else {
            prop_assert!(rep.p.is_none() && build_norm_weights(&ctx).is_err());
        }
    }

    #[test]
    fn closed_form_anchor_is_a_fixed_point((n_r, dn, frac) in params(), rho0 in 0.1f64..10.0) {
        prop_assume!(frac < 1.0);
        let n_b = n_r + dn;
        let k0 = frac * k0_threshold(n_r, n_b);
        let ctx = HContext::new(n_r, n_b, rho0, rho0 / k0).unwrap();
        let p = feasibility(&ctx).p.unwrap();
        let h = build_h(&ctx);
        let zero = [0.0; 5];
        let v = h.eval_vec(&HArgs { t: 0.0, zeta0: &zero, zeta1: &zero, xi0: &p, xi1: &p }).unwrap();
        for (a, b) in v.iter().zip(&p) {
            prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{:?} vs {:?}", v, p);
        }
    }

    #[test]
    fn weights_bound_the_local_jacobian((n_r, dn, frac) in params()) {
        prop_assume!(frac < 1.0);
        let n_b = n_r + dn;
        let k0 = frac * k0_threshold(n_r, n_b);
        let ctx = HContext::new(n_r, n_b, 1.0, 1.0 / k0).unwrap();
        let rep = feasibility(&ctx);
        let p = rep.p.unwrap();
        let w = build_norm_weights(&ctx).unwrap();
        prop_assert!(w.weights.iter().all(|x| *x > 0.0));
        prop_assert!(w.delta0 < w.delta1 && w.delta1 < w.delta2 && w.delta2 < 1.0);
        let h = build_h(&ctx);
        let induced = w.norm().induced(&jacobian(&h, &p, false));
        prop_assert!(induced <= (w.delta1 / w.delta2).max(w.delta2) + 1e-6, "induced norm {}", induced);
        let r1 = spectral_radius(&jacobian(&h, &p, true));
        prop_assert!((r1 - rep.p1.unwrap().abs()).abs() <= 1e-6, "R_xi1 {} vs |p1| {}", r1, rep.p1.unwrap());
    }
}

#[test]
fn h4_slope_at_anchor() {
    let ctx = HContext::new(1.5, 1.7, 2.0, 400.0).unwrap();
    let p = feasibility(&ctx).p.unwrap();
    let j = jacobian(&build_h(&ctx), &p, false);
    let expected = ctx.rho0 * (ctx.delta_b() / ctx.n_b + p[3] / ctx.rho0);
    assert!((j[(3, 0)] - expected).abs() <= 1e-6 * expected.abs().max(1.0), "{} vs {expected}", j[(3, 0)]);
}

#[test]
fn small_k0_is_contractive_with_built_weights() {
    let ctx = HContext::new(1.5, 1.7, 1.0, 1000.0).unwrap();
    let h = build_h(&ctx);
    let anchor = solve_algebraic_anchor(&h, &feasibility(&ctx).p.unwrap()).unwrap();
    let norm = build_norm_weights(&ctx).unwrap().norm();
    let d = contraction_diagnostics(&h, &anchor, 5e-3, &norm).unwrap();
    assert!(d.contraction_ok, "{d:?}");
    assert!((d.r_xi1 - anchor.p[0].abs()).abs() <= 1e-6);
}
