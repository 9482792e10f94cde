//! Vector Snell law in the plane.
//!
//! A ray with unit direction `x` crossing an interface with unit normal `nu`
//! (pointing into the second medium) leaves with direction
//! `m = (x - lambda * nu) / kappa`, where `kappa = n2 / n1` and
//! `lambda = phi_kappa(x . nu, kappa)`.

use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};

pub const UNIT_TOL: f64 = 1e-12;

/// Unit vector in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction2 {
    x: f64,
    y: f64,
}

impl Direction2 {
    pub const E: Direction2 = Direction2 { x: 0.0, y: 1.0 };

    /// Builds a direction, renormalizing when the input is off the unit circle by more than
    /// [`UNIT_TOL`].
    pub fn new(x: f64, y: f64) -> Result<Self> {
        let r = x.hypot(y);
        if !r.is_finite() || r == 0.0 {
            return Err(LensError::Domain(format!("cannot normalize ({x}, {y})")));
        }
        if (r - 1.0).abs() > UNIT_TOL {
            Ok(Self { x: x / r, y: y / r })
        } else {
            Ok(Self { x, y })
        }
    }

    /// Direction making angle `theta` with the vertical axis, measured towards +x.
    pub fn from_angle(theta: f64) -> Self {
        Self { x: theta.sin(), y: theta.cos() }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn dot(&self, other: &Direction2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(&self, other: &Direction2) -> f64 {
        cross2([self.x, self.y], [other.x, other.y])
    }

    pub fn neg(&self) -> Direction2 {
        Direction2 { x: -self.x, y: -self.y }
    }

    /// Angle in radians between two directions; well conditioned near zero.
    pub fn angle_to(&self, other: &Direction2) -> f64 {
        self.cross(other).abs().atan2(self.dot(other))
    }
}

pub fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumPair {
    pub n1: f64,
    pub n2: f64,
}

impl MediumPair {
    pub fn new(n1: f64, n2: f64) -> Result<Self> {
        if !(n1.is_finite() && n2.is_finite() && n1 >= 1.0 && n2 >= 1.0) {
            return Err(LensError::Domain(format!("refractive indices must be >= 1, got {n1}, {n2}")));
        }
        Ok(Self { n1, n2 })
    }

    pub fn kappa(&self) -> f64 {
        self.n2 / self.n1
    }
}

/// `s - sqrt(kappa^2 - 1 + s^2)` where `s` is the cosine of the incidence angle.
pub fn phi_kappa(s: f64, kappa: f64) -> Result<f64> {
    if !(s.abs() <= 1.0 + UNIT_TOL) || !(kappa > 0.0) {
        return Err(LensError::Domain(format!("phi_kappa(s = {s}, kappa = {kappa})")));
    }
    let s = s.clamp(-1.0, 1.0);
    let radicand = kappa * kappa - 1.0 + s * s;
    if kappa < 1.0 && s < (1.0 - kappa * kappa).sqrt() {
        return Err(LensError::TotalInternalReflection { cos_incidence: s, kappa });
    }
    let root = radicand.max(0.0).sqrt();
    let denom = s + root;
    if denom > 0.0 {
        // rationalized form avoids cancellation when kappa is close to 1
        Ok((1.0 - kappa) * (1.0 + kappa) / denom)
    } else {
        Ok(s - root)
    }
}

/// Refracted direction of `x` at an interface with normal `nu`.
pub fn refract(x: &Direction2, nu: &Direction2, media: &MediumPair) -> Result<Direction2> {
    let s = x.dot(nu);
    if s < -UNIT_TOL {
        return Err(LensError::Domain(format!("ray meets the interface from the wrong side (x.nu = {s})")));
    }
    let kappa = media.kappa();
    let lambda = phi_kappa(s.max(0.0), kappa)?;
    Direction2::new((x.x - lambda * nu.x) / kappa, (x.y - lambda * nu.y) / kappa)
}

/// `|n1 (x cross nu) - n2 (m cross nu)|`.
pub fn snell_residual(x: &Direction2, m: &Direction2, nu: &Direction2, media: &MediumPair) -> f64 {
    (media.n1 * x.cross(nu) - media.n2 * m.cross(nu)).abs()
}

/// Outer unit normal of the polar curve `rho(t) (sin t, cos t)`.
pub fn polar_normal(rho: f64, rho_prime: f64, t: f64) -> Result<Direction2> {
    if !(rho > 0.0) {
        return Err(LensError::Domain(format!("polar radius must be positive, got {rho}")));
    }
    let (s, c) = t.sin_cos();
    let r = rho.hypot(rho_prime);
    Direction2::new((rho * s - rho_prime * c) / r, (rho_prime * s + rho * c) / r)
}
