//! Small numerical kernels shared by the solver and the tracer.

use nalgebra::DMatrix;

/// Value and derivative of the cubic Hermite interpolant on `[t0, t0 + h]` at `t0 + s * h`.
pub fn hermite(s: f64, h: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> (f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let value = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dh00 = 6.0 * s2 - 6.0 * s;
    let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
    let dh01 = -dh00;
    let dh11 = 3.0 * s2 - 2.0 * s;
    let deriv = (dh00 * y0 + dh01 * y1) / h + dh10 * d0 + dh11 * d1;
    (value, deriv)
}

/// Uniform grid `t0 + i h`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub t0: f64,
    pub h: f64,
    pub n: usize,
}

impl UniformGrid {
    pub fn from_nodes(t: &[f64]) -> Self {
        let n = t.len();
        let h = if n > 1 { (t[n - 1] - t[0]) / (n - 1) as f64 } else { 0.0 };
        Self { t0: t[0], h, n }
    }

    pub fn t_max(&self) -> f64 {
        self.t0 + self.h * (self.n.saturating_sub(1)) as f64
    }

    /// Interval index and local coordinate in `[0, 1]`; `None` outside the grid.
    pub fn locate(&self, t: f64, slack: f64) -> Option<(usize, f64)> {
        if self.n < 2 {
            return None;
        }
        if t < self.t0 - slack || t > self.t_max() + slack {
            return None;
        }
        let x = (t - self.t0) / self.h;
        let k = (x.floor().max(0.0) as usize).min(self.n - 2);
        Some((k, (x - k as f64).clamp(0.0, 1.0)))
    }
}

/// Finite-difference weights for the `order`-th derivative at `x0` on `nodes` (Fornberg).
pub fn fd_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// First derivative of uniformly spaced samples with a `width`-point stencil,
/// centred in the interior and shifted near the ends.
pub fn uniform_derivative(y: &[f64], h: f64, width: usize) -> Vec<f64> {
    let n = y.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let w = width.min(n);
    let half = w / 2;
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; w];
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(half).min(n - w);
            let offset = i - start;
            let weights = cache[offset].get_or_insert_with(|| {
                let nodes: Vec<f64> = (0..w).map(|k| k as f64).collect();
                fd_weights(offset as f64, &nodes, 1)
            });
            weights.iter().zip(&y[start..start + w]).map(|(c, v)| c * v).sum::<f64>() / h
        })
        .collect()
}

/// First derivative of uniformly spaced samples from local least-squares polynomial fits.
///
/// Each node uses a `window`-point window (shifted near the ends) and a polynomial of the
/// given degree. Wider windows damp the roundoff that a narrow stencil amplifies on very
/// fine grids; values are taken relative to the node so constant offsets cancel exactly.
pub fn smoothed_derivative(y: &[f64], h: f64, window: usize, degree: usize) -> Vec<f64> {
    let n = y.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let w = window.min(n);
    let deg = degree.min(w - 1).max(1);
    let half = w / 2;
    let scale = 0.5 * (w - 1) as f64;
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; w];
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(half).min(n - w);
            let offset = i - start;
            let weights = cache[offset].get_or_insert_with(|| {
                let v = DMatrix::from_fn(w, deg + 1, |j, k| ((j as f64 - offset as f64) / scale).powi(k as i32));
                let pinv = v.svd(true, true).pseudo_inverse(1e-14).expect("svd with vectors");
                (0..w).map(|j| pinv[(1, j)] / scale).collect()
            });
            let y0 = y[i];
            weights.iter().zip(&y[start..start + w]).map(|(c, v)| c * (v - y0)).sum::<f64>() / h
        })
        .collect()
}

/// First derivative that uses a 7-point stencil on coarse grids and the least-squares fit
/// where the two agree to within the stencil's rounding noise.
pub fn fine_grid_derivative(y: &[f64], h: f64) -> Vec<f64> {
    let fd = uniform_derivative(y, h, 7);
    let fit = smoothed_derivative(y, h, 61, 6);
    fd.iter()
        .zip(&fit)
        .zip(y)
        .map(|((a, b), v)| {
            let noise = 64.0 * f64::EPSILON * v.abs().max(f64::MIN_POSITIVE) / h;
            if (a - b).abs() <= noise {
                *b
            } else {
                *a
            }
        })
        .collect()
}

/// Cumulative integral from the first sample: `out[k] = int_{x_0}^{x_k} f`.
///
/// Composite Simpson on an even number of intervals; odd counts finish with the
/// three-eighths rule, and a single interval uses the quadratic through three samples.
pub fn cumulative_simpson(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    let mut even = vec![0.0; n];
    for k in (2..n).step_by(2) {
        even[k] = even[k - 2] + h / 3.0 * (f[k - 2] + 4.0 * f[k - 1] + f[k]);
    }
    for k in 1..n {
        out[k] = if k % 2 == 0 {
            even[k]
        } else if k == 1 {
            if n > 2 {
                h / 12.0 * (5.0 * f[0] + 8.0 * f[1] - f[2])
            } else {
                0.5 * h * (f[0] + f[1])
            }
        } else {
            even[k - 3] + 3.0 * h / 8.0 * (f[k - 3] + 3.0 * f[k - 2] + 3.0 * f[k - 1] + f[k])
        };
    }
    out
}

/// Radical inverse of `index` in the given prime base.
pub fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

pub const PRIMES: [usize; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Weighted max norm `max_i w_i |x_i|`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNorm {
    weights: Vec<f64>,
}

impl WeightedNorm {
    pub fn new(weights: Vec<f64>) -> Self {
        assert!(weights.iter().all(|w| *w > 0.0 && w.is_finite()), "weights must be positive");
        Self { weights }
    }

    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0; n] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v.abs()).fold(0.0, f64::max)
    }

    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(x.iter().zip(y))
            .map(|(w, (a, b))| w * (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Induced operator norm `max_i w_i sum_j |a_ij| / w_j`.
    pub fn induced(&self, a: &DMatrix<f64>) -> f64 {
        (0..a.nrows())
            .map(|i| {
                self.weights[i]
                    * (0..a.ncols()).map(|j| a[(i, j)].abs() / self.weights[j]).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Norm of a column, used for vectors of partial derivatives in `t`.
    pub fn norm_col(&self, a: &DMatrix<f64>, col: usize) -> f64 {
        (0..a.nrows()).map(|i| self.weights[i] * a[(i, col)].abs()).fold(0.0, f64::max)
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hermite_reproduces_cubics() {
        let f = |x: f64| 2.0 * x * x * x - x * x + 3.0 * x - 1.0;
        let df = |x: f64| 6.0 * x * x - 2.0 * x + 3.0;
        let (a, h) = (0.3, 0.7);
        for s in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let (v, d) = hermite(s, h, f(a), f(a + h), df(a), df(a + h));
            assert_abs_diff_eq!(v, f(a + s * h), epsilon = 1e-13);
            assert_abs_diff_eq!(d, df(a + s * h), epsilon = 1e-12);
        }
    }

    #[test]
    fn fornberg_central_weights() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 1);
        assert_abs_diff_eq!(w[0], -0.5);
        assert_abs_diff_eq!(w[1], 0.0);
        assert_abs_diff_eq!(w[2], 0.5);
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_abs_diff_eq!(w[0], 1.0);
        assert_abs_diff_eq!(w[1], -2.0);
    }

    #[test]
    fn derivative_of_sine() {
        let h = 0.01;
        let y: Vec<f64> = (0..200).map(|i| (i as f64 * h).sin()).collect();
        let d = uniform_derivative(&y, h, 7);
        for (i, v) in d.iter().enumerate() {
            assert_abs_diff_eq!(*v, (i as f64 * h).cos(), epsilon = 1e-11);
        }
    }

    #[test]
    fn smoothed_derivative_on_fine_grid() {
        let h = 1e-7;
        let y: Vec<f64> = (0..500).map(|i| 1.0 + 1.5 * (i as f64 * h).powi(2)).collect();
        let d = smoothed_derivative(&y, h, 61, 6);
        for (i, v) in d.iter().enumerate() {
            assert_abs_diff_eq!(*v, 3.0 * i as f64 * h, epsilon = 2e-9);
        }
        let lin: Vec<f64> = (0..5).map(|i| 2.0 * i as f64).collect();
        for v in smoothed_derivative(&lin, 1.0, 61, 6) {
            assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let h = 0.1;
        let f: Vec<f64> = (0..12).map(|i| (i as f64 * h).powi(3)).collect();
        let out = cumulative_simpson(&f, h);
        for (k, v) in out.iter().enumerate().skip(2) {
            assert_abs_diff_eq!(*v, (k as f64 * h).powi(4) / 4.0, epsilon = 1e-14);
        }
        let g: Vec<f64> = (0..3).map(|i| (i as f64 * h).powi(2)).collect();
        assert_abs_diff_eq!(cumulative_simpson(&g, h)[1], h.powi(3) / 3.0, epsilon = 1e-16);
    }

    #[test]
    fn induced_norm_and_radius() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 4.0, 0.25, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&a), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(WeightedNorm::uniform(2).induced(&a), 4.0);
        let w = WeightedNorm::new(vec![1.0, 4.0]);
        assert_abs_diff_eq!(w.induced(&a), 1.0);
    }

    #[test]
    fn halton_first_terms() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(3, 2), 0.75);
        assert_abs_diff_eq!(halton(2, 3), 2.0 / 3.0);
    }
}
