//! Small numerical kernels shared by the modules: a tridiagonal solver,
//! natural cubic splines, finite-difference weights and the C^∞ step.

use crate::error::{Error, Result};

/// `exp(-1/τ)` for `τ > 0`, zero otherwise.
#[inline]
fn flat_exp(tau: f64) -> f64 {
    if tau > 0.0 {
        (-1.0 / tau).exp()
    } else {
        0.0
    }
}

/// C^∞ transition from 0 (τ ≤ 0) to 1 (τ ≥ 1), symmetric about τ = 1/2.
#[inline]
pub fn smooth_step(tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    if tau >= 1.0 {
        return 1.0;
    }
    let a = flat_exp(tau);
    let b = flat_exp(1.0 - tau);
    a / (a + b)
}

/// Composite trapezoid weights on a uniform grid of `n` points.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n > 0 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    }
    w
}

/// Solve a tridiagonal system in place (Thomas algorithm).
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (`lower[0]` unused), `upper[i]`
/// multiplies `x[i+1]` (`upper[n-1]` unused). `rhs` is overwritten with the
/// solution. No pivoting: callers pass diagonally dominant systems.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    debug_assert!(lower.len() == n && diag.len() == n && upper.len() == n);
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        c[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i];
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] -= c[i + 1] * next;
    }
}

/// Natural cubic spline on a uniform grid. Queries outside the knot range
/// are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x0: f64,
    h: f64,
    y: Vec<f64>,
    /// second derivatives at the knots
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(x0: f64, h: f64, y: &[f64]) -> Result<Self> {
        let n = y.len();
        if n < 4 {
            return Err(Error::TooFewPoints(n));
        }
        let mut m = vec![0.0; n];
        // interior: m[i-1] + 4 m[i] + m[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1]) / h²
        let k = n - 2;
        let lower = vec![1.0; k];
        let diag = vec![4.0; k];
        let upper = vec![1.0; k];
        let mut rhs: Vec<f64> = (1..n - 1)
            .map(|i| 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h))
            .collect();
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
        m[1..n - 1].copy_from_slice(&rhs);
        Ok(Self {
            x0,
            h,
            y: y.to_vec(),
            m,
        })
    }

    pub fn lo(&self) -> f64 {
        self.x0
    }

    pub fn hi(&self) -> f64 {
        self.x0 + self.h * (self.y.len() - 1) as f64
    }

    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let (lo, hi) = (self.lo(), self.hi());
        // allow a few ulps of slack at the closed ends
        let slack = 1e-12 * (hi - lo).abs().max(1.0);
        if !(x >= lo - slack && x <= hi + slack) {
            return Err(Error::OutOfRange { m2: x, lo, hi });
        }
        let s = ((x - self.x0) / self.h).clamp(0.0, (self.y.len() - 1) as f64);
        let i = (s.floor() as usize).min(self.y.len() - 2);
        Ok((i, s - i as f64))
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let (i, t) = self.locate(x)?;
        let h = self.h;
        let (a, b) = (1.0 - t, t);
        Ok(a * self.y[i]
            + b * self.y[i + 1]
            + h * h / 6.0 * ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]))
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        let (i, t) = self.locate(x)?;
        let h = self.h;
        let (a, b) = (1.0 - t, t);
        Ok((self.y[i + 1] - self.y[i]) / h
            + h / 6.0 * (-(3.0 * a * a - 1.0) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]))
    }

    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        let (i, t) = self.locate(x)?;
        Ok((1.0 - t) * self.m[i] + t * self.m[i + 1])
    }
}

/// Fornberg's finite-difference weights for the `order`-th derivative at
/// `x0` from the nodes `xs`.
pub fn fd_weights(x0: f64, xs: &[f64], order: usize) -> Vec<f64> {
    let n = xs.len();
    assert!(n > order, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0; order + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_step_shape() {
        assert_eq!(smooth_step(-0.1), 0.0);
        assert_eq!(smooth_step(1.3), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        for k in 1..100 {
            let t = k as f64 / 100.0;
            assert!((smooth_step(t) + smooth_step(1.0 - t) - 1.0).abs() < 1e-14);
            assert!(smooth_step(t) >= smooth_step(t - 0.01));
        }
    }

    #[test]
    fn tridiagonal_matches_dense() {
        let lower = [0.0, -1.0, 0.5, -0.3];
        let diag = [4.0, 5.0, 3.0, 2.0];
        let upper = [1.0, 0.7, -0.2, 0.0];
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut b = [0.0; 4];
        for i in 0..4 {
            b[i] = diag[i] * x[i];
            if i > 0 {
                b[i] += lower[i] * x[i - 1];
            }
            if i < 3 {
                b[i] += upper[i] * x[i + 1];
            }
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut b);
        for i in 0..4 {
            assert!((b[i] - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn spline_reproduces_knots_and_lines() {
        let y: Vec<f64> = (0..11).map(|i| 2.0 * i as f64 * 0.1 - 1.0).collect();
        let s = CubicSpline::natural(0.0, 0.1, &y).unwrap();
        for i in 0..11 {
            assert!((s.eval(i as f64 * 0.1).unwrap() - y[i]).abs() < 1e-14);
        }
        assert!((s.eval(0.37).unwrap() - (0.74 - 1.0)).abs() < 1e-14);
        assert!((s.derivative(0.37).unwrap() - 2.0).abs() < 1e-12);
        assert!(s.eval(1.01).is_err());
        assert!(s.eval(-0.5).is_err());
    }

    #[test]
    fn spline_needs_four_points() {
        assert!(matches!(
            CubicSpline::natural(0.0, 1.0, &[1.0]),
            Err(Error::TooFewPoints(1))
        ));
    }

    #[test]
    fn spline_accuracy_on_smooth_function() {
        let n = 201;
        let h = 1.0 / (n - 1) as f64;
        let y: Vec<f64> = (0..n).map(|i| (3.0 * i as f64 * h).sin()).collect();
        let s = CubicSpline::natural(0.0, h, &y).unwrap();
        // away from the natural ends the error is fourth order
        for k in 0..50 {
            let x = 0.3 + 0.4 * k as f64 / 50.0 + 0.3 * h;
            assert!((s.eval(x).unwrap() - (3.0 * x).sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn fornberg_known_stencils() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] + 2.0).abs() < 1e-14);
        let w = fd_weights(0.0, &[0.0, 1.0, 2.0], 1);
        assert!((w[0] + 1.5).abs() < 1e-14 && (w[1] - 2.0).abs() < 1e-14 && (w[2] + 0.5).abs() < 1e-14);
        let w = fd_weights(0.0, &[0.0, 1.0, 2.0, 3.0], 2);
        let expect = [2.0, -5.0, 4.0, -1.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
