//! Natural cubic spline interpolation.

use crate::error::{Error, Result};
use crate::Scalar;

/// Interpolating cubic spline with zero second derivative at both ends.
#[derive(Debug, Clone)]
pub struct NaturalCubicSpline<T> {
    x: Vec<T>,
    y: Vec<T>,
    /// Second derivatives at the knots.
    m: Vec<T>,
}

impl<T: Scalar> NaturalCubicSpline<T> {
    /// Builds the spline through `(x[i], y[i])`. Knots must be strictly
    /// increasing; at least two are required.
    pub fn new(x: &[T], y: &[T]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        let n = x.len();
        if n < 2 {
            return Err(Error::TooShort { needed: 2, got: n });
        }
        if let Some(row) = x.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotonicCycles { row: row + 1 });
        }
        let mut m = vec![T::zero(); n];
        if n > 2 {
            // Tridiagonal system for interior second derivatives (Thomas algorithm).
            let k = n - 2;
            let six = T::of(6.0);
            let two = T::of(2.0);
            let mut diag = Vec::with_capacity(k);
            let mut upper = Vec::with_capacity(k);
            let mut lower = Vec::with_capacity(k);
            let mut rhs = Vec::with_capacity(k);
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                lower.push(h0);
                diag.push(two * (h0 + h1));
                upper.push(h1);
                rhs.push(six * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0));
            }
            for i in 1..k {
                let w = lower[i] / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] = rhs[i] - w * rhs[i - 1];
            }
            let mut sol = vec![T::zero(); k];
            sol[k - 1] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                sol[i] = (rhs[i] - upper[i] * sol[i + 1]) / diag[i];
            }
            m[1..n - 1].copy_from_slice(&sol);
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    /// Evaluates the spline. Outside the knot range the end cubic pieces
    /// are extrapolated.
    pub fn eval(&self, t: T) -> T {
        let n = self.x.len();
        // segment index i with x[i] <= t < x[i+1], clamped to valid segments
        let i = match self
            .x
            .binary_search_by(|v| v.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let six = T::of(6.0);
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / six
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_through_knots() {
        let x = [0.0, 1.0, 3.0, 4.0, 7.0];
        let y = [0.5, 1.0, 9.0, 16.0, -2.0];
        let s = NaturalCubicSpline::new(&x, &y).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            assert_eq!(s.eval(*xi), yi);
        }
    }

    #[test]
    fn two_points_is_linear() {
        let s = NaturalCubicSpline::<f64>::new(&[0.0, 2.0], &[1.0, 3.0]).unwrap();
        assert!((s.eval(0.5) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn reproduces_straight_lines() {
        let x = [0.0, 0.5, 2.0, 3.5, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.3 * v).collect();
        let s = NaturalCubicSpline::new(&x, &y).unwrap();
        for t in [0.25, 1.0, 2.7, 3.9] {
            assert!((s.eval(t) - (2.0 - 0.3 * t)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_unsorted_knots() {
        let err = NaturalCubicSpline::new(&[0.0, 2.0, 1.0], &[0.0, 1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::NonMonotonicCycles { .. }));
    }
}
