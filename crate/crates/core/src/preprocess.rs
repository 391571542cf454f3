//! Savitzky-Golay smoothing and the discrete curvature proxy.

use crate::error::{Error, Result};
use crate::ingest::NormalizedSeries;
use crate::{Cycle, Scalar};

pub const DEFAULT_SG_WINDOW: usize = 21;
pub const DEFAULT_SG_ORDER: usize = 3;
pub const DEFAULT_CURV_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedSeries<T> {
    pub cycles: Vec<Cycle>,
    pub values: Vec<T>,
}

/// Second-difference curvature. `values[k]` belongs to cycle `first_cycle + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureSeries<T> {
    pub values: Vec<T>,
    pub first_cycle: Cycle,
    pub ws: usize,
}

impl<T: Scalar> CurvatureSeries<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cycle_at(&self, k: usize) -> Cycle {
        self.first_cycle + k as Cycle
    }
}

/// Center-point weights of the least-squares polynomial of degree `order`
/// over a window of `window` samples.
pub fn savgol_coefficients(window: usize, order: usize) -> Result<Vec<f64>> {
    if window.is_multiple_of(2) {
        return Err(Error::EvenWindow { window });
    }
    if window < 3 {
        return Err(Error::WindowTooSmall { window, min: 3 });
    }
    if order >= window {
        return Err(Error::OrderTooHigh { order, window });
    }
    let half = (window / 2) as f64;
    let terms = order + 1;
    // abscissae scaled to [-1, 1] keep the normal equations well conditioned
    let u: Vec<f64> = (0..window).map(|i| (i as f64 - half) / half).collect();
    let mut ata = vec![vec![0.0; terms]; terms];
    for &ui in &u {
        let mut pows = vec![1.0; 2 * terms - 1];
        for k in 1..pows.len() {
            pows[k] = pows[k - 1] * ui;
        }
        for r in 0..terms {
            for c in 0..terms {
                ata[r][c] += pows[r + c];
            }
        }
    }
    // weight i is row 0 of (AᵀA)⁻¹Aᵀ, i.e. (AᵀA)⁻¹ e₀ dotted with the monomials at u_i
    let mut e0 = vec![0.0; terms];
    e0[0] = 1.0;
    let z = crate::scalar::solve_dense(ata, e0).ok_or(Error::SingularNormalEquations)?;
    Ok(u.iter()
        .map(|&ui| {
            let mut acc = 0.0;
            let mut p = 1.0;
            for zk in &z {
                acc += zk * p;
                p *= ui;
            }
            acc
        })
        .collect())
}

/// Smooths `values` with mirror padding (the edge sample is not repeated).
pub fn savgol_filter<T: Scalar>(values: &[T], window: usize, order: usize) -> Result<Vec<T>> {
    let coeffs = savgol_coefficients(window, order)?;
    let n = values.len();
    if window > n {
        return Err(Error::WindowTooLarge { window, len: n });
    }
    let half = window / 2;
    let last = n as isize - 1;
    let at = |i: isize| -> T {
        let j = if i < 0 {
            -i
        } else if i > last {
            2 * last - i
        } else {
            i
        };
        values[j as usize]
    };
    let coeffs: Vec<T> = coeffs.into_iter().map(T::of).collect();
    Ok((0..n as isize)
        .map(|c| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &w)| w * at(c + k as isize - half as isize))
                .sum()
        })
        .collect())
}

pub fn savgol_smooth<T: Scalar>(
    series: &NormalizedSeries<T>,
    window: usize,
    order: usize,
) -> Result<SmoothedSeries<T>> {
    Ok(SmoothedSeries {
        cycles: series.cycles.clone(),
        values: savgol_filter(&series.values, window, order)?,
    })
}

/// Largest odd window not exceeding `len`, capped at `window`.
pub fn clip_window(window: usize, len: usize) -> usize {
    if window <= len {
        window
    } else if len % 2 == 1 {
        len
    } else {
        len.saturating_sub(1)
    }
}

/// `y[i-h] + y[i+h] - 2 y[i]` with `h = (ws-1)/2`, for every `i` whose
/// window fits.
pub fn curvature_values<T: Scalar>(y: &[T], ws: usize) -> Result<Vec<T>> {
    if ws.is_multiple_of(2) {
        return Err(Error::EvenWindow { window: ws });
    }
    if ws < 3 {
        return Err(Error::WindowTooSmall { window: ws, min: 3 });
    }
    if y.len() < ws {
        return Err(Error::SeriesTooShort {
            needed: ws,
            got: y.len(),
        });
    }
    let h = (ws - 1) / 2;
    let two = T::of(2.0);
    Ok((h..y.len() - h)
        .map(|i| y[i - h] + y[i + h] - two * y[i])
        .collect())
}

pub fn approximate_curvature<T: Scalar>(
    series: &SmoothedSeries<T>,
    ws: usize,
) -> Result<CurvatureSeries<T>> {
    let values = curvature_values(&series.values, ws)?;
    Ok(CurvatureSeries {
        values,
        first_cycle: series.cycles[0] + ((ws - 1) / 2) as Cycle,
        ws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn smoothed(values: Vec<f64>) -> SmoothedSeries<f64> {
        SmoothedSeries {
            cycles: (0..values.len() as Cycle).collect(),
            values,
        }
    }

    /// Direct local fit: solve the normal equations in raw (unscaled)
    /// abscissae and evaluate the polynomial at the center.
    fn local_fit_center(window: &[f64], order: usize) -> f64 {
        let h = (window.len() / 2) as f64;
        let t = order + 1;
        let mut a = vec![vec![0.0; t]; t];
        let mut b = vec![0.0; t];
        for (i, &y) in window.iter().enumerate() {
            let x = i as f64 - h;
            for r in 0..t {
                b[r] += y * x.powi(r as i32);
                for c in 0..t {
                    a[r][c] += x.powi((r + c) as i32);
                }
            }
        }
        crate::scalar::solve_dense(a, b).unwrap()[0]
    }

    #[test]
    fn window5_order2_weights() {
        let w = savgol_coefficients(5, 2).unwrap();
        let expected = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
        // independent check: weights are the local fit's response to unit impulses
        for k in 0..5 {
            let mut e = [0.0; 5];
            e[k] = 1.0;
            assert!((local_fit_center(&e, 2) - w[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_matches_local_fit() {
        let y: Vec<f64> = (0..60)
            .map(|i| ((i as f64) * 0.37).sin() + 0.01 * i as f64)
            .collect();
        let s = savgol_filter(&y, 11, 3).unwrap();
        for c in 5..55 {
            assert!((s[c] - local_fit_center(&y[c - 5..=c + 5], 3)).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_cubic_in_interior() {
        let y: Vec<f64> = (0..80)
            .map(|i| {
                let x = i as f64 / 10.0;
                0.5 - 0.2 * x + 0.03 * x * x - 0.004 * x * x * x
            })
            .collect();
        for window in [5, 11, 21, 41] {
            let s = savgol_filter(&y, window, 3).unwrap();
            let h = window / 2;
            for i in h..y.len() - h {
                assert!((s[i] - y[i]).abs() < 1e-10, "window {window} at {i}");
            }
        }
    }

    #[test]
    fn constant_is_fixed_point() {
        let y = vec![0.93f64; 40];
        let s = savgol_filter(&y, 21, 3).unwrap();
        for v in s {
            assert!((v - 0.93).abs() < 1e-14);
        }
    }

    #[test]
    fn savgol_errors() {
        let y = vec![1.0; 10];
        assert_eq!(
            savgol_filter(&y, 4, 2).unwrap_err(),
            Error::EvenWindow { window: 4 }
        );
        assert_eq!(
            savgol_filter(&y, 11, 2).unwrap_err(),
            Error::WindowTooLarge {
                window: 11,
                len: 10
            }
        );
        assert_eq!(
            savgol_filter(&y, 5, 5).unwrap_err(),
            Error::OrderTooHigh {
                order: 5,
                window: 5
            }
        );
        // window equal to the length is allowed
        assert_eq!(savgol_filter(&y[..9], 9, 2).unwrap().len(), 9);
    }

    #[test]
    fn clip_window_picks_largest_odd() {
        assert_eq!(clip_window(21, 100), 21);
        assert_eq!(clip_window(21, 15), 15);
        assert_eq!(clip_window(21, 14), 13);
    }

    #[test]
    fn curvature_straight_line_is_zero() {
        let s = smoothed((0..50).map(|i| 1.0 - 2e-4 * i as f64).collect());
        for ws in [3, 5, 9] {
            let c = approximate_curvature(&s, ws).unwrap();
            assert_eq!(c.len(), 50 - (ws - 1));
            assert!(c.values.iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn curvature_knee_and_elbow_signs() {
        let knee = approximate_curvature(&smoothed(vec![1.0, 1.0, 0.9]), 3).unwrap();
        assert_eq!(knee.values.len(), 1);
        assert!((knee.values[0] + 0.1).abs() < 1e-15);
        let elbow = approximate_curvature(&smoothed(vec![1.0, 0.9, 0.9]), 3).unwrap();
        assert!((elbow.values[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn curvature_offsets_and_errors() {
        let s = SmoothedSeries {
            cycles: (7..20).collect(),
            values: vec![1.0; 13],
        };
        let c = approximate_curvature(&s, 5).unwrap();
        assert_eq!(c.first_cycle, 9);
        assert_eq!(c.cycle_at(0), 9);
        assert_eq!(
            approximate_curvature(&s, 4).unwrap_err(),
            Error::EvenWindow { window: 4 }
        );
        assert_eq!(
            approximate_curvature(&smoothed(vec![1.0, 0.9]), 3).unwrap_err(),
            Error::SeriesTooShort { needed: 3, got: 2 }
        );
    }

    proptest! {
        #[test]
        fn curvature_is_linear(
            y in prop::collection::vec(-1.0f64..1.0, 3..60),
            z_seed in -1.0f64..1.0,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let z: Vec<f64> = y.iter().enumerate().map(|(i, v)| (v * 3.1 + z_seed * i as f64).sin()).collect();
            let mix: Vec<f64> = y.iter().zip(&z).map(|(p, q)| a * p + b * q).collect();
            let cy = curvature_values(&y, 3).unwrap();
            let cz = curvature_values(&z, 3).unwrap();
            let cm = curvature_values(&mix, 3).unwrap();
            for i in 0..cm.len() {
                prop_assert!((cm[i] - (a * cy[i] + b * cz[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn adding_affine_trend_leaves_curvature(
            y in prop::collection::vec(-1.0f64..1.0, 3..60),
            s in -0.01f64..0.01,
            o in -1.0f64..1.0,
        ) {
            let t: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + o + s * i as f64).collect();
            let a = curvature_values(&y, 3).unwrap();
            let b = curvature_values(&t, 3).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn ws3_matches_central_difference(y in prop::collection::vec(-1.0f64..1.0, 3..60)) {
            let c = curvature_values(&y, 3).unwrap();
            for i in 1..y.len() - 1 {
                prop_assert!((c[i - 1] - (y[i + 1] - 2.0 * y[i] + y[i - 1])).abs() < 1e-12);
            }
        }

        #[test]
        fn savgol_commutes_with_constant(
            y in prop::collection::vec(0.0f64..1.0, 21..80),
            k in -2.0f64..2.0,
        ) {
            let a = savgol_filter(&y, 21, 3).unwrap();
            let shifted: Vec<f64> = y.iter().map(|v| v + k).collect();
            let b = savgol_filter(&shifted, 21, 3).unwrap();
            prop_assert_eq!(a.len(), y.len());
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p + k - q).abs() < 1e-12);
            }
        }
    }
}
