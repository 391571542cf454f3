//! Z-normalized distance profiles (MASS) and the matrix profile (STAMP).

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::Scalar;

/// Subsequences with a standard deviation below this are treated as flat.
pub const FLAT_STD: f64 = 1e-12;

/// Distances from one query to every subsequence of a series. Entries in
/// the trivial-match zone are `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile<T> {
    pub query_start: usize,
    pub distances: Vec<T>,
}

/// Nearest-neighbor distance `p[j]` and index `i[j]` for every subsequence
/// of length `window`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixProfile<T> {
    pub p: Vec<T>,
    pub i: Vec<usize>,
    pub window: usize,
    pub exclusion_radius: usize,
}

impl<T: Scalar> MatrixProfile<T> {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Default trivial-match radius, `ceil(L/2)`.
pub fn default_exclusion(window: usize) -> usize {
    window.div_ceil(2)
}

/// Per-window mean and population standard deviation.
#[derive(Debug, Clone)]
struct WindowStats<T> {
    mean: Vec<T>,
    std: Vec<T>,
}

impl<T: Scalar> WindowStats<T> {
    fn new(series: &[T], window: usize) -> Self {
        let n = series.len() + 1 - window;
        let mut mean = Vec::with_capacity(n);
        let mut std = Vec::with_capacity(n);
        for w in series.windows(window) {
            mean.push(crate::scalar::mean(w));
            std.push(crate::scalar::pop_std(w));
        }
        Self { mean, std }
    }
}

fn check_window(window: usize, len: usize) -> Result<()> {
    if window < 2 {
        return Err(Error::DegenerateWindow { window });
    }
    if window > len {
        return Err(Error::WindowTooLarge { window, len });
    }
    Ok(())
}

/// Distance from the flat/non-flat rule, or `None` when both windows vary.
fn flat_distance<T: Scalar>(std_a: T, std_b: T, window: usize) -> Option<T> {
    let flat = T::of(FLAT_STD);
    match (std_a < flat, std_b < flat) {
        (true, true) => Some(T::zero()),
        (true, false) | (false, true) => Some(T::of_usize(window).sqrt()),
        (false, false) => None,
    }
}

/// Distance from a sliding dot product of (globally centered) data.
fn distance_from_dot<T: Scalar>(
    dot: T,
    window: usize,
    mean_a: T,
    std_a: T,
    mean_b: T,
    std_b: T,
) -> T {
    if let Some(d) = flat_distance(std_a, std_b, window) {
        return d;
    }
    let l = T::of_usize(window);
    let corr = (dot - l * mean_a * mean_b) / (l * std_a * std_b);
    let corr = corr.min(T::one()).max(-T::one());
    (T::of(2.0) * l * (T::one() - corr)).max(T::zero()).sqrt()
}

/// Z-normalized Euclidean distance computed elementwise.
pub fn znorm_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let (ma, sa) = (crate::scalar::mean(a), crate::scalar::pop_std(a));
    let (mb, sb) = (crate::scalar::mean(b), crate::scalar::pop_std(b));
    if let Some(d) = flat_distance(sa, sb, a.len()) {
        return d;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - ma) / sa - (y - mb) / sb;
            d * d
        })
        .sum::<T>()
        .sqrt()
}

/// Sliding dot products of queries against a fixed series, via FFT.
struct SlidingDot<T: Scalar> {
    series_len: usize,
    window: usize,
    nfft: usize,
    spectrum: Vec<Complex<T>>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Scalar> SlidingDot<T> {
    fn new(series: &[T], window: usize) -> Self {
        let nfft = (2 * series.len()).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(nfft);
        let inverse = planner.plan_fft_inverse(nfft);
        let mut spectrum = vec![Complex::new(T::zero(), T::zero()); nfft];
        for (s, &v) in spectrum.iter_mut().zip(series) {
            s.re = v;
        }
        forward.process(&mut spectrum);
        Self {
            series_len: series.len(),
            window,
            nfft,
            spectrum,
            forward,
            inverse,
        }
    }

    /// Dot products of up to two queries at once: the first query rides in
    /// the real part and the second in the imaginary part. Because the
    /// series is real, the two convolutions separate exactly.
    fn pair(&self, qa: &[T], qb: Option<&[T]>) -> (Vec<T>, Option<Vec<T>>) {
        let l = self.window;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.nfft];
        for t in 0..l {
            buf[t].re = qa[l - 1 - t];
            if let Some(qb) = qb {
                buf[t].im = qb[l - 1 - t];
            }
        }
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= *s;
        }
        self.inverse.process(&mut buf);
        let scale = T::one() / T::of_usize(self.nfft);
        let n = self.series_len + 1 - l;
        let re = (0..n).map(|k| buf[k + l - 1].re * scale).collect();
        let im = qb.map(|_| (0..n).map(|k| buf[k + l - 1].im * scale).collect());
        (re, im)
    }
}

fn centered<T: Scalar>(xs: &[T]) -> (Vec<T>, T) {
    let m = crate::scalar::mean(xs);
    (xs.iter().map(|&x| x - m).collect(), m)
}

/// MASS: distance from `query` to every length-`L` subsequence of `series`.
pub fn mass<T: Scalar>(query: &[T], series: &[T]) -> Result<Vec<T>> {
    let l = query.len();
    check_window(l, series.len())?;
    let (s, shift) = centered(series);
    let q: Vec<T> = query.iter().map(|&v| v - shift).collect();
    let stats = WindowStats::new(&s, l);
    let (mq, sq) = (crate::scalar::mean(&q), crate::scalar::pop_std(&q));
    let (dots, _) = SlidingDot::new(&s, l).pair(&q, None);
    Ok(dots
        .iter()
        .enumerate()
        .map(|(k, &dot)| distance_from_dot(dot, l, mq, sq, stats.mean[k], stats.std[k]))
        .collect())
}

/// Distance profile of the subsequence starting at `query_start`, with the
/// trivial-match zone `|k - query_start| <= exclusion_radius` masked.
pub fn distance_profile<T: Scalar>(
    series: &[T],
    query_start: usize,
    window: usize,
    exclusion_radius: usize,
) -> Result<DistanceProfile<T>> {
    check_window(window, series.len())?;
    let n = series.len() + 1 - window;
    if query_start >= n {
        return Err(Error::IndexOutOfRange {
            index: query_start,
            len: n,
        });
    }
    let mut distances = mass(&series[query_start..query_start + window], series)?;
    mask_trivial(&mut distances, query_start, exclusion_radius);
    Ok(DistanceProfile {
        query_start,
        distances,
    })
}

fn mask_trivial<T: Scalar>(d: &mut [T], j: usize, radius: usize) {
    let lo = j.saturating_sub(radius);
    let hi = (j + radius + 1).min(d.len());
    for v in &mut d[lo..hi] {
        *v = T::infinity();
    }
}

/// Smallest series length for which every subsequence has at least one
/// neighbor outside the trivial-match zone.
pub fn min_series_len(window: usize, exclusion_radius: usize) -> usize {
    window + 2 * exclusion_radius + 1
}

/// Running element-wise minimum over distance profiles. Ties keep the
/// smaller index, so the result does not depend on merge order.
#[derive(Debug, Clone)]
struct Accumulator<T> {
    p: Vec<T>,
    i: Vec<usize>,
}

impl<T: Scalar> Accumulator<T> {
    fn new(n: usize) -> Self {
        Self {
            p: vec![T::infinity(); n],
            i: vec![usize::MAX; n],
        }
    }

    fn offer(&mut self, k: usize, d: T, j: usize) {
        if d < self.p[k] || (d == self.p[k] && j < self.i[k]) {
            self.p[k] = d;
            self.i[k] = j;
        }
    }

    /// Element-wise min of the profile of query `j` (already masked).
    fn absorb(&mut self, j: usize, profile: &[T]) {
        for (k, &d) in profile.iter().enumerate() {
            self.offer(k, d, j);
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for k in 0..self.p.len() {
            self.offer(k, other.p[k], other.i[k]);
        }
        self
    }
}

/// STAMP with the default `ceil(L/2)` exclusion radius.
pub fn stamp<T: Scalar>(series: &[T], window: usize) -> Result<MatrixProfile<T>> {
    stamp_with_exclusion(series, window, default_exclusion(window))
}

const BLOCK: usize = 64;

pub fn stamp_with_exclusion<T: Scalar>(
    series: &[T],
    window: usize,
    exclusion_radius: usize,
) -> Result<MatrixProfile<T>> {
    let order: Vec<usize> = (0..series.len().saturating_sub(window) + 1).collect();
    stamp_in_order(series, window, exclusion_radius, &order)
}

/// STAMP processing the queries in the given order, in concurrent blocks.
/// Every order yields the same profile.
pub(crate) fn stamp_in_order<T: Scalar>(
    series: &[T],
    window: usize,
    exclusion_radius: usize,
    order: &[usize],
) -> Result<MatrixProfile<T>> {
    if window < 2 {
        return Err(Error::DegenerateWindow { window });
    }
    let needed = min_series_len(window, exclusion_radius);
    if series.len() < needed {
        return Err(Error::SeriesTooShort {
            needed,
            got: series.len(),
        });
    }
    let n = series.len() + 1 - window;
    let (s, _) = centered(series);
    let stats = WindowStats::new(&s, window);
    let dot = SlidingDot::new(&s, window);

    let profile_of = |j: usize, dots: &[T]| -> Vec<T> {
        let mut d: Vec<T> = dots
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                distance_from_dot(
                    v,
                    window,
                    stats.mean[j],
                    stats.std[j],
                    stats.mean[k],
                    stats.std[k],
                )
            })
            .collect();
        mask_trivial(&mut d, j, exclusion_radius);
        d
    };

    // queries are packed two per FFT as fixed pairs (2m, 2m + 1), so each
    // profile is bitwise the same whatever the processing order
    let mut seen = vec![false; n.div_ceil(2)];
    let pairs: Vec<usize> = order
        .iter()
        .map(|&j| j / 2)
        .filter(|&m| !std::mem::replace(&mut seen[m], true))
        .collect();
    let acc = pairs
        .par_chunks(BLOCK)
        .map(|block| {
            let mut acc = Accumulator::new(n);
            for &m in block {
                let ja = 2 * m;
                let jb = (ja + 1 < n).then_some(ja + 1);
                let (da, db) = dot.pair(&s[ja..ja + window], jb.map(|jb| &s[jb..jb + window]));
                acc.absorb(ja, &profile_of(ja, &da));
                if let (Some(jb), Some(db)) = (jb, db) {
                    acc.absorb(jb, &profile_of(jb, &db));
                }
            }
            acc
        })
        .reduce(|| Accumulator::new(n), Accumulator::merge);

    // exact distance to the chosen neighbor, free of FFT cancellation
    let p = acc
        .i
        .par_iter()
        .enumerate()
        .map(|(j, &k)| znorm_distance(&series[j..j + window], &series[k..k + window]))
        .collect();
    Ok(MatrixProfile {
        p,
        i: acc.i,
        window,
        exclusion_radius,
    })
}
