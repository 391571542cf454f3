//! Corrected arc curve and regime extraction over a matrix profile index,
//! and the full knee identification pipeline built on them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, CapacityFadeSeries};
use crate::matrixprofile::{self, MatrixProfile};
use crate::params::PipelineParams;
use crate::preprocess;
use crate::{Cycle, Scalar};

/// When even the stronger of the two boundaries has a CAC at or above this
/// level there is no clear regime change, as on a curve without a knee.
/// Sits between knee curves (at most 0.6) and noisy affine fades (0.77 and
/// up) under [`PipelineParams::noisy`].
pub const WEAK_BOUNDARY_CAC: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct ArcCurveSet<T> {
    pub ac: Vec<u64>,
    pub iac: Vec<T>,
    pub cac: Vec<T>,
}

impl<T: Scalar> ArcCurveSet<T> {
    pub fn from_index(index: &[usize]) -> Result<Self> {
        let ac = arc_curve(index)?;
        let iac = iac(index.len());
        let cac = cac(&ac, &iac)?;
        Ok(Self { ac, iac, cac })
    }
}

/// Boundary positions in CAC coordinates, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeBoundaries {
    pub boundaries: Vec<usize>,
    pub exclusion_radius: usize,
}

/// Number of nearest-neighbor arcs passing strictly over each position.
pub fn arc_curve(index: &[usize]) -> Result<Vec<u64>> {
    let n = index.len();
    if n < 2 {
        return Err(Error::IndexOutOfRange { index: 0, len: n });
    }
    let mut mark = vec![0i64; n + 1];
    for (j, &k) in index.iter().enumerate() {
        if k >= n {
            return Err(Error::IndexOutOfRange { index: k, len: n });
        }
        let (lo, hi) = (j.min(k), j.max(k));
        if hi > lo + 1 {
            mark[lo + 1] += 1;
            mark[hi] -= 1;
        }
    }
    let mut run = 0i64;
    Ok(mark[..n]
        .iter()
        .map(|m| {
            run += m;
            run as u64
        })
        .collect())
}

/// Idealized arc curve of a series without regime changes: `2 i (n-i) / n`.
pub fn iac<T: Scalar>(n: usize) -> Vec<T> {
    let nf = T::of_usize(n.max(1));
    (0..n)
        .map(|i| T::of(2.0) * T::of_usize(i) * T::of_usize(n - i) / nf)
        .collect()
}

/// `min(ac / iac, 1)`, with 1 wherever `iac` is zero.
pub fn cac<T: Scalar>(ac: &[u64], iac: &[T]) -> Result<Vec<T>> {
    if ac.len() != iac.len() {
        return Err(Error::LengthMismatch {
            left: ac.len(),
            right: iac.len(),
        });
    }
    Ok(ac
        .iter()
        .zip(iac)
        .map(|(&a, &i)| {
            if i > T::zero() {
                (T::of(a as f64) / i).min(T::one())
            } else {
                T::one()
            }
        })
        .collect())
}

/// Picks `n_boundaries` CAC minima, masking `exclusion_radius` positions on
/// both sides of each pick.
pub fn rea<T: Scalar>(
    cac: &[T],
    n_boundaries: usize,
    exclusion_radius: usize,
) -> Result<RegimeBoundaries> {
    rea_with_edges(cac, n_boundaries, exclusion_radius, 0)
}

/// As [`rea`], but the first and last `edge` positions are never picked.
pub fn rea_with_edges<T: Scalar>(
    cac: &[T],
    n_boundaries: usize,
    exclusion_radius: usize,
    edge: usize,
) -> Result<RegimeBoundaries> {
    let n = cac.len();
    let mut open: Vec<bool> = (0..n).map(|i| i >= edge && i + edge < n).collect();
    let mut boundaries = Vec::with_capacity(n_boundaries);
    for placed in 0..n_boundaries {
        let best = (0..n)
            .filter(|&i| open[i])
            .fold(None::<usize>, |best, i| match best {
                Some(b) if cac[b] <= cac[i] => Some(b),
                _ => Some(i),
            });
        let Some(b) = best else {
            return Err(Error::InsufficientUnmaskedRegion {
                placed,
                requested: n_boundaries,
            });
        };
        boundaries.push(b);
        let lo = b.saturating_sub(exclusion_radius);
        let hi = (b + exclusion_radius + 1).min(n);
        open[lo..hi].iter_mut().for_each(|o| *o = false);
    }
    boundaries.sort_unstable();
    Ok(RegimeBoundaries {
        boundaries,
        exclusion_radius,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CurvatureRea,
    DoubleBaconWatts,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::CurvatureRea => "curvature_rea",
            Method::DoubleBaconWatts => "double_bacon_watts",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curvature" | "curvature_rea" => Ok(Method::CurvatureRea),
            "baconwatts" | "bacon_watts" | "double_bacon_watts" | "dbw" => {
                Ok(Method::DoubleBaconWatts)
            }
            other => Err(Error::invalid(
                "method",
                format!("unknown method `{other}`"),
            )),
        }
    }
}

/// Parameters recorded in a report. Fields that do not apply to the
/// method are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sg_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sg_order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curv_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mp_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cac_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_radius: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

/// Identified knee-onset and knee of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeReport {
    pub cell_id: String,
    pub method: Method,
    pub onset_cycle: Cycle,
    pub knee_cycle: Cycle,
    pub eol_cycle: Option<Cycle>,
    pub params: ReportParams,
    pub diagnostics: BTreeMap<String, f64>,
}

impl KneeReport {
    pub fn gap(&self) -> i64 {
        self.knee_cycle as i64 - self.onset_cycle as i64
    }

    /// True when diagnostics indicate the curve may have no knee.
    pub fn assumption_violated(&self) -> bool {
        self.diagnostics
            .get("assumption_violated")
            .is_some_and(|&v| v != 0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Intermediate products of [`identify_knees`], for inspection and export.
#[derive(Debug, Clone)]
pub struct PipelineTrace<T> {
    pub smoothed: preprocess::SmoothedSeries<T>,
    pub curvature: preprocess::CurvatureSeries<T>,
    pub profile: MatrixProfile<T>,
    pub arcs: ArcCurveSet<T>,
    pub boundaries: RegimeBoundaries,
}

pub fn identify_knees<T: Scalar>(
    series: &CapacityFadeSeries<T>,
    params: &PipelineParams,
) -> Result<KneeReport> {
    identify_knees_traced(series, params).map(|(r, _)| r)
}

/// Smooth, differentiate, profile, segment; the two CAC boundaries become
/// the knee-onset and the knee.
pub fn identify_knees_traced<T: Scalar>(
    series: &CapacityFadeSeries<T>,
    params: &PipelineParams,
) -> Result<(KneeReport, PipelineTrace<T>)> {
    params.validate()?;
    let even = ingest::resample_even(series)?;
    let normalized = ingest::normalize(&even)?;
    let sg_window = preprocess::clip_window(params.sg_window, normalized.values.len());
    let smoothed = preprocess::savgol_smooth(&normalized, sg_window, params.sg_order)?;
    let eol = ingest::find_eol(&smoothed.cycles, &smoothed.values, params.eol_threshold)?;
    let curvature = preprocess::approximate_curvature(&smoothed, params.curv_window)?;

    let window = params.segmentation_window();
    let exclusion = params.exclusion_for(window);
    let profile = matrixprofile::stamp_with_exclusion(
        &curvature.values,
        window,
        matrixprofile::default_exclusion(window),
    )?;
    let arcs = ArcCurveSet::<T>::from_index(&profile.i)?;
    let found = rea_with_edges(&arcs.cac, 2, exclusion, exclusion)?;

    let offset = (window - 1) / 2;
    let to_cycle = |pos: usize| curvature.cycle_at(pos + offset);
    let (b1, b2) = (found.boundaries[0], found.boundaries[1]);
    let cac_onset = arcs.cac[b1].to_f64_lossy();
    let cac_knee = arcs.cac[b2].to_f64_lossy();
    let violated = cac_onset.min(cac_knee) >= WEAK_BOUNDARY_CAC;
    if violated {
        log::warn!(
            "{}: weak regime boundaries (CAC {:.3}, {:.3}); the curve may have no knee",
            series.cell_id(),
            cac_onset,
            cac_knee
        );
    }
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("cac_min_onset".to_string(), cac_onset);
    diagnostics.insert("cac_min_knee".to_string(), cac_knee);
    diagnostics.insert(
        "boundary_offset_cycles".to_string(),
        (curvature.first_cycle as usize + offset) as f64,
    );
    diagnostics.insert("sg_window_used".to_string(), sg_window as f64);
    diagnostics.insert(
        "assumption_violated".to_string(),
        if violated { 1.0 } else { 0.0 },
    );

    let report = KneeReport {
        cell_id: series.cell_id().to_string(),
        method: Method::CurvatureRea,
        onset_cycle: to_cycle(b1),
        knee_cycle: to_cycle(b2),
        eol_cycle: eol,
        params: ReportParams {
            sg_window: Some(params.sg_window),
            sg_order: Some(params.sg_order),
            curv_window: Some(params.curv_window),
            mp_window: Some(params.mp_window),
            cac_window: params.cac_window,
            exclusion_radius: Some(exclusion),
            ..ReportParams::default()
        },
        diagnostics,
    };
    let trace = PipelineTrace {
        smoothed,
        curvature,
        profile,
        arcs,
        boundaries: found,
    };
    Ok((report, trace))
}
