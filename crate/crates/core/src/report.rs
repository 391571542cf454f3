//! Batch runs over many cells, correlation statistics and plot-ready CSV.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baconwatts::identify_dbw;
use crate::error::{Error, Result};
use crate::ingest::CapacityFadeSeries;
use crate::params::PipelineParams;
use crate::segmentation::{identify_knees, KneeReport, Method};
use crate::{Cycle, Scalar};

pub const BATCH_HEADER: [&str; 6] = [
    "cell_id",
    "method",
    "onset_cycle",
    "knee_cycle",
    "eol_cycle",
    "gap",
];

/// Sample Pearson correlation.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let x: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
    let y: Vec<f64> = y.iter().map(|v| v.to_f64_lossy()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(&y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // a constant input leaves only rounding noise in the centered sums
    let flat = |s: f64, v: &[f64], m: f64| {
        let scale = v.iter().fold(m.abs(), |acc, t| acc.max(t.abs()));
        s.sqrt() <= 1e-13 * scale * n.sqrt()
    };
    if flat(sxx, &x, mx) || flat(syy, &y, my) {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Relative change of `new` over the benchmark `old`, in percent.
pub fn improvement_pct(new: f64, old: f64) -> Option<f64> {
    (old != 0.0).then(|| (new - old) / old * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub cell_id: String,
    pub method: Method,
    pub onset_cycle: Cycle,
    pub knee_cycle: Cycle,
    pub eol_cycle: Option<Cycle>,
    pub gap: i64,
    /// Diagnostics say the curve may not have a knee.
    pub assumption_violated: bool,
}

impl From<&KneeReport> for BatchRow {
    fn from(r: &KneeReport) -> Self {
        Self {
            cell_id: r.cell_id.clone(),
            method: r.method,
            onset_cycle: r.onset_cycle,
            knee_cycle: r.knee_cycle,
            eol_cycle: r.eol_cycle,
            gap: r.gap(),
            assumption_violated: r.assumption_violated(),
        }
    }
}

/// Correlations with end of life for one method. An `Err` holds the
/// reason the coefficient is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub method: Method,
    pub r_onset_eol: Result<f64>,
    pub r_knee_eol: Result<f64>,
    /// Rows with a defined end of life.
    pub n_cells: usize,
    /// Rows left out for lack of an end of life.
    pub excluded: usize,
    pub mean_gap: f64,
}

impl CorrelationReport {
    pub fn from_rows(method: Method, rows: &[BatchRow]) -> Self {
        let mine: Vec<&BatchRow> = rows.iter().filter(|r| r.method == method).collect();
        let with_eol: Vec<(f64, f64, f64)> = mine
            .iter()
            .filter_map(|r| {
                r.eol_cycle
                    .map(|e| (r.onset_cycle as f64, r.knee_cycle as f64, e as f64))
            })
            .collect();
        let onset: Vec<f64> = with_eol.iter().map(|t| t.0).collect();
        let knee: Vec<f64> = with_eol.iter().map(|t| t.1).collect();
        let eol: Vec<f64> = with_eol.iter().map(|t| t.2).collect();
        let mean_gap = if mine.is_empty() {
            f64::NAN
        } else {
            mine.iter().map(|r| r.gap as f64).sum::<f64>() / mine.len() as f64
        };
        Self {
            method,
            r_onset_eol: pearson(&onset, &eol),
            r_knee_eol: pearson(&knee, &eol),
            n_cells: with_eol.len(),
            excluded: mine.len() - with_eol.len(),
            mean_gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    /// Sorted by cell id, then method.
    pub rows: Vec<BatchRow>,
    pub correlations: Vec<CorrelationReport>,
}

impl BatchReport {
    pub fn correlation(&self, method: Method) -> Option<&CorrelationReport> {
        self.correlations.iter().find(|c| c.method == method)
    }

    /// Percent improvement of the curvature method over the Bacon-Watts
    /// benchmark, `(onset, knee)`.
    pub fn improvement(&self) -> Option<(Option<f64>, Option<f64>)> {
        let new = self.correlation(Method::CurvatureRea)?;
        let old = self.correlation(Method::DoubleBaconWatts)?;
        let pct = |a: &Result<f64>, b: &Result<f64>| match (a, b) {
            (Ok(a), Ok(b)) => improvement_pct(*a, *b),
            _ => None,
        };
        Some((
            pct(&new.r_onset_eol, &old.r_onset_eol),
            pct(&new.r_knee_eol, &old.r_knee_eol),
        ))
    }

    /// Footer lines as `(key, value)`; undefined values are spelled out.
    pub fn summary(&self) -> Vec<(String, String)> {
        let show = |r: &Result<f64>| match r {
            Ok(v) => format!("{v}"),
            Err(e) => format!("undefined ({})", e.kind()),
        };
        let mut out = Vec::new();
        for c in &self.correlations {
            let m = c.method.as_str();
            out.push((format!("{m}.pearson_onset_eol"), show(&c.r_onset_eol)));
            out.push((format!("{m}.pearson_knee_eol"), show(&c.r_knee_eol)));
            out.push((format!("{m}.n_cells"), c.n_cells.to_string()));
            out.push((format!("{m}.excluded_no_eol"), c.excluded.to_string()));
            out.push((format!("{m}.mean_gap"), format!("{}", c.mean_gap)));
        }
        if let Some((onset, knee)) = self.improvement() {
            let opt =
                |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v}"));
            out.push(("improvement_onset_pct".into(), opt(onset)));
            out.push(("improvement_knee_pct".into(), opt(knee)));
        }
        out
    }
}

/// Runs each method on every series (in parallel on the current rayon
/// pool) and correlates the results with end of life.
pub fn batch_report<T: Scalar>(
    series: &[CapacityFadeSeries<T>],
    methods: &[Method],
    params: &PipelineParams,
) -> Result<BatchReport> {
    params.validate()?;
    let mut methods = methods.to_vec();
    methods.sort_unstable();
    methods.dedup();
    if methods.is_empty() {
        return Err(Error::invalid("methods", "at least one method is required"));
    }
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.sort_by(|&a, &b| series[a].cell_id().cmp(series[b].cell_id()));
    let jobs: Vec<(usize, Method)> = order
        .iter()
        .flat_map(|&i| methods.iter().map(move |&m| (i, m)))
        .collect();
    let reports: Vec<KneeReport> = jobs
        .par_iter()
        .map(|&(i, m)| match m {
            Method::CurvatureRea => identify_knees(&series[i], params),
            Method::DoubleBaconWatts => identify_dbw(&series[i], params),
        })
        .collect::<Result<_>>()?;
    let rows: Vec<BatchRow> = reports.iter().map(BatchRow::from).collect();
    let correlations = methods
        .iter()
        .map(|&m| CorrelationReport::from_rows(m, &rows))
        .collect();
    Ok(BatchReport { rows, correlations })
}

/// `cell_id,method,onset_cycle,knee_cycle,eol_cycle,gap` rows followed by
/// `# key=value` footer lines. A missing end of life is left blank.
pub fn write_batch_csv<W: Write>(report: &BatchReport, mut writer: W) -> Result<()> {
    let err = |e: csv::Error| Error::Serialization(e.to_string());
    {
        let mut w = csv::Writer::from_writer(&mut writer);
        w.write_record(BATCH_HEADER).map_err(err)?;
        for r in &report.rows {
            w.write_record([
                r.cell_id.clone(),
                r.method.as_str().to_string(),
                r.onset_cycle.to_string(),
                r.knee_cycle.to_string(),
                r.eol_cycle.map(|e| e.to_string()).unwrap_or_default(),
                r.gap.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Serialization(e.to_string()))?;
    }
    for (k, v) in report.summary() {
        writeln!(writer, "# {k}={v}").map_err(|e| Error::Serialization(e.to_string()))?;
    }
    Ok(())
}

/// Scatter pairs for one method: `kind,onset_or_knee_cycle,eol_cycle`
/// with `kind` either `onset` or `knee`. Rows without end of life are
/// skipped.
pub fn write_scatter_csv<W: Write>(rows: &[BatchRow], method: Method, writer: W) -> Result<()> {
    let err = |e: csv::Error| Error::Serialization(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kind", "onset_or_knee_cycle", "eol_cycle"])
        .map_err(err)?;
    for kind in ["onset", "knee"] {
        for r in rows.iter().filter(|r| r.method == method) {
            let Some(eol) = r.eol_cycle else { continue };
            let c = if kind == "onset" {
                r.onset_cycle
            } else {
                r.knee_cycle
            };
            w.write_record([kind.to_string(), c.to_string(), eol.to_string()])
                .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_correlations() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &z).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed() {
        // cov = 0.5, var x = var y = 1
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::ConstantInput)
        );
        assert_eq!(
            pearson(&[0.1; 7], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]),
            Err(Error::ConstantInput)
        );
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            pearson(&[1.0], &[1.0]),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn improvement_arithmetic() {
        assert!((improvement_pct(0.568, 0.1).unwrap() - 468.0).abs() < 1e-9);
        assert_eq!(improvement_pct(0.5, 0.0), None);
    }

    fn row(id: &str, method: Method, onset: Cycle, knee: Cycle, eol: Option<Cycle>) -> BatchRow {
        BatchRow {
            cell_id: id.into(),
            method,
            onset_cycle: onset,
            knee_cycle: knee,
            eol_cycle: eol,
            gap: knee as i64 - onset as i64,
            assumption_violated: false,
        }
    }

    #[test]
    fn correlation_excludes_missing_eol() {
        let rows = vec![
            row("a", Method::CurvatureRea, 100, 200, Some(300)),
            row("b", Method::CurvatureRea, 200, 300, Some(410)),
            row("c", Method::CurvatureRea, 300, 420, None),
            row("d", Method::CurvatureRea, 400, 500, Some(590)),
        ];
        let c = CorrelationReport::from_rows(Method::CurvatureRea, &rows);
        assert_eq!((c.n_cells, c.excluded), (3, 1));
        assert!((c.mean_gap - 105.0).abs() < 1e-12);
        assert!(c.r_onset_eol.unwrap() > 0.99);
    }

    #[test]
    fn csv_has_rows_and_footer() {
        let rows = vec![
            row("a", Method::CurvatureRea, 100, 200, Some(300)),
            row("b", Method::CurvatureRea, 100, 200, Some(300)),
        ];
        let report = BatchReport {
            correlations: vec![CorrelationReport::from_rows(Method::CurvatureRea, &rows)],
            rows,
        };
        let mut buf = Vec::new();
        write_batch_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "cell_id,method,onset_cycle,knee_cycle,eol_cycle,gap"
        );
        assert_eq!(lines[1], "a,curvature_rea,100,200,300,100");
        assert!(text.contains("# curvature_rea.pearson_onset_eol=undefined (ConstantInput)"));
    }

    proptest! {
        #[test]
        fn affine_invariance(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
            scale in 0.01f64..100.0,
            shift in -1e3f64..1e3,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&x, &y) {
                let xs: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
                let r2 = pearson(&xs, &y).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
                let xn: Vec<f64> = x.iter().map(|v| -scale * v).collect();
                prop_assert!((r + pearson(&xn, &y).unwrap()).abs() < 1e-12);
            }
        }
    }
}
