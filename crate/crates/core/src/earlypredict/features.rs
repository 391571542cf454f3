use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::records::CycleRecord;
use crate::error::{Error, Result};
use crate::{Cycle, Scalar};

pub const DEFAULT_GRID_POINTS: usize = 1000;
/// ΔQ is taken against this cycle.
pub const EARLY_CYCLE: Cycle = 10;
pub const Q2_CYCLE: Cycle = 2;
pub const MIN_BUDGET: Cycle = EARLY_CYCLE + 1;

pub const FEATURE_NAMES: [&str; 6] = [
    "min_dq",
    "var_dq",
    "skew_dq",
    "kurt_dq",
    "q2",
    "q_max_minus_2",
];

/// The six early-cycle features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureVector<T> {
    pub min_dq: T,
    pub var_dq: T,
    pub skew_dq: T,
    /// Non-excess kurtosis.
    pub kurt_dq: T,
    pub q2: T,
    pub q_max_minus_2: T,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn to_array(&self) -> [T; 6] {
        [
            self.min_dq,
            self.var_dq,
            self.skew_dq,
            self.kurt_dq,
            self.q2,
            self.q_max_minus_2,
        ]
    }

    pub fn from_slice(v: &[T]) -> Result<Self> {
        if v.len() != 6 {
            return Err(Error::FeatureCountMismatch {
                expected: 6,
                got: v.len(),
            });
        }
        Ok(Self {
            min_dq: v[0],
            var_dq: v[1],
            skew_dq: v[2],
            kurt_dq: v[3],
            q2: v[4],
            q_max_minus_2: v[5],
        })
    }
}

fn find<T: Scalar>(records: &[CycleRecord<T>], cycle: Cycle) -> Result<&CycleRecord<T>> {
    records
        .iter()
        .find(|r| r.cycle == cycle)
        .ok_or(Error::MissingCycle { cycle })
}

/// `Q_late(V) − Q_early(V)` on a uniform grid (high to low) over the
/// shared voltage range.
pub fn delta_q<T: Scalar>(
    records: &[CycleRecord<T>],
    early: Cycle,
    late: Cycle,
    grid_points: usize,
) -> Result<Vec<T>> {
    if grid_points < 2 {
        return Err(Error::invalid("grid_points", "need at least 2"));
    }
    let a = find(records, early)?;
    let b = find(records, late)?;
    let (a_lo, a_hi) = a.voltage_range();
    let (b_lo, b_hi) = b.voltage_range();
    let lo = a_lo.max(b_lo);
    let hi = a_hi.min(b_hi);
    if lo >= hi {
        return Err(Error::NoVoltageOverlap { early, late });
    }
    let step = (hi - lo) / T::of_usize(grid_points - 1);
    Ok((0..grid_points)
        .map(|i| {
            let v = if i == grid_points - 1 {
                lo
            } else {
                hi - step * T::of_usize(i)
            };
            b.q_at(v) - a.q_at(v)
        })
        .collect())
}

/// Population variance, skewness and non-excess kurtosis. A sample whose
/// spread is at rounding level of `value_scale` (the magnitude of the
/// quantities it was computed from) counts as constant: all three are zero.
pub(crate) fn moments<T: Scalar>(x: &[T], value_scale: T) -> (T, T, T) {
    let n = T::of_usize(x.len());
    let mean = crate::scalar::mean(x);
    let (mut m2, mut m3, mut m4) = (T::zero(), T::zero(), T::zero());
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let scale = x.iter().fold(value_scale.abs(), |m, v| m.max(v.abs()));
    let floor = T::of(64.0) * T::epsilon() * scale;
    if m2.sqrt() <= floor {
        return (T::zero(), T::zero(), T::zero());
    }
    (m2, m3 / m2.powf(T::of(1.5)), m4 / (m2 * m2))
}

/// Features from the first `budget` cycles: ΔQ between cycles 10 and
/// `budget`, capacity at cycle 2, and the best capacity up to `budget`
/// relative to cycle 2.
pub fn extract_features<T: Scalar>(
    records: &[CycleRecord<T>],
    budget: Cycle,
    grid_points: usize,
) -> Result<FeatureVector<T>> {
    if budget < MIN_BUDGET {
        return Err(Error::BudgetTooSmall { budget });
    }
    let dq = delta_q(records, EARLY_CYCLE, budget, grid_points)?;
    let min_dq = dq.iter().copied().fold(T::infinity(), T::min);
    let q_scale = [EARLY_CYCLE, budget]
        .iter()
        .map(|&c| find(records, c).map(|r| r.q_ah.iter().fold(T::zero(), |m, v| m.max(v.abs()))))
        .collect::<Result<Vec<T>>>()?
        .into_iter()
        .fold(T::zero(), T::max);
    let (var_dq, skew_dq, kurt_dq) = moments(&dq, q_scale);
    let q2 = find(records, Q2_CYCLE)?.capacity();
    let q_max = records
        .iter()
        .filter(|r| r.cycle <= budget)
        .map(CycleRecord::capacity)
        .fold(T::neg_infinity(), T::max);
    Ok(FeatureVector {
        min_dq,
        var_dq,
        skew_dq,
        kurt_dq,
        q2,
        q_max_minus_2: q_max - q2,
    })
}

/// Writes `cell_id,min_dq,...` rows.
pub fn write_features_csv<T: Scalar, W: Write>(
    rows: &[(String, FeatureVector<T>)],
    writer: W,
) -> Result<()> {
    let err = |e: csv::Error| Error::Serialization(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["cell_id"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header).map_err(err)?;
    for (id, f) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(f.to_array().iter().map(|v| format!("{v:e}")));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))
}

pub fn read_features_csv<T: Scalar, R: Read>(reader: R) -> Result<Vec<(String, FeatureVector<T>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let id_col = col("cell_id")?;
    let cols: Vec<usize> = FEATURE_NAMES
        .iter()
        .map(|n| col(n))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let mut vals = Vec::with_capacity(6);
        for (k, &c) in cols.iter().enumerate() {
            let text = rec.get(c).unwrap_or("");
            let v: f64 = text.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad {} `{text}`", FEATURE_NAMES[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature { row, col: k });
            }
            vals.push(T::of(v));
        }
        out.push((
            rec.get(id_col).unwrap_or("").to_string(),
            FeatureVector::from_slice(&vals)?,
        ));
    }
    Ok(out)
}
