//! Loading, validation, resampling and normalization of per-cycle
//! capacity data.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::NaturalCubicSpline;
use crate::{Cycle, Scalar};

pub const CAPACITY_HEADER: [&str; 2] = ["cycle", "discharge_capacity_ah"];

/// Default end-of-life threshold as a fraction of nominal capacity.
pub const DEFAULT_EOL_THRESHOLD: f64 = 0.8;

/// Discharge capacity of one cell, indexed by cycle number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CapacityFadeSeries<T> {
    cell_id: String,
    cycles: Vec<Cycle>,
    capacity_ah: Vec<T>,
    q_nom_ah: T,
}

impl<T: Scalar> CapacityFadeSeries<T> {
    pub const MIN_LEN: usize = 3;

    pub fn new(
        cell_id: impl Into<String>,
        cycles: Vec<Cycle>,
        capacity_ah: Vec<T>,
        q_nom_ah: T,
    ) -> Result<Self> {
        if cycles.len() != capacity_ah.len() {
            return Err(Error::LengthMismatch {
                left: cycles.len(),
                right: capacity_ah.len(),
            });
        }
        if let Some(row) = cycles.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotonicCycles { row: row + 1 });
        }
        if let Some(row) = capacity_ah
            .iter()
            .position(|c| !c.is_finite() || *c <= T::zero())
        {
            return Err(Error::NonPositiveCapacity { row });
        }
        if cycles.len() < Self::MIN_LEN {
            return Err(Error::TooShort {
                needed: Self::MIN_LEN,
                got: cycles.len(),
            });
        }
        if !(q_nom_ah.is_finite() && q_nom_ah > T::zero()) {
            return Err(Error::NonPositiveNominal);
        }
        Ok(Self {
            cell_id: cell_id.into(),
            cycles,
            capacity_ah,
            q_nom_ah,
        })
    }

    pub fn cell_id(&self) -> &str {
        &self.cell_id
    }

    pub fn cycles(&self) -> &[Cycle] {
        &self.cycles
    }

    pub fn capacity_ah(&self) -> &[T] {
        &self.capacity_ah
    }

    pub fn q_nom_ah(&self) -> T {
        self.q_nom_ah
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn is_unit_spaced(&self) -> bool {
        self.cycles.windows(2).all(|w| w[1] - w[0] == 1)
    }

    /// Returns a copy with capacity and nominal capacity multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(
            self.cell_id.clone(),
            self.cycles.clone(),
            self.capacity_ah.iter().map(|&c| c * factor).collect(),
            self.q_nom_ah * factor,
        )
    }

    pub fn with_cell_id(mut self, cell_id: impl Into<String>) -> Self {
        self.cell_id = cell_id.into();
        self
    }
}

/// Capacity expressed as a fraction of nominal capacity on a unit cycle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries<T> {
    pub cycles: Vec<Cycle>,
    pub values: Vec<T>,
}

impl<T: Scalar> NormalizedSeries<T> {
    pub fn find_eol(&self, threshold: f64) -> Result<Option<Cycle>> {
        find_eol(&self.cycles, &self.values, threshold)
    }
}

/// Optional metadata; fields left `None` are taken from the sidecar file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_nom_ah: Option<f64>,
}

impl CellMetadata {
    /// `overrides` wins field by field.
    pub fn merged(self, overrides: &CellMetadata) -> CellMetadata {
        CellMetadata {
            cell_id: overrides.cell_id.clone().or(self.cell_id),
            q_nom_ah: overrides.q_nom_ah.or(self.q_nom_ah),
        }
    }
}

/// Path of the `.meta.json` sidecar that belongs to `csv_path`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn read_metadata(path: &Path) -> Result<CellMetadata> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a capacity CSV (`cycle,discharge_capacity_ah`). The cell id and
/// nominal capacity come from the `.meta.json` sidecar, overridden by any
/// field set in `overrides`; the cell id falls back to the file stem.
pub fn load_capacity_csv<T: Scalar>(
    path: impl AsRef<Path>,
    overrides: &CellMetadata,
) -> Result<CapacityFadeSeries<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    let meta = if sidecar.exists() {
        read_metadata(&sidecar)?
    } else {
        CellMetadata::default()
    }
    .merged(overrides);
    let cell_id = meta.cell_id.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "cell".to_string())
    });
    let q_nom = meta.q_nom_ah.ok_or_else(|| Error::MissingMetadata {
        field: "q_nom_ah".into(),
    })?;
    parse_capacity_csv(file, cell_id, T::of(q_nom))
}

/// Parses capacity CSV content from any reader.
pub fn parse_capacity_csv<T: Scalar, R: Read>(
    reader: R,
    cell_id: impl Into<String>,
    q_nom_ah: T,
) -> Result<CapacityFadeSeries<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let cycle_col = col(CAPACITY_HEADER[0])?;
    let cap_col = col(CAPACITY_HEADER[1])?;

    let mut cycles: Vec<Cycle> = Vec::new();
    let mut capacity = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let cycle: Cycle = field(cycle_col).parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad cycle `{}`", field(cycle_col)),
        })?;
        let cap: f64 = field(cap_col).parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad capacity `{}`", field(cap_col)),
        })?;
        if let Some(&prev) = cycles.last() {
            if cycle <= prev {
                return Err(Error::NonMonotonicCycles { row });
            }
        }
        if !(cap.is_finite() && cap > 0.0) {
            return Err(Error::NonPositiveCapacity { row });
        }
        cycles.push(cycle);
        capacity.push(T::of(cap));
    }
    CapacityFadeSeries::new(cell_id, cycles, capacity, q_nom_ah)
}

/// Writes a capacity CSV in the canonical format.
pub fn write_capacity_csv<T: Scalar, W: std::io::Write>(
    series: &CapacityFadeSeries<T>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record(CAPACITY_HEADER).map_err(err)?;
    for (c, q) in series.cycles().iter().zip(series.capacity_ah()) {
        w.write_record([c.to_string(), format!("{}", q)])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))
}

/// Puts the series on a unit cycle grid from its first to its last cycle.
/// Unit-spaced input is returned unchanged; otherwise a natural cubic
/// spline through the samples supplies the missing cycles.
pub fn resample_even<T: Scalar>(series: &CapacityFadeSeries<T>) -> Result<CapacityFadeSeries<T>> {
    if series.is_unit_spaced() {
        return Ok(series.clone());
    }
    if series.len() < 4 {
        return Err(Error::TooShort {
            needed: 4,
            got: series.len(),
        });
    }
    let xs: Vec<T> = series.cycles().iter().map(|&c| T::of(c as f64)).collect();
    let spline = NaturalCubicSpline::new(&xs, series.capacity_ah())?;
    let first = series.cycles()[0];
    let last = *series.cycles().last().expect("non-empty series");
    let cycles: Vec<Cycle> = (first..=last).collect();
    let values = cycles
        .iter()
        .map(|&c| spline.eval(T::of(c as f64)))
        .collect();
    CapacityFadeSeries::new(
        series.cell_id().to_string(),
        cycles,
        values,
        series.q_nom_ah(),
    )
}

/// `capacity[i] / q_nom` for every sample.
pub fn normalize_values<T: Scalar>(capacity_ah: &[T], q_nom_ah: T) -> Result<Vec<T>> {
    if !(q_nom_ah.is_finite() && q_nom_ah > T::zero()) {
        return Err(Error::NonPositiveNominal);
    }
    Ok(capacity_ah.iter().map(|&c| c / q_nom_ah).collect())
}

pub fn normalize<T: Scalar>(series: &CapacityFadeSeries<T>) -> Result<NormalizedSeries<T>> {
    Ok(NormalizedSeries {
        cycles: series.cycles().to_vec(),
        values: normalize_values(series.capacity_ah(), series.q_nom_ah())?,
    })
}

/// First cycle whose value is at or below `threshold`, if any.
pub fn find_eol<T: Scalar>(
    cycles: &[Cycle],
    values: &[T],
    threshold: f64,
) -> Result<Option<Cycle>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidThreshold(threshold));
    }
    if cycles.len() != values.len() {
        return Err(Error::LengthMismatch {
            left: cycles.len(),
            right: values.len(),
        });
    }
    let t = T::of(threshold);
    Ok(values.iter().position(|&v| v <= t).map(|i| cycles[i]))
}
