use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Cycle, Scalar};

pub const CYCLE_HEADER: [&str; 3] = ["cycle", "voltage_v", "discharge_capacity_ah"];

/// Discharge capacity against voltage for one cycle; voltage descends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CycleRecord<T> {
    pub cycle: Cycle,
    pub voltage_v: Vec<T>,
    pub q_ah: Vec<T>,
}

impl<T: Scalar> CycleRecord<T> {
    pub fn new(cycle: Cycle, voltage_v: Vec<T>, q_ah: Vec<T>) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidCycleRecord {
            cycle,
            reason: reason.to_string(),
        };
        if voltage_v.len() != q_ah.len() {
            return Err(invalid("voltage and capacity lengths differ"));
        }
        if voltage_v.len() < 2 {
            return Err(invalid("need at least two samples"));
        }
        if !voltage_v.iter().chain(&q_ah).all(|v| v.is_finite()) {
            return Err(invalid("non-finite sample"));
        }
        if voltage_v.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("voltage must be strictly decreasing"));
        }
        Ok(Self {
            cycle,
            voltage_v,
            q_ah,
        })
    }

    /// Final (maximum) discharge capacity of the cycle.
    pub fn capacity(&self) -> T {
        self.q_ah.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Voltage range `(low, high)`.
    pub fn voltage_range(&self) -> (T, T) {
        (self.voltage_v[self.voltage_v.len() - 1], self.voltage_v[0])
    }

    /// Linear interpolation of capacity at voltage `v` inside the range.
    pub fn q_at(&self, v: T) -> T {
        let vs = &self.voltage_v;
        // first index whose voltage is <= v
        let hi = vs.partition_point(|&x| x > v);
        if hi == 0 {
            return self.q_ah[0];
        }
        if hi >= vs.len() {
            return self.q_ah[vs.len() - 1];
        }
        let (v0, v1) = (vs[hi - 1], vs[hi]);
        let t = (v0 - v) / (v0 - v1);
        self.q_ah[hi - 1] + t * (self.q_ah[hi] - self.q_ah[hi - 1])
    }
}

/// Parses `cycle,voltage_v,discharge_capacity_ah` rows grouped by cycle.
pub fn parse_cycle_records<T: Scalar, R: Read>(reader: R) -> Result<Vec<CycleRecord<T>>> {
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
    let mut cols = [0usize; 3];
    for (slot, name) in cols.iter_mut().zip(CYCLE_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })?;
    }
    let mut out: Vec<CycleRecord<T>> = Vec::new();
    let mut current: Option<(Cycle, Vec<T>, Vec<T>)> = None;
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let get = |i: usize| rec.get(cols[i]).unwrap_or("");
        let bad = |what: &str, v: &str| Error::Parse {
            line,
            message: format!("bad {what} `{v}`"),
        };
        let cycle: Cycle = get(0).parse().map_err(|_| bad("cycle", get(0)))?;
        let v: f64 = get(1).parse().map_err(|_| bad("voltage", get(1)))?;
        let q: f64 = get(2).parse().map_err(|_| bad("capacity", get(2)))?;
        match &mut current {
            Some((c, vs, qs)) if *c == cycle => {
                vs.push(T::of(v));
                qs.push(T::of(q));
            }
            _ => {
                if let Some((c, vs, qs)) = current.take() {
                    out.push(CycleRecord::new(c, vs, qs)?);
                }
                if out.iter().any(|r| r.cycle == cycle) {
                    return Err(Error::Parse {
                        line,
                        message: format!("rows of cycle {cycle} are not contiguous"),
                    });
                }
                current = Some((cycle, vec![T::of(v)], vec![T::of(q)]));
            }
        }
    }
    if let Some((c, vs, qs)) = current {
        out.push(CycleRecord::new(c, vs, qs)?);
    }
    Ok(out)
}

pub fn load_cycle_records<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<CycleRecord<T>>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_cycle_records(file)
}

pub fn write_cycle_records<T: Scalar, W: std::io::Write>(
    records: &[CycleRecord<T>],
    writer: W,
) -> Result<()> {
    let err = |e: csv::Error| Error::Serialization(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CYCLE_HEADER).map_err(err)?;
    for r in records {
        for (v, q) in r.voltage_v.iter().zip(&r.q_ah) {
            w.write_record([r.cycle.to_string(), v.to_string(), q.to_string()])
                .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))
}
