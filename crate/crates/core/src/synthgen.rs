//! Synthetic capacity-fade curves with known knee geometry.
//!
//! The noiseless trend is
//! `q(n) = 1 − a·n^(0.5/p) − b·(exp(c·max(0, n − n_k)) − 1)`:
//! square-root-like fade for `p = 1`, increasingly convex early fade as
//! `p` drops below 0.5, and an exponential knee after `n_k`. Cycles run
//! from 1 and the curve stops before the trend falls below 0.6.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baconwatts::{dbw_model, DbwParams};
use crate::earlypredict::CycleRecord;
use crate::error::{Error, Result};
use crate::ingest::{self, CapacityFadeSeries, CellMetadata};
use crate::{Cycle, Scalar};

/// Normalized capacity at which generated curves are cut off.
pub const TRUNCATE_AT: f64 = 0.6;

/// Onset threshold as a multiple of the median early |second difference|.
pub const ONSET_FACTOR: f64 = 10.0;

pub const TRUTH_DEFINITION: &str = "noiseless trend: onset = first cycle >= n_k with |second difference| > 10x the median |second difference| before n_k; knee = cycle of minimum second difference";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_cycles: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub n_k: f64,
    pub p: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub q_nom_ah: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_cycles: 2000,
            a: 2e-3,
            b: 1e-3,
            c: 0.05,
            n_k: 1000.0,
            p: 1.0,
            noise_sigma: 0.0,
            seed: 0,
            q_nom_ah: 1.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidSpec {
                reason: reason.to_string(),
            })
        };
        if !(self.a >= 0.0 && self.b >= 0.0 && self.c >= 0.0) {
            return bad("a, b and c must be nonnegative");
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad("p must lie in (0, 1]");
        }
        if !(self.n_k >= 0.0 && self.n_k < self.n_cycles as f64) {
            return bad("n_k must lie in [0, n_cycles)");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be nonnegative");
        }
        if !(self.q_nom_ah > 0.0 && self.q_nom_ah.is_finite()) {
            return bad("q_nom_ah must be positive");
        }
        if self.n_cycles < CapacityFadeSeries::<f64>::MIN_LEN {
            return bad("n_cycles must be at least 3");
        }
        Ok(())
    }

    pub fn has_knee(&self) -> bool {
        self.b > 0.0 && self.c > 0.0
    }

    /// Noiseless normalized capacity at cycle `n`.
    pub fn trend(&self, n: f64) -> f64 {
        1.0 - self.a * n.powf(0.5 / self.p)
            - self.b * ((self.c * (n - self.n_k).max(0.0)).exp() - 1.0)
    }

    /// Noiseless trend over the retained cycles `1..=last`.
    pub fn retained_trend(&self) -> Vec<f64> {
        (1..=self.n_cycles)
            .map(|n| self.trend(n as f64))
            .take_while(|&q| q >= TRUNCATE_AT)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub onset_cycle: Cycle,
    pub knee_cycle: Cycle,
}

/// Truth file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub cell_id: String,
    pub onset_cycle: Option<Cycle>,
    pub knee_cycle: Option<Cycle>,
    pub eol_cycle: Option<Cycle>,
    pub definition: String,
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone)]
pub struct SyntheticCurve {
    pub spec: SyntheticSpec,
    pub series: CapacityFadeSeries<f64>,
    /// `None` when the spec has no knee.
    pub truth: Option<GroundTruth>,
    /// First cycle at which the noiseless trend is at or below 0.8.
    pub eol_cycle: Option<Cycle>,
}

impl SyntheticCurve {
    pub fn truth_record(&self) -> TruthRecord {
        TruthRecord {
            cell_id: self.series.cell_id().to_string(),
            onset_cycle: self.truth.map(|t| t.onset_cycle),
            knee_cycle: self.truth.map(|t| t.knee_cycle),
            eol_cycle: self.eol_cycle,
            definition: TRUTH_DEFINITION.to_string(),
            spec: self.spec,
        }
    }

    pub fn converted<T: Scalar>(&self) -> Result<CapacityFadeSeries<T>> {
        CapacityFadeSeries::new(
            self.series.cell_id(),
            self.series.cycles().to_vec(),
            self.series
                .capacity_ah()
                .iter()
                .map(|&v| T::of(v))
                .collect(),
            T::of(self.series.q_nom_ah()),
        )
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Knee-onset and knee of the noiseless trend.
pub fn ground_truth(spec: &SyntheticSpec) -> Result<GroundTruth> {
    spec.validate()?;
    if !spec.has_knee() {
        return Err(Error::DegenerateSpec);
    }
    let q = spec.retained_trend();
    if q.len() < 3 {
        return Err(Error::DegenerateSpec);
    }
    // d2[k] belongs to cycle k + 2
    let d2: Vec<f64> = q.windows(3).map(|w| w[0] + w[2] - 2.0 * w[1]).collect();
    let cycle = |k: usize| (k + 2) as f64;
    let state1: Vec<f64> = d2
        .iter()
        .enumerate()
        .filter(|&(k, _)| cycle(k) < spec.n_k)
        .map(|(_, v)| v.abs())
        .collect();
    let threshold = ONSET_FACTOR * median(state1);
    let onset = d2
        .iter()
        .enumerate()
        .find(|&(k, v)| cycle(k) >= spec.n_k && v.abs() > threshold)
        .map(|(k, _)| k + 2);
    let knee = d2
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |best, (k, &v)| if v < best.1 { (k, v) } else { best },
        )
        .0
        + 2;
    match onset {
        Some(onset) if onset < knee => Ok(GroundTruth {
            onset_cycle: onset as Cycle,
            knee_cycle: knee as Cycle,
        }),
        _ => Err(Error::DegenerateSpec),
    }
}

/// Generates one curve. Specs without a knee yield `truth = None`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCurve> {
    spec.validate()?;
    let trend = spec.retained_trend();
    if trend.len() < 3 {
        return Err(Error::InvalidSpec {
            reason: "trend falls below the cut-off within three cycles".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidSpec {
        reason: e.to_string(),
    })?;
    let cycles: Vec<Cycle> = (1..=trend.len() as Cycle).collect();
    let capacity: Vec<f64> = trend
        .iter()
        .map(|&q| {
            let v = if spec.noise_sigma > 0.0 {
                q + noise.sample(&mut rng)
            } else {
                q
            };
            v * spec.q_nom_ah
        })
        .collect();
    let truth = match ground_truth(spec) {
        Ok(t) => Some(t),
        Err(Error::DegenerateSpec) => None,
        Err(e) => return Err(e),
    };
    let eol_cycle = ingest::find_eol(&cycles, &trend, ingest::DEFAULT_EOL_THRESHOLD)?;
    let series = CapacityFadeSeries::new(
        format!("synth-{}", spec.seed),
        cycles,
        capacity,
        spec.q_nom_ah,
    )?;
    Ok(SyntheticCurve {
        spec: *spec,
        series,
        truth,
        eol_cycle,
    })
}

fn check_count(count: usize) -> Result<()> {
    if count == 0 {
        Err(Error::InvalidSpec {
            reason: "count must be at least 1".into(),
        })
    } else {
        Ok(())
    }
}

fn family<F>(count: usize, seed: u64, prefix: &str, mut draw: F) -> Result<Vec<SyntheticCurve>>
where
    F: FnMut(&mut ChaCha8Rng) -> SyntheticSpec,
{
    check_count(count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut spec = draw(&mut rng);
            spec.seed = rng.random();
            let mut curve = generate(&spec)?;
            curve.series = curve.series.with_cell_id(format!("{prefix}-{i:03}"));
            Ok(curve)
        })
        .collect()
}

/// Square-root fade with a sharp exponential knee; per-cycle noise 1e-3.
pub fn generate_knee_family(count: usize, seed: u64) -> Result<Vec<SyntheticCurve>> {
    family(count, seed, "knee", |rng| {
        let n = 2000;
        SyntheticSpec {
            n_cycles: n,
            a: rng.random_range(1e-3..3e-3),
            b: 10f64.powf(rng.random_range(-3.3..-2.7)),
            c: rng.random_range(0.04..0.08),
            n_k: (rng.random_range(0.45..0.7) * n as f64).floor(),
            p: 1.0,
            noise_sigma: 1e-3,
            seed: 0,
            q_nom_ah: 1.1,
        }
    })
}

/// Convex first phase (`p` in 0.25..0.45) followed by a knee, on a 3 Ah cell.
pub fn generate_convex_family(count: usize, seed: u64) -> Result<Vec<SyntheticCurve>> {
    family(count, seed, "convex", |rng| {
        let n = 2000;
        let n_k = (rng.random_range(0.45..0.7) * n as f64).floor();
        let p: f64 = rng.random_range(0.25..0.45);
        let early_loss: f64 = rng.random_range(0.05..0.12);
        SyntheticSpec {
            n_cycles: n,
            a: early_loss / n_k.powf(0.5 / p),
            b: 10f64.powf(rng.random_range(-3.3..-2.7)),
            c: rng.random_range(0.04..0.08),
            n_k,
            p,
            noise_sigma: 1e-3,
            seed: 0,
            q_nom_ah: 3.0,
        }
    })
}

/// Fleet whose knee timing is set by `n_k` alone, so knee and end of life
/// move together up to small per-cell shape jitter.
pub fn generate_eol_fleet(count: usize, seed: u64) -> Result<Vec<SyntheticCurve>> {
    family(count, seed, "fleet", |rng| {
        let n_k = rng.random_range(400.0..1400.0f64).floor();
        SyntheticSpec {
            n_cycles: n_k as usize + 1000,
            a: rng.random_range(1.0e-3..1.5e-3),
            b: 1e-3,
            c: 0.05 * rng.random_range(0.95..1.05),
            n_k,
            p: 1.0,
            noise_sigma: 1e-3,
            seed: 0,
            q_nom_ah: 1.1,
        }
    })
}

/// Double Bacon-Watts test data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbwSpec {
    pub n_points: usize,
    pub params: DbwParams<f64>,
    pub noise_sigma_ah: f64,
    pub seed: u64,
}

impl DbwSpec {
    /// Three-phase fade over 1000 cycles with transitions in the middle
    /// and late part of life and noise of 1e-4 Ah.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1000usize;
        let s1 = -rng.random_range(3e-5..8e-5);
        let s2 = s1 - rng.random_range(1.5e-4..3e-4);
        let s3 = s2 - rng.random_range(6e-4..1.2e-3);
        let alpha2 = (s2 - s1) / 2.0;
        let alpha3 = (s3 - s2) / 2.0;
        let params = DbwParams {
            alpha0: 1.0,
            alpha1: s1 + alpha2 + alpha3,
            alpha2,
            alpha3,
            x0: rng.random_range(0.45..0.6) * n as f64,
            x2: rng.random_range(0.75..0.88) * n as f64,
            gamma: crate::baconwatts::DEFAULT_GAMMA,
        };
        Self {
            n_points: n,
            params,
            noise_sigma_ah: 1e-4,
            seed: rng.random(),
        }
    }
}

/// Samples the model at cycles `1..=n_points` plus Gaussian noise.
pub fn generate_dbw(spec: &DbwSpec) -> (Vec<f64>, Vec<f64>, DbwParams<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma_ah.max(0.0)).expect("finite sigma");
    let x: Vec<f64> = (1..=spec.n_points).map(|c| c as f64).collect();
    let y = x
        .iter()
        .map(|&xi| dbw_model(xi, &spec.params) + noise.sample(&mut rng))
        .collect();
    (x, y, spec.params)
}

/// A synthetic cell with early-cycle discharge records.
#[derive(Debug, Clone)]
pub struct SyntheticCell {
    pub curve: SyntheticCurve,
    pub records: Vec<CycleRecord<f64>>,
}

impl SyntheticCell {
    pub fn onset_label(&self) -> Option<Cycle> {
        self.curve.truth.map(|t| t.onset_cycle)
    }
}

const V_HIGH: f64 = 3.6;
const V_LOW: f64 = 2.0;
const V_POINTS: usize = 161;

/// Smooth step from 0 to 1 centered at zero.
fn step(z: f64) -> f64 {
    0.5 * (1.0 + z.tanh())
}

/// Fleet for early prediction. A latent severity `s` in (0, 1) sets both
/// the per-cycle loss rate visible in the discharge curves and the
/// knee-onset of the capacity trend, so early records carry information
/// about the onset label.
pub fn generate_cycle_fleet(
    count: usize,
    record_cycles: Cycle,
    seed: u64,
) -> Result<Vec<SyntheticCell>> {
    check_count(count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 15.0).expect("valid");
    let cap_noise = Normal::new(0.0, 2e-4).expect("valid");
    let grid: Vec<f64> = (0..V_POINTS)
        .map(|i| V_HIGH - (V_HIGH - V_LOW) * i as f64 / (V_POINTS - 1) as f64)
        .collect();
    let mut cells = Vec::with_capacity(count);
    for i in 0..count {
        let s: f64 = rng.random_range(0.0..1.0);
        let rate = 10f64.powf(-4.5 + s);
        let n_k = (400.0 - 250.0 * s + jitter.sample(&mut rng))
            .round()
            .max(60.0);
        let q0: f64 = rng.random_range(1.05..1.1);
        let spec = SyntheticSpec {
            n_cycles: n_k as usize + 800,
            a: rng.random_range(1e-3..2e-3),
            b: 1e-3,
            c: rng.random_range(0.04..0.06),
            n_k,
            p: 1.0,
            noise_sigma: 1e-3,
            seed: rng.random(),
            q_nom_ah: q0,
        };
        let mut curve = generate(&spec)?;
        curve.series = curve.series.with_cell_id(format!("cell-{i:03}"));

        let shape: Vec<f64> = grid
            .iter()
            .map(|&v| q0 * (0.9 * step((3.3 - v) / 0.04) + 0.1 * (V_HIGH - v) / (V_HIGH - V_LOW)))
            .collect();
        let loss: Vec<f64> = grid.iter().map(|&v| q0 * step((3.2 - v) / 0.12)).collect();
        let mut records = Vec::with_capacity(record_cycles as usize);
        for n in 1..=record_cycles {
            let scale = 1.0 + cap_noise.sample(&mut rng);
            let q: Vec<f64> = shape
                .iter()
                .zip(&loss)
                .map(|(&f, &g)| scale * f - rate * n as f64 * g)
                .collect();
            records.push(CycleRecord::new(n, grid.clone(), q)?);
        }
        cells.push(SyntheticCell { curve, records });
    }
    Ok(cells)
}

/// Writes `<id>.csv`, `<id>.meta.json` and `<id>.truth.json` into `dir`.
pub fn write_curve(dir: &Path, curve: &SyntheticCurve) -> Result<()> {
    let id = curve.series.cell_id();
    let csv_path = dir.join(format!("{id}.csv"));
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    ingest::write_capacity_csv(&curve.series, file)?;
    let meta = CellMetadata {
        cell_id: Some(id.to_string()),
        q_nom_ah: Some(curve.series.q_nom_ah()),
    };
    let meta_path = dir.join(format!("{id}.meta.json"));
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;
    let truth_path = dir.join(format!("{id}.truth.json"));
    std::fs::write(
        &truth_path,
        serde_json::to_string_pretty(&curve.truth_record())?,
    )
    .map_err(|e| Error::io(&truth_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            n_cycles: 1200,
            a: 1e-3,
            b: 1e-4,
            c: 0.01,
            n_k: 600.0,
            p: 1.0,
            noise_sigma: 0.0,
            seed: 1,
            q_nom_ah: 1.1,
        }
    }

    #[test]
    fn no_knee_without_b() {
        let s = SyntheticSpec { b: 0.0, ..spec() };
        let curve = generate(&s).unwrap();
        assert!(curve.truth.is_none());
        assert_eq!(ground_truth(&s).unwrap_err(), Error::DegenerateSpec);
    }

    #[test]
    fn truth_of_reference_spec() {
        // independent evaluation of the rule, directly on the formula
        let s = spec();
        let q =
            |n: f64| 1.0 - 1e-3 * n.sqrt() - 1e-4 * (((0.01 * (n - 600.0).max(0.0)).exp()) - 1.0);
        let d2 = |n: f64| q(n - 1.0) + q(n + 1.0) - 2.0 * q(n);
        let mut early: Vec<f64> = (2..600).map(|n| d2(n as f64).abs()).collect();
        early.sort_by(|a, b| a.total_cmp(b));
        let med = 0.5 * (early[298] + early[299]);
        let onset = (600..1200)
            .find(|&n| d2(n as f64).abs() > 10.0 * med)
            .unwrap();
        let t = ground_truth(&s).unwrap();
        assert_eq!(t.onset_cycle, onset);
        assert_eq!(t.knee_cycle, 1199);
        assert!(t.onset_cycle < t.knee_cycle);
    }

    #[test]
    fn same_seed_same_curve() {
        let s = SyntheticSpec {
            noise_sigma: 1e-3,
            ..spec()
        };
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a.series, b.series);
        let c = generate(&SyntheticSpec { seed: 2, ..s }).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn truncates_at_cutoff() {
        let curve = generate(&SyntheticSpec {
            b: 1e-3,
            c: 0.05,
            n_cycles: 2000,
            ..spec()
        })
        .unwrap();
        assert!(curve.series.len() < 2000);
        let s = curve.spec;
        assert!(s.trend(curve.series.len() as f64) >= TRUNCATE_AT);
        assert!(s.trend(curve.series.len() as f64 + 1.0) < TRUNCATE_AT);
    }

    #[test]
    fn convex_family_is_convex_before_knee() {
        let fam = generate_convex_family(10, 3).unwrap();
        assert_eq!(fam.len(), 10);
        for c in &fam {
            let s = c.spec;
            assert!(s.p < 1.0);
            let nk = s.n_k as usize;
            for n in 2..nk {
                let n = n as f64;
                let d2 = s.trend(n - 1.0) + s.trend(n + 1.0) - 2.0 * s.trend(n);
                assert!(d2 < 0.0, "cycle {n}");
            }
        }
        let ids: std::collections::BTreeSet<_> = fam
            .iter()
            .map(|c| c.series.capacity_ah()[5].to_bits())
            .collect();
        assert_eq!(ids.len(), 10);
        assert!(generate_convex_family(0, 3).is_err());
        let one_a = generate_convex_family(1, 9).unwrap();
        let one_b = generate_convex_family(1, 9).unwrap();
        assert_eq!(one_a[0].series, one_b[0].series);
    }

    #[test]
    fn cycle_fleet_records_are_valid() {
        let fleet = generate_cycle_fleet(3, 35, 1).unwrap();
        for cell in &fleet {
            assert_eq!(cell.records.len(), 35);
            assert!(cell.onset_label().is_some());
            for r in &cell.records {
                assert!(r.q_ah.windows(2).all(|w| w[1] >= w[0]));
            }
        }
    }

    #[test]
    fn dbw_generator_reproducible() {
        let a = generate_dbw(&DbwSpec::random(1));
        let b = generate_dbw(&DbwSpec::random(1));
        assert_eq!(a.1, b.1);
        assert!(a.2.x0 < a.2.x2);
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let curve = generate(&spec()).unwrap();
        write_curve(dir.path(), &curve).unwrap();
        let loaded: CapacityFadeSeries<f64> =
            ingest::load_capacity_csv(dir.path().join("synth-1.csv"), &CellMetadata::default())
                .unwrap();
        assert_eq!(loaded.len(), curve.series.len());
        for (a, b) in loaded.capacity_ah().iter().zip(curve.series.capacity_ah()) {
            assert_eq!(a, b);
        }
        let truth: TruthRecord = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("synth-1.truth.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(truth.knee_cycle, curve.truth.map(|t| t.knee_cycle));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn trend_is_nonincreasing(
            a in 0.0f64..3e-3, b in 0.0f64..1e-3, c in 0.0f64..0.05,
            nk in 0.0f64..900.0, p in 0.2f64..1.0,
        ) {
            let s = SyntheticSpec { n_cycles: 1000, a, b, c, n_k: nk, p, ..SyntheticSpec::default() };
            let q = s.retained_trend();
            prop_assert!(q.windows(2).all(|w| w[1] <= w[0]));
        }

        #[test]
        fn truth_ordered_and_in_range(
            a in 5e-4f64..3e-3, b in 1e-4f64..2e-3, c in 0.01f64..0.08, nk in 300.0f64..1200.0,
        ) {
            let s = SyntheticSpec { n_cycles: 2000, a, b, c, n_k: nk.floor(), ..SyntheticSpec::default() };
            if let Ok(t) = ground_truth(&s) {
                prop_assert!(t.onset_cycle < t.knee_cycle);
                prop_assert!((t.knee_cycle as usize) <= s.retained_trend().len());
            }
        }

        #[test]
        fn stronger_knee_is_not_later(
            b in 1e-4f64..1e-3, c in 0.01f64..0.05, db in 0.0f64..1e-3, dc in 0.0f64..0.02,
        ) {
            let base = SyntheticSpec { n_cycles: 3000, a: 1e-3, b, c, n_k: 800.0, ..SyntheticSpec::default() };
            let t0 = ground_truth(&base).unwrap();
            let t1 = ground_truth(&SyntheticSpec { b: b + db, c: c + dc, ..base }).unwrap();
            prop_assert!(t1.knee_cycle <= t0.knee_cycle);
        }
    }
}
