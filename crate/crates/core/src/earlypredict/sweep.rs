use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{extract_features, DEFAULT_GRID_POINTS, MIN_BUDGET};
use super::gbrt::{gbrt_predict, gbrt_train, GbrtParams};
use super::metrics::evaluate;
use super::records::CycleRecord;
use super::split::stratified_split;
use crate::error::{Error, Result};
use crate::{Cycle, Scalar};

/// A cell's cycle records with its knee-onset label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCell<T> {
    pub cell_id: String,
    pub records: Vec<CycleRecord<T>>,
    pub onset: Cycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub budgets: Vec<Cycle>,
    pub repeats: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub grid_points: usize,
    pub gbrt: GbrtParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            budgets: (15..=35).collect(),
            repeats: 5,
            seed: 42,
            train_frac: 0.8,
            grid_points: DEFAULT_GRID_POINTS,
            gbrt: GbrtParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: Cycle,
    pub mean_rmse: f64,
    pub mean_mape: f64,
    /// Per-repeat test RMSE.
    pub rmse: Vec<f64>,
    /// Whether every repeat's training loss was non-increasing.
    pub training_monotone: bool,
}

/// Extracts features at each budget and averages test metrics over
/// `repeats` stratified splits seeded `seed, seed + 1, ...`.
pub fn sensitivity_sweep<T: Scalar>(
    cells: &[LabeledCell<T>],
    config: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if let Some(&budget) = config.budgets.iter().find(|&&b| b < MIN_BUDGET) {
        return Err(Error::BudgetTooSmall { budget });
    }
    if config.repeats == 0 {
        return Err(Error::invalid("repeats", "must be at least 1"));
    }
    config.gbrt.validate()?;
    if cells.len() < 2 {
        return Err(Error::EmptyTrainingSet);
    }
    let labels: Vec<Cycle> = cells.iter().map(|c| c.onset).collect();
    let y: Vec<T> = labels.iter().map(|&l| T::of(l as f64)).collect();
    let splits: Vec<_> = (0..config.repeats)
        .map(|r| {
            stratified_split(
                &labels,
                config.train_frac,
                config.seed.wrapping_add(r as u64),
            )
        })
        .collect();

    let mut rows = Vec::with_capacity(config.budgets.len());
    for &budget in &config.budgets {
        let x: Vec<Vec<T>> = cells
            .par_iter()
            .map(|c| {
                extract_features(&c.records, budget, config.grid_points)
                    .map(|f| f.to_array().to_vec())
            })
            .collect::<Result<_>>()?;
        let runs: Vec<(f64, f64, bool)> = splits
            .par_iter()
            .map(|(train, test)| {
                if test.is_empty() {
                    return Err(Error::invalid("train_frac", "leaves no test samples"));
                }
                let pick = |idx: &[usize]| -> (Vec<Vec<T>>, Vec<T>) {
                    (
                        idx.iter().map(|&i| x[i].clone()).collect(),
                        idx.iter().map(|&i| y[i]).collect(),
                    )
                };
                let (xtr, ytr) = pick(train);
                let (xte, yte) = pick(test);
                let fit = gbrt_train(&xtr, &ytr, &config.gbrt)?;
                let pred = gbrt_predict(&fit.model, &xte)?;
                let m = evaluate(&yte, &pred)?;
                Ok((m.rmse, m.mape, fit.training_loss_monotone()))
            })
            .collect::<Result<_>>()?;
        let n = runs.len() as f64;
        rows.push(SweepRow {
            budget,
            mean_rmse: runs.iter().map(|r| r.0).sum::<f64>() / n,
            mean_mape: runs.iter().map(|r| r.1).sum::<f64>() / n,
            rmse: runs.iter().map(|r| r.0).collect(),
            training_monotone: runs.iter().all(|r| r.2),
        });
    }
    Ok(rows)
}
