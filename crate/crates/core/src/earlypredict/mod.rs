//! Early-cycle knee-onset prediction: ΔQ(V) features from the first few
//! discharge curves, a least-squares boosted tree ensemble, and a sweep
//! over the number of cycles available.

mod features;
mod gbrt;
mod metrics;
mod records;
mod split;
mod sweep;

pub use features::{
    delta_q, extract_features, read_features_csv, write_features_csv, FeatureVector,
    DEFAULT_GRID_POINTS, EARLY_CYCLE, FEATURE_NAMES, MIN_BUDGET, Q2_CYCLE,
};
pub use gbrt::{gbrt_predict, gbrt_train, GbrtFit, GbrtModel, GbrtParams, Node, Tree};
pub use metrics::{evaluate, Metrics};
pub use records::{load_cycle_records, parse_cycle_records, write_cycle_records, CycleRecord};
pub use split::{onset_class, stratified_split, OnsetClass};
pub use sweep::{sensitivity_sweep, LabeledCell, SweepConfig, SweepRow};
