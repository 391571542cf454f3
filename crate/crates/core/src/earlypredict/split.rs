use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Cycle;

/// Knee-onset classes used to stratify splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OnsetClass {
    /// Below 150 cycles.
    Early,
    /// 150 to 270 cycles.
    Normal,
    /// Above 270 cycles.
    Late,
}

pub fn onset_class(onset: Cycle) -> OnsetClass {
    match onset {
        0..150 => OnsetClass::Early,
        150..=270 => OnsetClass::Normal,
        _ => OnsetClass::Late,
    }
}

/// Per-class shuffled split. Each class sends `ceil(train_frac · n)`
/// members to training, so a class of one is always trained on.
/// Returns `(train, test)` index lists, each ascending.
pub fn stratified_split(labels: &[Cycle], train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let frac = train_frac.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [OnsetClass::Early, OnsetClass::Normal, OnsetClass::Late] {
        let mut members: Vec<usize> = (0..labels.len())
            .filter(|&i| onset_class(labels[i]) == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n = members.len();
        // the small offset keeps exact products such as 0.8 · 5 from rounding up
        let n_train = ((frac * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
