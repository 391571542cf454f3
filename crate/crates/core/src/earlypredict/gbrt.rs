//! Least-squares gradient boosting with depth-limited regression trees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbrtParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for GbrtParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            learning_rate: 0.05,
            max_depth: 3,
            min_leaf: 2,
        }
    }
}

impl GbrtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid("learning_rate", "must lie in (0, 1]"));
        }
        if self.min_leaf == 0 {
            return Err(Error::invalid("min_leaf", "must be at least 1"));
        }
        Ok(())
    }
}

/// Tree node. Splits send `x[feature] <= threshold` left; leaves have no
/// feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Node<T> {
    pub feature: Option<usize>,
    pub threshold: T,
    pub left: usize,
    pub right: usize,
    pub value: T,
}

/// Flattened tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    pub fn predict(&self, x: &[T]) -> T {
        let mut k = 0;
        loop {
            let node = &self.nodes[k];
            match node.feature {
                None => return node.value,
                Some(f) => {
                    k = if x[f] <= node.threshold {
                        node.left
                    } else {
                        node.right
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GbrtModel<T> {
    pub init_value: T,
    pub learning_rate: T,
    pub n_features: usize,
    pub trees: Vec<Tree<T>>,
}

impl<T: Scalar> GbrtModel<T> {
    pub fn predict_row(&self, x: &[T]) -> Result<T> {
        if x.len() != self.n_features {
            return Err(Error::FeatureCountMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let boost: T = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(self.init_value + self.learning_rate * boost)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbrtFit<T> {
    pub model: GbrtModel<T>,
    /// Training RMSE before the first tree and after each tree.
    pub train_rmse: Vec<T>,
}

impl<T: Scalar> GbrtFit<T> {
    /// True when no boosting round raised the training RMSE beyond
    /// rounding.
    pub fn training_loss_monotone(&self) -> bool {
        self.train_rmse
            .windows(2)
            .all(|w| w[1] <= w[0] + T::of(1e-12) * w[0].abs().max(T::one()))
    }
}

struct Builder<'a, T> {
    x: &'a [Vec<T>],
    params: GbrtParams,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Builder<'_, T> {
    fn leaf(&mut self, idx: &[usize], r: &[T]) -> usize {
        let value = idx.iter().map(|&i| r[i]).sum::<T>() / T::of_usize(idx.len());
        self.nodes.push(Node {
            feature: None,
            threshold: T::zero(),
            left: 0,
            right: 0,
            value,
        });
        self.nodes.len() - 1
    }

    /// Best split by squared-error reduction; ties keep the lower feature
    /// and then the lower threshold.
    fn best_split(&self, idx: &[usize], r: &[T]) -> Option<(usize, T, T)> {
        let n = idx.len();
        let min_leaf = self.params.min_leaf;
        let total: T = idx.iter().map(|&i| r[i]).sum();
        let base = total * total / T::of_usize(n);
        let mut best: Option<(usize, T, T)> = None;
        let n_features = self.x[idx[0]].len();
        let mut order = idx.to_vec();
        for f in 0..n_features {
            order.sort_by(|&a, &b| {
                self.x[a][f]
                    .partial_cmp(&self.x[b][f])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut left = T::zero();
            for k in 0..n - 1 {
                left += r[order[k]];
                let nl = k + 1;
                let nr = n - nl;
                let (xa, xb) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if nl < min_leaf || nr < min_leaf || xa == xb {
                    continue;
                }
                let right = total - left;
                let gain = left * left / T::of_usize(nl) + right * right / T::of_usize(nr) - base;
                let threshold = xa + (xb - xa) / T::of(2.0);
                if best.is_none_or(|(_, _, g)| gain > g) {
                    best = Some((f, threshold, gain));
                }
            }
        }
        best.filter(|&(_, _, g)| g > T::zero())
    }

    fn grow(&mut self, idx: &[usize], r: &[T], depth: usize) -> usize {
        if depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf {
            return self.leaf(idx, r);
        }
        let Some((f, threshold, _)) = self.best_split(idx, r) else {
            return self.leaf(idx, r);
        };
        let (l, rr): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][f] <= threshold);
        let me = self.nodes.len();
        self.nodes.push(Node {
            feature: Some(f),
            threshold,
            left: 0,
            right: 0,
            value: T::zero(),
        });
        let left = self.grow(&l, r, depth + 1);
        let right = self.grow(&rr, r, depth + 1);
        self.nodes[me].left = left;
        self.nodes[me].right = right;
        me
    }
}

fn rmse<T: Scalar>(r: &[T]) -> T {
    (r.iter().map(|&v| v * v).sum::<T>() / T::of_usize(r.len())).sqrt()
}

/// Fits `params.n_trees` trees, each to the residuals of the ensemble so far.
pub fn gbrt_train<T: Scalar>(x: &[Vec<T>], y: &[T], params: &GbrtParams) -> Result<GbrtFit<T>> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::EmptyTrainingSet);
    }
    let n_features = x[0].len();
    for (row, xs) in x.iter().enumerate() {
        if xs.len() != n_features {
            return Err(Error::FeatureCountMismatch {
                expected: n_features,
                got: xs.len(),
            });
        }
        if let Some(col) = xs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { row, col });
        }
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature {
            row,
            col: n_features,
        });
    }
    let init_value = crate::scalar::mean(y);
    let lr = T::of(params.learning_rate);
    let mut pred = vec![init_value; y.len()];
    let mut resid: Vec<T> = y.iter().map(|&v| v - init_value).collect();
    let mut train_rmse = vec![rmse(&resid)];
    let all: Vec<usize> = (0..y.len()).collect();
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let mut b = Builder {
            x,
            params: *params,
            nodes: Vec::new(),
        };
        b.grow(&all, &resid, 0);
        let tree = Tree { nodes: b.nodes };
        for i in 0..y.len() {
            pred[i] += lr * tree.predict(&x[i]);
            resid[i] = y[i] - pred[i];
        }
        train_rmse.push(rmse(&resid));
        trees.push(tree);
    }
    Ok(GbrtFit {
        model: GbrtModel {
            init_value,
            learning_rate: lr,
            n_features,
            trees,
        },
        train_rmse,
    })
}

pub fn gbrt_predict<T: Scalar>(model: &GbrtModel<T>, x: &[Vec<T>]) -> Result<Vec<T>> {
    x.iter().map(|row| model.predict_row(row)).collect()
}
