//! Pipeline configuration shared by the library entry points and the CLI.

use serde::{Deserialize, Serialize};

use crate::earlypredict::GbrtParams;
use crate::error::{Error, Result};
use crate::{baconwatts, ingest, preprocess};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub sg_window: usize,
    pub sg_order: usize,
    /// `ws`, the curvature stencil width.
    pub curv_window: usize,
    /// `L1`, the matrix-profile subsequence length.
    pub mp_window: usize,
    /// `L2`; when set, segmentation uses a profile computed with this window.
    pub cac_window: Option<usize>,
    /// REA exclusion radius; `None` means five times the segmentation window.
    pub exclusion_radius: Option<usize>,
    pub eol_threshold: f64,
    pub gamma: f64,
    pub max_iter: usize,
    pub gbrt: GbrtParams,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            sg_window: preprocess::DEFAULT_SG_WINDOW,
            sg_order: preprocess::DEFAULT_SG_ORDER,
            curv_window: preprocess::DEFAULT_CURV_WINDOW,
            mp_window: 3,
            cac_window: None,
            exclusion_radius: None,
            eol_threshold: ingest::DEFAULT_EOL_THRESHOLD,
            gamma: baconwatts::DEFAULT_GAMMA,
            max_iter: 1000,
            gbrt: GbrtParams::default(),
            seed: 42,
        }
    }
}

impl PipelineParams {
    /// Wider smoothing and a longer subsequence. On synthetic curves with
    /// per-cycle noise around 1e-3 of nominal capacity this locates both
    /// boundaries far more reliably than the three-cycle defaults.
    pub fn noisy() -> Self {
        Self {
            sg_window: 61,
            mp_window: 8,
            exclusion_radius: Some(40),
            ..Self::default()
        }
    }

    /// Window whose matrix profile feeds the arc curve.
    pub fn segmentation_window(&self) -> usize {
        self.cac_window.unwrap_or(self.mp_window)
    }

    pub fn exclusion_for(&self, window: usize) -> usize {
        self.exclusion_radius.unwrap_or(5 * window)
    }

    /// `L2 = floor(N / 5)` for a series of `n` cycles.
    pub fn default_cac_window(n: usize) -> usize {
        n / 5
    }

    pub fn validate(&self) -> Result<()> {
        if self.sg_window.is_multiple_of(2) {
            return Err(Error::EvenWindow {
                window: self.sg_window,
            });
        }
        if self.curv_window.is_multiple_of(2) {
            return Err(Error::EvenWindow {
                window: self.curv_window,
            });
        }
        if self.segmentation_window() < 2 {
            return Err(Error::DegenerateWindow {
                window: self.segmentation_window(),
            });
        }
        if !(self.eol_threshold > 0.0 && self.eol_threshold < 1.0) {
            return Err(Error::InvalidThreshold(self.eol_threshold));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be positive"));
        }
        self.gbrt.validate()
    }

    /// Sets one field from a `key=value` style pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(key, format!("cannot parse `{value}`")))
        }
        match key.trim().replace('-', "_").as_str() {
            "sg_window" => self.sg_window = num(key, value)?,
            "sg_order" => self.sg_order = num(key, value)?,
            "curv_window" => self.curv_window = num(key, value)?,
            "mp_window" => self.mp_window = num(key, value)?,
            "cac_window" => self.cac_window = Some(num(key, value)?),
            "exclusion" | "exclusion_radius" => self.exclusion_radius = Some(num(key, value)?),
            "eol_threshold" => self.eol_threshold = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "max_iter" => self.max_iter = num(key, value)?,
            "n_trees" => self.gbrt.n_trees = num(key, value)?,
            "learning_rate" => self.gbrt.learning_rate = num(key, value)?,
            "max_depth" => self.gbrt.max_depth = num(key, value)?,
            "min_leaf" => self.gbrt.min_leaf = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::invalid(other, "unknown configuration key")),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }
}
