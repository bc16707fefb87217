//! Bagged regression forests with out-of-bag bookkeeping.

mod explain;
mod tree;

pub use explain::{partial_dependence, permutation_importance, rank_desc, Importance};
pub use tree::{Node, RegressionTree};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OmerfError, Result};
use crate::par;
use crate::seeding::stream_rng;
use tree::GrowParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub num_trees: usize,
    /// Candidate features per split; `None` means `max(P/3, 1)`.
    pub mtry: Option<usize>,
    /// Nodes with at most this many rows are not split.
    pub min_node_size: usize,
    pub bootstrap: bool,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            num_trees: 500,
            mtry: None,
            min_node_size: 5,
            bootstrap: true,
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry.unwrap_or((n_features / 3).max(1))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
    /// Sorted out-of-bag rows per tree (empty when bootstrap is off).
    pub oob_rows: Vec<Vec<u32>>,
    pub config: ForestConfig,
    pub n_features: usize,
    pub n_train: usize,
}

/// Out-of-bag predictions; `covered[j]` is false when every tree saw row j.
#[derive(Debug, Clone, PartialEq)]
pub struct OobPrediction {
    pub values: Vec<f64>,
    pub covered: Vec<bool>,
}

/// Bootstrap draw for tree `index`, replayable from the forest seed.
pub fn bootstrap_rows(seed: u64, index: usize, n: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, index as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn fit_forest(x: &DMatrix<f64>, target: &[f64], config: &ForestConfig) -> Result<RandomForest> {
    let n = x.nrows();
    if n != target.len() {
        return Err(OmerfError::dim(format!(
            "x has {n} rows but target has {}",
            target.len()
        )));
    }
    if n < 2 {
        return Err(OmerfError::validation("forest needs at least 2 rows"));
    }
    if target.iter().any(|t| !t.is_finite()) {
        return Err(OmerfError::validation("forest target must be finite"));
    }
    if config.num_trees == 0 {
        return Err(OmerfError::validation("num_trees must be >= 1"));
    }
    let p = x.ncols();
    let mtry = config.resolved_mtry(p);
    if p > 0 && (mtry == 0 || mtry > p) {
        return Err(OmerfError::validation(format!("mtry {mtry} outside 1..={p}")));
    }
    let params = GrowParams {
        mtry,
        min_node_size: config.min_node_size.max(1),
        max_depth: config.max_depth,
    };

    let grown: Vec<(RegressionTree, Vec<u32>)> = par::map_range(config.num_trees, |k| {
        // stream 0..K are the bootstrap draws, K.. the split draws
        let rows = if config.bootstrap {
            bootstrap_rows(config.seed, k, n)
        } else {
            (0..n).collect()
        };
        let oob = if config.bootstrap {
            let mut seen = vec![false; n];
            for &r in &rows {
                seen[r] = true;
            }
            (0..n as u32).filter(|&r| !seen[r as usize]).collect()
        } else {
            Vec::new()
        };
        let mut rng = stream_rng(config.seed, (config.num_trees + k) as u64);
        (RegressionTree::grow(x, target, rows, params, &mut rng), oob)
    });
    let (trees, oob_rows) = grown.into_iter().unzip();
    Ok(RandomForest {
        trees,
        oob_rows,
        config: config.clone(),
        n_features: p,
        n_train: n,
    })
}

impl RandomForest {
    fn check_cols(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(OmerfError::dim(format!(
                "forest trained on {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok(())
    }

    #[inline]
    fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(x, row)).sum();
        sum / self.trees.len() as f64
    }

    /// Mean of the tree predictions for every row of `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_cols(x)?;
        Ok(par::map_range(x.nrows(), |r| self.predict_row(x, r)))
    }

    /// Per-row list of trees for which the row was out of bag, in tree order.
    fn oob_index(&self) -> Vec<Vec<u32>> {
        let mut by_row = vec![Vec::new(); self.n_train];
        for (t, rows) in self.oob_rows.iter().enumerate() {
            for &r in rows {
                by_row[r as usize].push(t as u32);
            }
        }
        by_row
    }

    fn oob_guard(&self) -> Result<()> {
        if !self.config.bootstrap {
            return Err(OmerfError::validation(
                "out-of-bag predictions need a bootstrapped forest",
            ));
        }
        Ok(())
    }

    /// Out-of-bag predictions. `x` must hold the training rows in training
    /// order; columns may be modified (permutation importance does).
    pub fn oob_predict(&self, x: &DMatrix<f64>) -> Result<OobPrediction> {
        self.oob_guard()?;
        self.check_cols(x)?;
        if x.nrows() != self.n_train {
            return Err(OmerfError::dim(format!(
                "OOB prediction needs the {} training rows, got {}",
                self.n_train,
                x.nrows()
            )));
        }
        let index = self.oob_index();
        let per_row: Vec<(f64, bool)> = par::map_range(self.n_train, |r| {
            let trees = &index[r];
            if trees.is_empty() {
                return (0.0, false);
            }
            let s: f64 = trees
                .iter()
                .map(|&t| self.trees[t as usize].predict_row(x, r))
                .sum();
            (s / trees.len() as f64, true)
        });
        let (values, covered) = per_row.into_iter().unzip();
        Ok(OobPrediction { values, covered })
    }
}
