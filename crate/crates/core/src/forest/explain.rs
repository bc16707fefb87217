//! Permutation importance and partial dependence for fitted forests.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::RandomForest;
use crate::error::{OmerfError, Result};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    /// MSE of the unpermuted predictions (OOB when the forest is bagged).
    pub baseline_mse: f64,
    /// Mean MSE after permuting each column.
    pub permuted_mse: Vec<f64>,
    /// `permuted_mse - baseline_mse`; may be negative.
    pub importance: Vec<f64>,
    pub used_oob: bool,
}

fn masked_mse(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> f64 {
    let mut sse = 0.0;
    let mut n = 0usize;
    for (j, (p, t)) in pred.iter().zip(target).enumerate() {
        if mask.is_none_or(|m| m[j]) {
            sse += (p - t) * (p - t);
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sse / n as f64
    }
}

pub fn permutation_importance(
    forest: &RandomForest,
    x: &DMatrix<f64>,
    target: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<Importance> {
    if x.nrows() != target.len() {
        return Err(OmerfError::dim("x rows and target length differ"));
    }
    let repeats = repeats.max(1);
    let used_oob = forest.config.bootstrap;
    let predict = |m: &DMatrix<f64>| -> Result<(Vec<f64>, Option<Vec<bool>>)> {
        if used_oob {
            let oob = forest.oob_predict(m)?;
            Ok((oob.values, Some(oob.covered)))
        } else {
            Ok((forest.predict(m)?, None))
        }
    };
    let (base_pred, mask) = predict(x)?;
    let baseline_mse = masked_mse(&base_pred, target, mask.as_deref());

    let mut permuted_mse = Vec::with_capacity(x.ncols());
    let mut work = x.clone();
    for p in 0..x.ncols() {
        let mut rng = stream_rng(seed, p as u64);
        let mut column: Vec<f64> = x.column(p).iter().copied().collect();
        let mut acc = 0.0;
        for _ in 0..repeats {
            column.shuffle(&mut rng);
            work.column_mut(p).copy_from_slice(&column);
            let (pred, _) = predict(&work)?;
            acc += masked_mse(&pred, target, mask.as_deref());
        }
        work.column_mut(p).copy_from(&x.column(p));
        permuted_mse.push(acc / repeats as f64);
    }
    let importance = permuted_mse.iter().map(|m| m - baseline_mse).collect();
    Ok(Importance {
        baseline_mse,
        permuted_mse,
        importance,
        used_oob,
    })
}

/// Average prediction over all rows of `x` with column `feature` set to each
/// grid value.
pub fn partial_dependence(
    forest: &RandomForest,
    x: &DMatrix<f64>,
    feature: usize,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if feature >= x.ncols() {
        return Err(OmerfError::validation(format!(
            "feature index {feature} out of range (P = {})",
            x.ncols()
        )));
    }
    if grid.is_empty() {
        return Err(OmerfError::validation("partial dependence grid is empty"));
    }
    let mut work = x.clone();
    grid.iter()
        .map(|&v| {
            work.column_mut(feature).fill(v);
            let pred = forest.predict(&work)?;
            Ok((v, pred.iter().sum::<f64>() / pred.len().max(1) as f64))
        })
        .collect()
}

/// 1-based ranks, largest value first; ties keep the lower index first.
pub fn rank_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (rank, i) in idx.into_iter().enumerate() {
        ranks[i] = rank + 1;
    }
    ranks
}
