//! Ordinal classification metrics and across-replication aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{OmerfError, Result};

fn check_pair(truth: &[u32], pred: &[u32]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(OmerfError::dim(format!(
            "truth has {} labels, prediction has {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(OmerfError::validation("no labels to evaluate"));
    }
    Ok(())
}

/// Rows are true categories, columns predicted ones, both 1..=C.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[u32], pred: &[u32], n_categories: u32) -> Result<Self> {
        check_pair(truth, pred)?;
        let c = n_categories as usize;
        let mut counts = vec![vec![0u64; c]; c];
        for (&t, &p) in truth.iter().zip(pred) {
            if t == 0 || p == 0 || t > n_categories || p > n_categories {
                return Err(OmerfError::validation(format!(
                    "label outside 1..{n_categories}: truth {t}, prediction {p}"
                )));
            }
            counts[t as usize - 1][p as usize - 1] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.counts.len()).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.counts.len())
            .map(|k| self.counts.iter().map(|r| r[k]).sum())
            .collect()
    }

    /// Per true class, the share of all rows that are misclassified.
    pub fn class_error_fractions(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(k, r)| (r.iter().sum::<u64>() - r[k]) as f64 / n)
            .collect()
    }
}

pub fn accuracy(truth: &[u32], pred: &[u32]) -> Result<f64> {
    check_pair(truth, pred)?;
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mean squared difference of the category codes.
pub fn mse_ordinal(truth: &[u32], pred: &[u32]) -> Result<f64> {
    check_pair(truth, pred)?;
    let sse: f64 = truth
        .iter()
        .zip(pred)
        .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
        .sum();
    Ok(sse / truth.len() as f64)
}

fn choose2(n: u64) -> i128 {
    let n = i128::from(n);
    n * (n - 1) / 2
}

/// Hubert-Arabie adjusted Rand index, evaluated as an exact integer ratio.
/// Two partitions that are both all-singletons or both one block give 1.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(OmerfError::dim("labelings have different lengths"));
    }
    if a.len() < 2 {
        return Err(OmerfError::validation("adjusted Rand index needs at least 2 items"));
    }
    let mut table: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut rows: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cols: BTreeMap<u32, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: i128 = table.values().map(|n| choose2(*n)).sum();
    let sa: i128 = rows.values().map(|n| choose2(*n)).sum();
    let sb: i128 = cols.values().map(|n| choose2(*n)).sum();
    let pairs = choose2(a.len() as u64);
    // (index - sa sb / pairs) / ((sa + sb) / 2 - sa sb / pairs), times 2 pairs
    let num = 2 * (pairs * index - sa * sb);
    let den = pairs * (sa + sb) - 2 * sa * sb;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Cohen's kappa and whether the chance agreement was 1 (then kappa is 0
/// by convention).
pub fn cohens_kappa(truth: &[u32], pred: &[u32]) -> Result<(f64, bool)> {
    check_pair(truth, pred)?;
    let mut rows: BTreeMap<u32, i128> = BTreeMap::new();
    let mut cols: BTreeMap<u32, i128> = BTreeMap::new();
    let mut agree: i128 = 0;
    for (&t, &p) in truth.iter().zip(pred) {
        *rows.entry(t).or_default() += 1;
        *cols.entry(p).or_default() += 1;
        agree += i128::from(t == p);
    }
    let n = truth.len() as i128;
    let chance: i128 = rows.iter().map(|(k, r)| r * cols.get(k).copied().unwrap_or(0)).sum();
    // (p_o - p_e) / (1 - p_e) with p_o = agree / n, p_e = chance / n^2
    let den = n * n - chance;
    if den == 0 {
        return Ok((0.0, true));
    }
    Ok(((n * agree - chance) as f64 / den as f64, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub dataset: String,
    pub n: usize,
    pub accuracy: f64,
    pub mse: f64,
    pub ari: f64,
    pub kappa: f64,
    pub kappa_degenerate: bool,
    /// Externally computed indices attached by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

pub const METRIC_NAMES: [&str; 4] = ["accuracy", "mse", "ari", "kappa"];

impl MetricsReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "accuracy" => Some(self.accuracy),
            "mse" => Some(self.mse),
            "ari" => Some(self.ari),
            "kappa" => Some(self.kappa),
            other => self.extra.get(other).copied(),
        }
    }

    pub fn with_extra(mut self, name: &str, value: f64) -> Self {
        self.extra.insert(name.to_string(), value);
        self
    }
}

pub fn evaluate(truth: &[u32], pred: &[u32], model: &str, dataset: &str) -> Result<MetricsReport> {
    let (kappa, kappa_degenerate) = cohens_kappa(truth, pred)?;
    Ok(MetricsReport {
        model: model.to_string(),
        dataset: dataset.to_string(),
        n: truth.len(),
        accuracy: accuracy(truth, pred)?,
        mse: mse_ordinal(truth, pred)?,
        ari: if truth.len() >= 2 { adjusted_rand_index(truth, pred)? } else { f64::NAN },
        kappa,
        kappa_degenerate,
        extra: BTreeMap::new(),
    })
}

/// Pearson correlation; NaN when either side is constant or lengths differ.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() || a.len() < 2 {
        return f64::NAN;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample variance (n - 1 denominator); 0 for a single value.
    pub variance: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { mean: f64::NAN, variance: f64::NAN, n };
    }
    if values.iter().all(|v| *v == values[0]) {
        // the summed mean can be off by an ulp
        return Summary { mean: values[0], variance: 0.0, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let variance = if n == 1 {
        0.0
    } else {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    };
    Summary { mean, variance, n }
}

/// Mean and variance of every metric present in all reports, in
/// `METRIC_NAMES` order followed by extra metrics by name.
pub fn aggregate(reports: &[MetricsReport]) -> Vec<(String, Summary)> {
    let mut names: Vec<String> = METRIC_NAMES.iter().map(|s| s.to_string()).collect();
    if let Some(first) = reports.first() {
        names.extend(
            first
                .extra
                .keys()
                .filter(|k| reports.iter().all(|r| r.extra.contains_key(*k)))
                .cloned(),
        );
    }
    names
        .into_iter()
        .map(|m| {
            let v: Vec<f64> = reports.iter().filter_map(|r| r.get(&m)).collect();
            let s = summarize(&v);
            (m, s)
        })
        .collect()
}
