//! Triplet accuracy estimation and relevance prediction.
//!
//! Each labeling function is assumed conditionally independent of the others
//! given the class. Under that assumption the expected agreement of two
//! functions factors into their individual accuracies, so any three
//! functions determine each other's accuracy in closed form.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lf::LabelMatrix;

pub const DEFAULT_WILSON_Z: f64 = 1.96;
pub const DEFAULT_ACCURACY_CLAMP: (f64, f64) = (0.05, 0.95);
const SIGMA_FLOOR: f64 = 1e-6;

/// Expected agreement of two independent probabilistic labels, on a
/// `[-1, 1]` scale: +1 for certain agreement, -1 for certain disagreement.
pub fn equal_prob(a: f64, b: f64) -> f64 {
    (2.0 * a - 1.0) * (2.0 * b - 1.0)
}

pub fn agree(col_i: &[f64], col_j: &[f64]) -> Result<f64> {
    if col_i.is_empty() || col_i.len() != col_j.len() {
        return Err(Error::InvalidArgument(format!(
            "agreement needs two non-empty columns of equal length, got {} and {}",
            col_i.len(),
            col_j.len()
        )));
    }
    let sum: f64 = col_i.iter().zip(col_j).map(|(&a, &b)| equal_prob(a, b)).sum();
    Ok(sum / col_i.len() as f64)
}

pub fn wilson_interval(p_hat: f64, n: usize, z: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InvalidArgument("wilson interval needs n >= 1".into()));
    }
    let n = n as f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p_hat + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt();
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

/// Whether an agreement over `n` instances is distinguishable from chance,
/// treating `(agree + 1) / 2` as a binomial success rate.
pub fn pair_admissible(agreement: f64, n: usize, z: f64) -> bool {
    match wilson_interval((agreement + 1.0) / 2.0, n, z) {
        Ok((lo, hi)) => !(lo <= 0.5 && 0.5 <= hi),
        Err(_) => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementStats {
    n_lfs: usize,
    pub n_instances: usize,
    /// Row-major `n_lfs × n_lfs`, diagonal fixed at 1.
    agreements: Vec<f64>,
    admissible: Vec<bool>,
}

impl AgreementStats {
    pub fn compute(matrix: &LabelMatrix, z: f64) -> Result<Self> {
        let n = matrix.n_docs();
        let m = matrix.n_lfs();
        if n == 0 {
            return Err(Error::InvalidArgument("label matrix has no documents".into()));
        }
        let columns: Vec<Vec<f64>> = (0..m).map(|c| matrix.column(c)).collect();
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
        let values: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| agree(&columns[i], &columns[j]))
            .collect::<Result<_>>()?;
        let mut agreements = vec![0.0; m * m];
        for i in 0..m {
            agreements[i * m + i] = 1.0;
        }
        for (&(i, j), &v) in pairs.iter().zip(&values) {
            agreements[i * m + j] = v;
            agreements[j * m + i] = v;
        }
        let mut stats = AgreementStats {
            n_lfs: m,
            n_instances: n,
            agreements,
            admissible: vec![false; m * m],
        };
        stats.filter_pairs(z);
        Ok(stats)
    }

    /// Recomputes the admissible pair set for critical value `z`.
    pub fn filter_pairs(&mut self, z: f64) {
        let m = self.n_lfs;
        for i in 0..m {
            for j in 0..m {
                self.admissible[i * m + j] = i != j && pair_admissible(self.agreements[i * m + j], self.n_instances, z);
            }
        }
    }

    pub fn n_lfs(&self) -> usize {
        self.n_lfs
    }

    pub fn agreement(&self, i: usize, j: usize) -> f64 {
        self.agreements[i * self.n_lfs + j]
    }

    pub fn is_admissible(&self, i: usize, j: usize) -> bool {
        self.admissible[i * self.n_lfs + j]
    }

    pub fn admissible_pairs(&self) -> Vec<(usize, usize)> {
        let m = self.n_lfs;
        (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_admissible(i, j))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub wilson_z: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            wilson_z: DEFAULT_WILSON_Z,
            clamp_lo: DEFAULT_ACCURACY_CLAMP.0,
            clamp_hi: DEFAULT_ACCURACY_CLAMP.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyVector {
    pub accuracies: Vec<f64>,
    /// Number of triplets that contributed to each estimate.
    pub support: Vec<usize>,
}

/// Triplet estimate `½·√(agree_ij·agree_ik / agree_jk) + ½` averaged over
/// every usable `(j, k)`. A triplet is usable when all three of its pairs
/// are admissible and the square-root argument is positive.
pub fn accuracies_from_stats(stats: &AgreementStats, params: &ModelParams) -> Result<AccuracyVector> {
    let m = stats.n_lfs();
    if m < 3 {
        return Err(Error::TooFewLabelingFunctions(m));
    }
    let (accuracies, support) = (0..m)
        .map(|i| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for j in 0..m {
                if j == i || !stats.is_admissible(i, j) {
                    continue;
                }
                for k in j + 1..m {
                    if k == i || !stats.is_admissible(i, k) || !stats.is_admissible(j, k) {
                        continue;
                    }
                    let a_jk = stats.agreement(j, k);
                    if a_jk == 0.0 {
                        continue;
                    }
                    let arg = stats.agreement(i, j) * stats.agreement(i, k) / a_jk;
                    if arg > 0.0 && arg.is_finite() {
                        sum += 0.5 * arg.sqrt() + 0.5;
                        count += 1;
                    }
                }
            }
            let a = if count == 0 { 0.5 } else { sum / count as f64 };
            (a.clamp(params.clamp_lo, params.clamp_hi), count)
        })
        .unzip();
    Ok(AccuracyVector { accuracies, support })
}

pub fn estimate_accuracies(matrix: &LabelMatrix, params: &ModelParams) -> Result<AccuracyVector> {
    if matrix.n_lfs() < 3 {
        return Err(Error::TooFewLabelingFunctions(matrix.n_lfs()));
    }
    accuracies_from_stats(&AgreementStats::compute(matrix, params.wilson_z)?, params)
}

/// Log-odds sum `Σ (2lᵢ − 1)·ln(aᵢ / (1 − aᵢ))`.
pub fn raw_score(row: &[f64], accuracies: &[f64]) -> f64 {
    debug_assert_eq!(row.len(), accuracies.len());
    row.iter()
        .zip(accuracies)
        .map(|(&l, &a)| (2.0 * l - 1.0) * (a / (1.0 - a)).ln())
        .sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn predict(row: &[f64], accuracies: &[f64]) -> f64 {
    sigmoid(raw_score(row, accuracies))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub enabled: bool,
    pub mu_pos: f64,
    pub sigma_pos: f64,
    pub mu_neg: f64,
    pub sigma_neg: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl CalibrationParams {
    pub fn disabled() -> Self {
        CalibrationParams {
            enabled: false,
            mu_pos: 0.0,
            sigma_pos: 1.0,
            mu_neg: 0.0,
            sigma_neg: 1.0,
            n_pos: 0,
            n_neg: 0,
        }
    }
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt().max(SIGMA_FLOOR))
}

/// Class-conditional moments of raw scores on annotated documents, with
/// sample standard deviations floored at 1e-6. Needs two documents of each
/// class and a higher positive mean; otherwise calibration stays disabled.
pub fn fit_calibration(scores: &[f64], labels: &[u8]) -> CalibrationParams {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|p| *p.1 == 1).map(|p| *p.0).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|p| *p.1 == 0).map(|p| *p.0).collect();
    if pos.len() < 2 || neg.len() < 2 {
        return CalibrationParams {
            n_pos: pos.len(),
            n_neg: neg.len(),
            ..CalibrationParams::disabled()
        };
    }
    let (mu_pos, sigma_pos) = mean_and_sd(&pos);
    let (mu_neg, sigma_neg) = mean_and_sd(&neg);
    CalibrationParams {
        // Scores that do not rank positives above negatives on average
        // would invert the ranking; fall back to the sigmoid instead.
        enabled: mu_pos > mu_neg,
        mu_pos,
        sigma_pos,
        mu_neg,
        sigma_neg,
        n_pos: pos.len(),
        n_neg: neg.len(),
    }
}

/// Spread shared by both classes: the square root of the pooled sample
/// variance.
pub fn pooled_sigma(params: &CalibrationParams) -> f64 {
    let (np, nn) = (params.n_pos as f64, params.n_neg as f64);
    let var = ((np - 1.0) * params.sigma_pos.powi(2) + (nn - 1.0) * params.sigma_neg.powi(2)) / (np + nn - 2.0);
    var.sqrt().max(SIGMA_FLOOR)
}

/// Posterior of the positive class under two Gaussians with equal weights
/// and a shared spread, or the plain sigmoid when calibration is disabled.
/// The log density ratio is then linear in `x`, so calibration never
/// reorders documents.
pub fn calibrate(x: f64, params: &CalibrationParams) -> f64 {
    if !params.enabled {
        return sigmoid(x);
    }
    let s2 = pooled_sigma(params).powi(2);
    let log_ratio = ((x - params.mu_neg).powi(2) - (x - params.mu_pos).powi(2)) / (2.0 * s2);
    sigmoid(log_ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfAccuracy {
    pub lf_id: String,
    pub accuracy: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub x: f64,
    pub p: f64,
}

/// Everything needed to reproduce predictions for a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub round: u32,
    pub n_instances: usize,
    pub wilson_z: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub lfs: Vec<LfAccuracy>,
    pub calibration: CalibrationParams,
}

impl ModelState {
    /// Estimates accuracies from `matrix` and fits calibration on the rows in
    /// `labeled` (row index, label).
    pub fn fit(matrix: &LabelMatrix, params: &ModelParams, labeled: &[(usize, u8)], round: u32) -> Result<Self> {
        let acc = estimate_accuracies(matrix, params)?;
        let scores: Vec<f64> = labeled
            .iter()
            .map(|&(r, _)| raw_score(matrix.row(r), &acc.accuracies))
            .collect();
        let labels: Vec<u8> = labeled.iter().map(|l| l.1).collect();
        Ok(ModelState {
            round,
            n_instances: matrix.n_docs(),
            wilson_z: params.wilson_z,
            clamp_lo: params.clamp_lo,
            clamp_hi: params.clamp_hi,
            lfs: matrix
                .lf_ids()
                .iter()
                .zip(acc.accuracies.iter().zip(&acc.support))
                .map(|(id, (&accuracy, &support))| LfAccuracy {
                    lf_id: id.clone(),
                    accuracy,
                    support,
                })
                .collect(),
            calibration: fit_calibration(&scores, &labels),
        })
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.lfs.iter().map(|l| l.accuracy).collect()
    }

    pub fn lf_ids(&self) -> Vec<&str> {
        self.lfs.iter().map(|l| l.lf_id.as_str()).collect()
    }

    fn check_columns(&self, matrix: &LabelMatrix) -> Result<()> {
        if matrix.lf_ids().iter().map(String::as_str).ne(self.lf_ids()) {
            return Err(Error::InvalidArgument(
                "label matrix columns do not match the model's labeling functions".into(),
            ));
        }
        Ok(())
    }

    pub fn predict_row(&self, row: &[f64], accuracies: &[f64]) -> Prediction {
        let x = raw_score(row, accuracies);
        Prediction {
            x,
            p: calibrate(x, &self.calibration),
        }
    }

    pub fn predict(&self, matrix: &LabelMatrix) -> Result<Vec<Prediction>> {
        self.check_columns(matrix)?;
        let acc = self.accuracies();
        Ok((0..matrix.n_docs())
            .into_par_iter()
            .map(|i| self.predict_row(matrix.row(i), &acc))
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
