//! Uncertainty sampling: distance to the decision threshold combined with
//! prediction instability under random masking of labeling functions.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_model::{calibrate, fit_calibration, raw_score};
use crate::lf::{LabelMatrix, ABSTAIN};

pub const DEFAULT_THRESHOLD: f64 = 0.7;
pub const DEFAULT_MASK_RUNS: usize = 32;
pub const DEFAULT_MASK_FRACTION: f64 = 0.5;
pub const DEFAULT_BATCH_SIZE: usize = 100;

pub const PREDICTION_HEADER: &str = "doc_id\tp\tx\tdist\tiqr\trank\tround";

pub fn distance_to_threshold(p: f64, t: f64) -> f64 {
    (p - t).abs()
}

/// Quantile of sorted data by linear interpolation between closest ranks
/// (the "inclusive" definition: position `q·(n−1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-document inter-quartile range of predictions across `runs` random
/// maskings. Each run keeps `⌈(1 − fraction)·m⌉` columns and treats the rest
/// as abstaining. When `labeled` rows are given, each run refits the
/// calibration on them from its own masked scores; otherwise predictions
/// are the plain sigmoid of the masked score.
pub fn masked_iqr(
    matrix: &LabelMatrix,
    accuracies: &[f64],
    labeled: &[(usize, u8)],
    runs: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let m = matrix.n_lfs();
    if runs < 2 {
        return Err(Error::InvalidArgument(format!("mask runs must be at least 2, got {runs}")));
    }
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "masking needs at least two labeling functions, have {m}"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("mask fraction must be in (0, 1), got {fraction}")));
    }
    if accuracies.len() != m {
        return Err(Error::InvalidArgument("accuracy vector length does not match matrix".into()));
    }
    let keep = (((1.0 - fraction) * m as f64).ceil() as usize).clamp(1, m);
    let n = matrix.n_docs();

    let per_run: Vec<Vec<f64>> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(run as u64);
            let mut kept = vec![false; m];
            for c in sample(&mut rng, m, keep) {
                kept[c] = true;
            }
            let mut masked_row = vec![ABSTAIN; m];
            let scores: Vec<f64> = (0..n)
                .map(|i| {
                    for (c, v) in matrix.row(i).iter().enumerate() {
                        masked_row[c] = if kept[c] { *v } else { ABSTAIN };
                    }
                    raw_score(&masked_row, accuracies)
                })
                .collect();
            let lab_scores: Vec<f64> = labeled.iter().map(|&(r, _)| scores[r]).collect();
            let lab: Vec<u8> = labeled.iter().map(|l| l.1).collect();
            let cal = fit_calibration(&lab_scores, &lab);
            scores.into_iter().map(|x| calibrate(x, &cal)).collect()
        })
        .collect();

    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut values: Vec<f64> = per_run.iter().map(|r| r[i]).collect();
            values.sort_by(f64::total_cmp);
            quantile_sorted(&values, 0.75) - quantile_sorted(&values, 0.25)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCandidate {
    pub doc_id: String,
    pub p: f64,
    pub x: f64,
    pub dist: f64,
    pub iqr: f64,
    /// 0 until the candidate is placed in a batch.
    pub rank: usize,
}

/// 1-based ranks of `values` in the given order; tied values share the
/// average of the ranks they span.
pub fn average_ranks(values: &[f64], descending: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        let o = values[*a].total_cmp(&values[*b]);
        if descending {
            o.reverse()
        } else {
            o
        }
    };
    order.sort_by(cmp);
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Orders unannotated candidates by `rank(dist ascending) + rank(iqr
/// descending)`, breaking ties by doc_id, and keeps the first `batch_size`.
pub fn select_batch(
    candidates: &[SelectionCandidate],
    batch_size: usize,
    annotated: &BTreeSet<String>,
) -> Vec<SelectionCandidate> {
    let pool: Vec<&SelectionCandidate> = candidates.iter().filter(|c| !annotated.contains(&c.doc_id)).collect();
    let dist: Vec<f64> = pool.iter().map(|c| c.dist).collect();
    let iqr: Vec<f64> = pool.iter().map(|c| c.iqr).collect();
    let rd = average_ranks(&dist, false);
    let ri = average_ranks(&iqr, true);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        (rd[a] + ri[a])
            .partial_cmp(&(rd[b] + ri[b]))
            .unwrap_or(Ordering::Equal)
            .then_with(|| pool[a].doc_id.cmp(&pool[b].doc_id))
    });
    order
        .into_iter()
        .take(batch_size)
        .enumerate()
        .map(|(i, idx)| SelectionCandidate {
            rank: i + 1,
            ..pool[idx].clone()
        })
        .collect()
}

/// Tab-separated candidates with the prediction header. Unranked rows have
/// an empty rank field.
pub fn candidates_to_tsv(candidates: &[SelectionCandidate], round: u32) -> String {
    let mut out = String::from(PREDICTION_HEADER);
    out.push('\n');
    for c in candidates {
        let rank = if c.rank == 0 { String::new() } else { c.rank.to_string() };
        writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}\t{}", c.doc_id, c.p, c.x, c.dist, c.iqr, rank, round).unwrap();
    }
    out
}

pub fn candidates_from_tsv(text: &str) -> Result<(Vec<SelectionCandidate>, Option<u32>)> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != PREDICTION_HEADER {
        return Err(Error::Header {
            expected: PREDICTION_HEADER.replace('\t', ","),
            found: header.replace('\t', ","),
        });
    }
    let mut out = Vec::new();
    let mut round = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let bad = |message: String| Error::Line { line: line_no, message };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let rank = if f[5].is_empty() {
            0
        } else {
            f[5].parse().map_err(|e| bad(format!("rank {:?}: {e}", f[5])))?
        };
        round = Some(f[6].parse().map_err(|e| bad(format!("round {:?}: {e}", f[6])))?);
        out.push(SelectionCandidate {
            doc_id: f[0].to_string(),
            p: num(f[1])?,
            x: num(f[2])?,
            dist: num(f[3])?,
            iqr: num(f[4])?,
            rank,
        });
    }
    Ok((out, round))
}

pub fn write_candidates(path: impl AsRef<Path>, candidates: &[SelectionCandidate], round: u32) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, candidates_to_tsv(candidates, round)).map_err(|e| Error::io(path, e))
}

pub fn read_candidates(path: impl AsRef<Path>) -> Result<Vec<SelectionCandidate>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(candidates_from_tsv(&text)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: &str, dist: f64, iqr: f64) -> SelectionCandidate {
        SelectionCandidate {
            doc_id: id.into(),
            p: 0.0,
            x: 0.0,
            dist,
            iqr,
            rank: 0,
        }
    }

    #[test]
    fn distances() {
        assert_eq!(distance_to_threshold(0.7, 0.7), 0.0);
        assert!((distance_to_threshold(1.0, 0.7) - 0.3).abs() < 1e-15);
        assert!((distance_to_threshold(0.2, 0.7) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quantiles_match_inclusive_definition() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&v, 0.75), 3.25);
        assert_eq!(quantile_sorted(&[5.0], 0.25), 5.0);
    }

    #[test]
    fn three_way_tie_resolved_by_id() {
        let batch = select_batch(
            &[cand("B", 0.2, 0.5), cand("C", 0.1, 0.3), cand("A", 0.0, 0.1)],
            4,
            &BTreeSet::new(),
        );
        let ids: Vec<_> = batch.iter().map(|c| c.doc_id.as_str()).collect();
        assert_eq!(ids, ["A", "B", "C"]);
        assert_eq!(batch.iter().map(|c| c.rank).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn dominant_candidate_ranks_first() {
        let batch = select_batch(
            &[cand("x", 0.3, 0.1), cand("y", 0.01, 0.9), cand("z", 0.2, 0.2)],
            1,
            &BTreeSet::new(),
        );
        assert_eq!(batch[0].doc_id, "y");
    }

    #[test]
    fn annotated_excluded() {
        let annotated = BTreeSet::from(["y".to_string()]);
        let batch = select_batch(&[cand("x", 0.3, 0.1), cand("y", 0.01, 0.9)], 5, &annotated);
        assert_eq!(batch.len(), 1);
        assert_eq!(batch[0].doc_id, "x");
        assert!(select_batch(&[], 5, &annotated).is_empty());
    }

    #[test]
    fn average_ranks_on_ties() {
        assert_eq!(average_ranks(&[0.1, 0.1, 0.3], false), vec![1.5, 1.5, 3.0]);
        assert_eq!(average_ranks(&[0.1, 0.1, 0.3], true), vec![2.5, 2.5, 1.0]);
    }

    #[test]
    fn identical_columns_have_zero_iqr() {
        let col = vec![1.0, 0.0, 0.5, 1.0];
        let m = LabelMatrix::from_columns(
            (0..4).map(|i| i.to_string()).collect(),
            vec![("a".into(), col.clone()), ("b".into(), col.clone()), ("c".into(), col)],
        )
        .unwrap();
        let iqr = masked_iqr(&m, &[0.8, 0.8, 0.8], &[], 16, 0.5, 3).unwrap();
        assert!(iqr.iter().all(|&v| v.abs() < 1e-15), "{iqr:?}");
    }

    #[test]
    fn run_count_validated() {
        let m = LabelMatrix::from_columns(vec!["d".into()], vec![("a".into(), vec![1.0]), ("b".into(), vec![0.0])])
            .unwrap();
        assert!(masked_iqr(&m, &[0.9, 0.9], &[], 1, 0.5, 0).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let mut c = cand("d1", 0.25, 0.125);
        c.p = 1.0 / 3.0;
        c.x = -0.6931471805599453;
        let unranked = cand("d2", 0.5, 0.0);
        c.rank = 4;
        let text = candidates_to_tsv(&[c.clone(), unranked.clone()], 2);
        assert!(text.starts_with("doc_id\tp\tx\tdist\tiqr\trank\tround\n"));
        let (back, round) = candidates_from_tsv(&text).unwrap();
        assert_eq!(back, vec![c, unranked]);
        assert_eq!(round, Some(2));
    }
}
