//! Command line front end and annotation service for the weaksift pipeline.

use std::collections::HashMap;
use std::path::Path;

use weaksift_core::eval::{evaluate, EvalSummary, Roc};
use weaksift_core::{Error, Result};

pub mod server;

/// Reads the named columns of a delimited file, locating them by header.
fn read_columns(path: &Path, delimiter: u8, key: &str, value: &str) -> Result<Vec<(String, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?
        .clone();
    let find = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Header {
            expected: name.into(),
            found: headers.iter().collect::<Vec<_>>().join(","),
        })
    };
    let (k, v) = (find(key)?, find(value)?);
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        let field = |j: usize| record.get(j).unwrap_or("").trim().to_string();
        out.push((field(k), field(v)));
    }
    Ok(out)
}

/// Scores from a predictions TSV (`doc_id` and `p` columns).
pub fn read_prediction_scores(path: &Path) -> Result<HashMap<String, f64>> {
    read_columns(path, b'\t', "doc_id", "p")?
        .into_iter()
        .enumerate()
        .map(|(i, (id, p))| {
            let p: f64 = p.parse().map_err(|_| Error::Row {
                row: i + 1,
                message: format!("bad probability {p:?}"),
            })?;
            Ok((id, p))
        })
        .collect()
}

/// Binary labels from a CSV with `doc_id` and `label` columns.
pub fn read_truth(path: &Path) -> Result<HashMap<String, u8>> {
    read_columns(path, b',', "doc_id", "label")?
        .into_iter()
        .enumerate()
        .map(|(i, (id, label))| match label.as_str() {
            "0" => Ok((id, 0)),
            "1" => Ok((id, 1)),
            _ => Err(Error::Row {
                row: i + 1,
                message: format!("label must be 0 or 1, got {label:?}"),
            }),
        })
        .collect()
}

/// Evaluates predictions against truth over the documents present in both.
pub fn evaluate_files(predictions: &Path, truth: &Path, threshold: f64) -> Result<(EvalSummary, Roc)> {
    let scores = read_prediction_scores(predictions)?;
    let truth = read_truth(truth)?;
    let mut ids: Vec<&String> = scores.keys().filter(|id| truth.contains_key(*id)).collect();
    ids.sort();
    let s: Vec<f64> = ids.iter().map(|id| scores[*id]).collect();
    let t: Vec<u8> = ids.iter().map(|id| truth[*id]).collect();
    evaluate(&s, &t, threshold)
}
