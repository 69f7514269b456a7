use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::{LabelValue, ABSTAIN};
use crate::error::{Error, Result};

pub const EXTERNAL_HEADER: &str = "doc_id,value";

/// Per-document labels produced outside this system (a query-trained
/// classifier, a topic portal). Unlisted documents abstain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalPredictions {
    values: HashMap<String, f64>,
}

impl ExternalPredictions {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file)
    }

    pub fn read(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
        if header.trim_start_matches('\u{feff}') != EXTERNAL_HEADER {
            return Err(Error::Header {
                expected: EXTERNAL_HEADER.into(),
                found: header,
            });
        }
        let mut values = HashMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec?;
            let doc_id = rec.get(0).unwrap_or("");
            let raw = rec.get(1).unwrap_or("");
            if doc_id.is_empty() {
                return Err(Error::Row {
                    row,
                    message: "missing doc_id".into(),
                });
            }
            let value = raw
                .parse::<f64>()
                .ok()
                .and_then(|v| LabelValue::new(v).ok())
                .ok_or_else(|| Error::Row {
                    row,
                    message: format!("value {raw:?} for {doc_id:?} is not in [0, 1]"),
                })?;
            values.insert(doc_id.to_string(), value.value());
        }
        Ok(ExternalPredictions { values })
    }

    pub fn from_map(values: HashMap<String, f64>) -> Result<Self> {
        for v in values.values() {
            LabelValue::new(*v)?;
        }
        Ok(ExternalPredictions { values })
    }

    /// Writes the file form, rows ordered by doc_id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut rows: Vec<(&String, &f64)> = self.values.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = format!("{EXTERNAL_HEADER}\n");
        for (id, v) in rows {
            out.push_str(&format!("{id},{v}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, doc_id: &str) -> LabelValue {
        LabelValue(self.values.get(doc_id).copied().unwrap_or(ABSTAIN))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
