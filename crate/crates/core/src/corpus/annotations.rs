use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};

pub const ANNOTATION_HEADER: &str = "doc_id,label,annotator,timestamp,round";
const SKIP_HEADER: &str = "doc_id,annotator,timestamp,round";

/// One human relevance judgment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    /// 1 relevant, 0 irrelevant.
    pub label: u8,
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
    pub round: u32,
}

impl AnnotationRecord {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// An annotator looked at a document and declined to judge it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEvent {
    pub doc_id: String,
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
    pub round: u32,
}

/// Append-only annotation log with a last-write-wins view per document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationStore {
    log: Vec<AnnotationRecord>,
    current: BTreeMap<String, usize>,
    skips: Vec<SkipEvent>,
}

impl AnnotationStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record, superseding any previous record for the same
    /// document. The label must be 0 or 1.
    pub fn record(&mut self, record: AnnotationRecord) -> Result<()> {
        if record.label > 1 {
            return Err(Error::InvalidArgument(format!(
                "label must be 0 or 1, got {}",
                record.label
            )));
        }
        self.current.insert(record.doc_id.clone(), self.log.len());
        self.log.push(record);
        Ok(())
    }

    pub fn record_skip(&mut self, event: SkipEvent) {
        self.skips.push(event);
    }

    /// Reads annotation rows from a CSV file and appends them in file order.
    /// Every row is validated before any is applied.
    pub fn import_csv(&mut self, path: impl AsRef<Path>, corpus: &Corpus) -> Result<usize> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let records = parse_annotation_csv(file, Some(corpus))?;
        let n = records.len();
        for r in records {
            self.record(r)?;
        }
        Ok(n)
    }

    pub fn current(&self, doc_id: &str) -> Option<&AnnotationRecord> {
        self.current.get(doc_id).map(|&i| &self.log[i])
    }

    pub fn is_annotated(&self, doc_id: &str) -> bool {
        self.current.contains_key(doc_id)
    }

    /// Current records ordered by document id.
    pub fn current_records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.current.values().map(move |&i| &self.log[i])
    }

    pub fn annotated_ids(&self) -> impl Iterator<Item = &str> {
        self.current.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    /// Every record ever written for a document, oldest first.
    pub fn history(&self, doc_id: &str) -> Vec<&AnnotationRecord> {
        self.log.iter().filter(|r| r.doc_id == doc_id).collect()
    }

    pub fn log(&self) -> &[AnnotationRecord] {
        &self.log
    }

    pub fn skips(&self) -> &[SkipEvent] {
        &self.skips
    }

    /// Loads a store from its on-disk log (and optional skip log). Missing
    /// files yield an empty store.
    pub fn load(log_path: impl AsRef<Path>, skip_path: Option<&Path>) -> Result<Self> {
        let log_path = log_path.as_ref();
        let mut store = AnnotationStore::new();
        if log_path.exists() {
            let file = File::open(log_path).map_err(|e| Error::io(log_path, e))?;
            for r in parse_annotation_csv(file, None)? {
                store.record(r)?;
            }
        }
        if let Some(skip_path) = skip_path {
            if skip_path.exists() {
                let file = File::open(skip_path).map_err(|e| Error::io(skip_path, e))?;
                let mut rdr = csv::Reader::from_reader(file);
                for row in rdr.deserialize::<SkipRow>() {
                    let row = row?;
                    store.skips.push(SkipEvent {
                        doc_id: row.doc_id,
                        annotator: row.annotator,
                        timestamp: parse_timestamp(&row.timestamp, 0)?,
                        round: row.round,
                    });
                }
            }
        }
        Ok(store)
    }
}

#[derive(Deserialize)]
struct SkipRow {
    doc_id: String,
    annotator: String,
    timestamp: String,
    round: u32,
}

fn parse_timestamp(s: &str, row: usize) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Row {
            row,
            message: format!("timestamp {s:?} is not RFC 3339: {e}"),
        })
}

pub(crate) fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Parses annotation CSV rows. Row numbers in errors count the header as row 1.
fn parse_annotation_csv(reader: impl Read, corpus: Option<&Corpus>) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    let headers = headers.trim_start_matches('\u{feff}');
    if headers != ANNOTATION_HEADER {
        return Err(Error::Header {
            expected: ANNOTATION_HEADER.into(),
            found: headers.into(),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 2;
        let row = row?;
        let field = |k: usize| row.get(k).unwrap_or("").trim();
        let doc_id = field(0).to_string();
        if doc_id.is_empty() {
            return Err(Error::Row {
                row: row_no,
                message: "missing doc_id".into(),
            });
        }
        if let Some(corpus) = corpus {
            if !corpus.contains(&doc_id) {
                return Err(Error::UnknownDocument(doc_id));
            }
        }
        let label = match field(1) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Row {
                    row: row_no,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        let round = field(4).parse::<u32>().map_err(|_| Error::Row {
            row: row_no,
            message: format!("round must be a non-negative integer, got {:?}", field(4)),
        })?;
        out.push(AnnotationRecord {
            doc_id,
            label,
            annotator: field(2).to_string(),
            timestamp: parse_timestamp(field(3), row_no)?,
            round,
        });
    }
    Ok(out)
}

fn open_append(path: &Path, header: &str) -> Result<csv::Writer<File>> {
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(header.split(','))?;
    }
    Ok(w)
}

/// Appends records to an annotation log file, writing the header first if
/// the file is new.
pub fn append_annotations(path: impl AsRef<Path>, records: &[AnnotationRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_append(path, ANNOTATION_HEADER)?;
    for r in records {
        w.write_record([
            r.doc_id.as_str(),
            if r.label == 1 { "1" } else { "0" },
            r.annotator.as_str(),
            &format_timestamp(&r.timestamp),
            &r.round.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn append_skips(path: impl AsRef<Path>, events: &[SkipEvent]) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_append(path, SKIP_HEADER)?;
    for e in events {
        w.write_record([
            e.doc_id.as_str(),
            e.annotator.as_str(),
            &format_timestamp(&e.timestamp),
            &e.round.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
