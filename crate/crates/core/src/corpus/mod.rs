//! Documents, human annotations and the evaluation/training partition.
//!
//! The corpus is immutable once loaded and can be shared freely across
//! threads. Annotations live in an append-only log ([`AnnotationStore`]) and
//! the partition into one evaluation set plus three training folds is grown
//! incrementally by [`assign_splits`].

mod annotations;
mod splits;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use annotations::{
    append_annotations, append_skips, AnnotationRecord, AnnotationStore, SkipEvent, ANNOTATION_HEADER,
};
pub use splits::{assign_splits, split_targets, Part, SplitAssignment};

/// Section name given to full text that arrives without section structure.
pub const BODY_SECTION: &str = "body";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub text: String,
}

/// An entity annotation attached to a document (PubTator-style).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    #[serde(rename = "type")]
    pub entity_type: String,
    pub id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub section: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: Option<String>,
    #[serde(default)]
    pub full_text: Option<String>,
    #[serde(default)]
    pub sections: Option<Vec<Section>>,
    #[serde(default)]
    pub mesh_terms: BTreeSet<String>,
    #[serde(default)]
    pub pub_types: BTreeSet<String>,
    #[serde(default)]
    pub entities: Vec<Entity>,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            title: title.into(),
            abstract_text: None,
            full_text: None,
            sections: None,
            mesh_terms: BTreeSet::new(),
            pub_types: BTreeSet::new(),
            entities: Vec::new(),
        }
    }

    pub fn with_abstract(mut self, text: impl Into<String>) -> Self {
        self.abstract_text = Some(text.into());
        self
    }

    pub fn with_full_text(mut self, text: impl Into<String>) -> Self {
        self.full_text = Some(text.into());
        self.normalize();
        self
    }

    pub fn has_full_text(&self) -> bool {
        self.full_text.is_some()
    }

    /// Establishes the full-text/sections invariant: full text without
    /// explicit sections gets a single `body` section.
    fn normalize(&mut self) {
        if let Some(text) = &self.full_text {
            if self.sections.as_ref().map_or(true, |s| s.is_empty()) {
                self.sections = Some(vec![Section {
                    name: BODY_SECTION.to_string(),
                    text: text.clone(),
                }]);
            }
        }
    }
}

/// An immutable, id-indexed collection of documents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        let mut normalized = Vec::with_capacity(docs.len());
        for mut doc in docs {
            if doc.id.is_empty() {
                return Err(Error::InvalidArgument("document id must be non-empty".into()));
            }
            if index.insert(doc.id.clone(), normalized.len()).is_some() {
                return Err(Error::DuplicateId(doc.id));
            }
            doc.normalize();
            normalized.push(doc);
        }
        Ok(Corpus {
            docs: normalized,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.docs[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.id.as_str())
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.docs.iter()
    }
}

/// Reads the canonical one-document-per-line JSON form.
///
/// Blank lines are ignored. A malformed line fails the whole ingestion with
/// an error naming the 1-based line number.
pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file))
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Corpus> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(parse_document_line(&line, line_no)?);
    }
    Corpus::from_documents(docs)
}

fn parse_document_line(line: &str, line_no: usize) -> Result<Document> {
    let err = |message: String| Error::Line {
        line: line_no,
        message,
    };
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| err("expected a JSON object".into()))?;
    match obj.get("id") {
        None | Some(serde_json::Value::Null) => return Err(err("missing id".into())),
        Some(serde_json::Value::String(s)) if s.is_empty() => return Err(err("empty id".into())),
        Some(serde_json::Value::String(_)) => {}
        Some(_) => return Err(err("id must be a string".into())),
    }
    if !matches!(obj.get("title"), Some(serde_json::Value::String(_))) {
        return Err(err("missing title".into()));
    }
    serde_json::from_value(value).map_err(|e| err(e.to_string()))
}

pub fn write_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for doc in corpus {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Converts a LitCovid export (tab separated, `pmid` then `title`) into
/// documents. Comment lines starting with `#` and a `pmid` header are skipped.
pub fn read_litcovid_tsv(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let pmid = fields.next().unwrap_or("").trim();
        if pmid.eq_ignore_ascii_case("pmid") {
            continue;
        }
        let title = fields.next().ok_or_else(|| Error::Line {
            line: line_no,
            message: "expected at least two tab-separated columns".into(),
        })?;
        if pmid.is_empty() {
            return Err(Error::Line {
                line: line_no,
                message: "missing id".into(),
            });
        }
        docs.push(Document::new(pmid, title.trim()));
    }
    Ok(docs)
}
