//! Annotation queue operations behind the HTTP service. Every answer is
//! derived from the workspace files, so the CLI and the service can be used
//! side by side.

use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::active::{read_candidates, SelectionCandidate};
use crate::corpus::{append_skips, AnnotationRecord, Corpus, SkipEvent};
use crate::error::{Error, Result};
use crate::grammar::{title_abstract_mentions, Mention};
use crate::pipeline::Pipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: Option<String>,
    pub mentions: Vec<Mention>,
    pub p: Option<f64>,
    pub dist: Option<f64>,
    pub iqr: Option<f64>,
    /// Position in the current batch; absent for documents outside it.
    pub rank: Option<usize>,
    pub round: u32,
}

/// One label as submitted; the label is checked per item so that a bad
/// value rejects only its own item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub doc_id: String,
    pub label: Value,
    pub annotator: String,
    pub client_timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRequest {
    pub labels: Vec<LabelSubmission>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionAck {
    pub doc_id: String,
    pub status: AckStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalBrief {
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub round: u32,
    pub annotated_total: usize,
    pub annotated_this_round: usize,
    pub batch_remaining: usize,
    pub positive_rate: Option<f64>,
    pub last_eval: Option<EvalBrief>,
}

enum Judgment {
    Label(u8),
    Skip,
}

fn parse_label(v: &Value) -> std::result::Result<Judgment, String> {
    match v {
        Value::Number(n) if n.as_u64() == Some(0) => Ok(Judgment::Label(0)),
        Value::Number(n) if n.as_u64() == Some(1) => Ok(Judgment::Label(1)),
        Value::String(s) if s == "skip" => Ok(Judgment::Skip),
        other => Err(format!("label must be 0, 1 or \"skip\", got {other}")),
    }
}

pub struct AnnotationService {
    pipeline: Pipeline,
    corpus: Corpus,
    store_lock: Mutex<()>,
}

impl AnnotationService {
    pub fn new(pipeline: Pipeline) -> Result<Self> {
        let corpus = pipeline.workspace.load_corpus()?;
        Ok(AnnotationService {
            pipeline,
            corpus,
            store_lock: Mutex::new(()),
        })
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    fn item(&self, doc_id: &str, scored: Option<&SelectionCandidate>, round: u32) -> Option<QueueItem> {
        let doc = self.corpus.get(doc_id)?;
        Some(QueueItem {
            doc_id: doc.id.clone(),
            title: doc.title.clone(),
            abstract_text: doc.abstract_text.clone(),
            mentions: title_abstract_mentions(doc, self.pipeline.grammar()),
            p: scored.map(|c| c.p),
            dist: scored.map(|c| c.dist),
            iqr: scored.map(|c| c.iqr),
            rank: scored.and_then(|c| (c.rank > 0).then_some(c.rank)),
            round,
        })
    }

    /// The first `limit` unannotated batch items in rank order.
    pub fn queue(&self, limit: usize) -> Result<Vec<QueueItem>> {
        if limit == 0 {
            return Err(Error::InvalidArgument("limit must be at least 1".into()));
        }
        let ws = &self.pipeline.workspace;
        let round = ws.load_round()?.round;
        let batch = ws.load_batch(round)?;
        let annotations = {
            let _guard = self.store_lock.lock().unwrap_or_else(|e| e.into_inner());
            ws.load_annotations()?
        };
        Ok(batch
            .iter()
            .filter(|c| !annotations.is_annotated(&c.doc_id))
            .take(limit)
            .filter_map(|c| self.item(&c.doc_id, Some(c), round))
            .collect())
    }

    /// One document with its batch entry, or its plain prediction when it
    /// is not in the batch.
    pub fn document(&self, doc_id: &str) -> Result<QueueItem> {
        let ws = &self.pipeline.workspace;
        let round = ws.load_round()?.round;
        let batch = ws.load_batch(round).unwrap_or_default();
        let mut scored = batch.into_iter().find(|c| c.doc_id == doc_id);
        if scored.is_none() {
            let path = ws.predictions_path(round);
            if path.exists() {
                scored = read_candidates(path)?.into_iter().find(|c| c.doc_id == doc_id);
            }
        }
        self.item(doc_id, scored.as_ref(), round)
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))
    }

    /// Records each submission independently. Skips are logged without
    /// creating an annotation.
    pub fn submit(&self, submissions: &[LabelSubmission]) -> Result<Vec<SubmissionAck>> {
        let ws = &self.pipeline.workspace;
        let _guard = self.store_lock.lock().unwrap_or_else(|e| e.into_inner());
        if ws.is_advancing() {
            return Err(Error::Advancing);
        }
        let round = ws.load_round()?.round;
        let mut acks = Vec::with_capacity(submissions.len());
        for s in submissions {
            let result = self.submit_one(s, round);
            acks.push(match result {
                Ok(()) => SubmissionAck {
                    doc_id: s.doc_id.clone(),
                    status: AckStatus::Ok,
                    reason: None,
                },
                Err(reason) => SubmissionAck {
                    doc_id: s.doc_id.clone(),
                    status: AckStatus::Error,
                    reason: Some(reason),
                },
            });
        }
        Ok(acks)
    }

    fn submit_one(&self, s: &LabelSubmission, round: u32) -> std::result::Result<(), String> {
        if !self.corpus.contains(&s.doc_id) {
            return Err(Error::UnknownDocument(s.doc_id.clone()).to_string());
        }
        let judgment = parse_label(&s.label)?;
        let timestamp = DateTime::parse_from_rfc3339(&s.client_timestamp)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| format!("client_timestamp {:?} is not RFC 3339: {e}", s.client_timestamp))?;
        let ws = &self.pipeline.workspace;
        let written = match judgment {
            Judgment::Label(label) => self.pipeline.record_annotations(&[AnnotationRecord {
                doc_id: s.doc_id.clone(),
                label,
                annotator: s.annotator.clone(),
                timestamp,
                round,
            }]),
            Judgment::Skip => append_skips(
                ws.skips_path(),
                &[SkipEvent {
                    doc_id: s.doc_id.clone(),
                    annotator: s.annotator.clone(),
                    timestamp,
                    round,
                }],
            ),
        };
        written.map_err(|e| e.to_string())
    }

    pub fn status(&self) -> Result<StatusReport> {
        let ws = &self.pipeline.workspace;
        let state = ws.load_round()?;
        let annotations = {
            let _guard = self.store_lock.lock().unwrap_or_else(|e| e.into_inner());
            ws.load_annotations()?
        };
        let batch_remaining = match ws.load_batch(state.round) {
            Ok(batch) => batch.iter().filter(|c| !annotations.is_annotated(&c.doc_id)).count(),
            Err(Error::NoBatch(_)) => 0,
            Err(e) => return Err(e),
        };
        Ok(StatusReport {
            round: state.round,
            annotated_total: annotations.len(),
            annotated_this_round: annotations.current_records().filter(|r| r.round == state.round).count(),
            batch_remaining,
            positive_rate: state.positive_rate,
            last_eval: state.last_eval.map(|e| EvalBrief {
                auc: e.auc,
                sensitivity: e.sensitivity,
                specificity: e.specificity,
            }),
        })
    }
}
