use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{document_mentions, GrammarRuleSet, Mention};
use crate::corpus::Corpus;

/// How a document refers to the concept, if at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamingStatus {
    /// Uses the name "long covid" at least once.
    NamesLongCovid,
    /// Mentions the concept only through some other term.
    AlternativeTerm,
    NoIdentifiableTerm,
}

impl NamingStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            NamingStatus::NamesLongCovid => "long_covid",
            NamingStatus::AlternativeTerm => "alternative_term",
            NamingStatus::NoIdentifiableTerm => "no_identifiable_term",
        }
    }

    pub fn from_mentions(mentions: &[Mention]) -> Self {
        if mentions.is_empty() {
            NamingStatus::NoIdentifiableTerm
        } else if mentions.iter().any(|m| names_long_covid(&m.normalized)) {
            NamingStatus::NamesLongCovid
        } else {
            NamingStatus::AlternativeTerm
        }
    }
}

/// "long covid" itself or the same name with a trailing qualifier such as
/// "long covid 19".
fn names_long_covid(normalized: &str) -> bool {
    normalized == "long covid" || normalized.starts_with("long covid ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentNaming {
    pub doc_id: String,
    pub status: NamingStatus,
    pub mentions: usize,
}

/// Rank/frequency pair on log scales, for checking the long-tail shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfPoint {
    pub rank: usize,
    pub count: usize,
    pub log10_rank: f64,
    pub log10_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    /// Normalized phrase counts, descending by count then ascending by phrase.
    pub terms: Vec<(String, usize)>,
    pub documents: Vec<DocumentNaming>,
    pub zipf: Vec<ZipfPoint>,
    pub total_mentions: usize,
}

impl TermReport {
    pub fn unique_phrases(&self) -> usize {
        self.terms.len()
    }

    pub fn status_counts(&self) -> [(NamingStatus, usize); 3] {
        let count = |s| self.documents.iter().filter(|d| d.status == s).count();
        [
            (NamingStatus::NamesLongCovid, count(NamingStatus::NamesLongCovid)),
            (NamingStatus::AlternativeTerm, count(NamingStatus::AlternativeTerm)),
            (
                NamingStatus::NoIdentifiableTerm,
                count(NamingStatus::NoIdentifiableTerm),
            ),
        ]
    }
}

pub fn term_frequency_report(corpus: &Corpus, rules: &GrammarRuleSet) -> TermReport {
    let per_doc: Vec<Vec<Mention>> = corpus
        .documents()
        .par_iter()
        .map(|doc| document_mentions(doc, rules))
        .collect();

    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut documents = Vec::with_capacity(per_doc.len());
    for (doc, mentions) in corpus.iter().zip(&per_doc) {
        for m in mentions {
            *counts.entry(m.normalized.as_str()).or_default() += 1;
        }
        documents.push(DocumentNaming {
            doc_id: doc.id.clone(),
            status: NamingStatus::from_mentions(mentions),
            mentions: mentions.len(),
        });
    }

    let mut terms: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let zipf = terms
        .iter()
        .enumerate()
        .map(|(i, (_, count))| ZipfPoint {
            rank: i + 1,
            count: *count,
            log10_rank: ((i + 1) as f64).log10(),
            log10_count: (*count as f64).log10(),
        })
        .collect();
    let total_mentions = terms.iter().map(|t| t.1).sum();
    TermReport {
        terms,
        documents,
        zipf,
        total_mentions,
    }
}
