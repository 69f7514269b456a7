//! Synthetic data with planted ground truth, for simulation and testing.

use std::collections::{BTreeMap, HashMap};

use chrono::{TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::active::SelectionCandidate;
use crate::corpus::{AnnotationRecord, Corpus, Document, Entity};
use crate::error::Result;
use crate::lf::{ExternalPredictions, LabelMatrix};

/// Names of the condition used in the literature, one per entry.
pub const SEED_TERMS: [&str; 29] = [
    "post-acute COVID-19 syndrome",
    "chronic COVID syndrome",
    "long COVID",
    "long haul COVID",
    "long hauler COVID",
    "long-COVID",
    "long-haul COVID",
    "post-acute COVID syndrome",
    "post-acute COVID19 syndrome",
    "post-acute sequelae of SARS-CoV-2 infection",
    "Post COVID-19 condition",
    "Post-acute sequela of COVID-19",
    "long COVID-19",
    "COVID-19 sequelae",
    "Long COVID",
    "SARS-CoV-2 sequelae",
    "Sequelae of COVID-19",
    "Sequelae of SARS-CoV-2",
    "Post-COVID Syndrome",
    "Post-COVID-19 syndrome",
    "Post-COVID syndrome",
    "Post-Acute Sequelae of SARS-CoV-2 infection",
    "Long-haul COVID",
    "Chronic COVID Syndrome",
    "Post-Acute Sequelae of Severe acute respiratory syndrome coronavirus 2",
    "Post-Coronavirus Disease syndrome",
    "Post-Coronavirus Disease-2019 syndrome",
    "Long-haul Coronavirus Disease",
    "Chronic Coronavirus Disease Syndrome",
];

/// Binary labeling functions that copy a planted label and flip it with
/// probability `1 − accuracy`, independently per function and document.
pub fn planted_binary_matrix(n: usize, accuracies: &[f64], prior: f64, seed: u64) -> (LabelMatrix, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = accuracies.len();
    let mut truth = Vec::with_capacity(n);
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(n); m];
    for _ in 0..n {
        let y = rng.gen_bool(prior);
        truth.push(u8::from(y));
        for (col, &a) in columns.iter_mut().zip(accuracies) {
            let correct = rng.gen_bool(a);
            col.push(if correct == y { 1.0 } else { 0.0 });
        }
    }
    let doc_ids = (0..n).map(|i| format!("s{i}")).collect();
    let cols = columns
        .into_iter()
        .enumerate()
        .map(|(j, c)| (format!("lf{j}"), c))
        .collect();
    (LabelMatrix::from_columns(doc_ids, cols).expect("planted matrix is well formed"), truth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusParams {
    pub n: usize,
    pub prior: f64,
    pub full_text_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            n: 10_000,
            prior: 0.1,
            full_text_fraction: 0.4,
            seed: 0,
        }
    }
}

/// A generated corpus, its ground truth and two external prediction sets:
/// a probabilistic query-trained classifier covering every document, and a
/// high-specificity binary topic tag covering part of the corpus.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub truth: BTreeMap<String, u8>,
    pub external: Vec<(String, ExternalPredictions)>,
}

const SEQUELAE_ENTITIES: [&str; 10] = [
    "fatigue",
    "dyspnea",
    "cognitive_impairment",
    "myalgia",
    "anosmia",
    "palpitations",
    "post_exertional_malaise",
    "insomnia",
    "chest_pain",
    "depression",
];

const GENERAL_ENTITIES: [&str; 30] = [
    "sars_cov_2", "pneumonia", "ards", "fever", "cough", "hypertension", "diabetes", "obesity", "thrombosis",
    "sepsis", "remdesivir", "dexamethasone", "heparin", "tocilizumab", "interferon", "ace2", "spike", "igg",
    "il_6", "d_dimer", "mrna_vaccine", "influenza", "hiv", "asthma", "stroke", "kidney_injury", "anxiety",
    "headache", "diarrhea", "myocarditis",
];

const SEQUELAE_MESH: [&str; 5] = [
    "Post-Acute COVID-19 Syndrome",
    "Fatigue Syndrome, Chronic",
    "Dyspnea",
    "Cognitive Dysfunction",
    "Convalescence",
];

const GENERAL_MESH: [&str; 20] = [
    "COVID-19", "SARS-CoV-2", "Humans", "Pandemics", "Vaccination", "Hospitalization", "Intensive Care Units",
    "Risk Factors", "Mortality", "Antiviral Agents", "Pneumonia, Viral", "Masks", "Quarantine", "Adult",
    "Aged", "Child", "Female", "Male", "Retrospective Studies", "Cohort Studies",
];

const TOPICS: [&str; 12] = [
    "vaccine uptake among health workers",
    "transmission in households",
    "viral load kinetics",
    "intensive care outcomes",
    "antibody responses after infection",
    "mental health during lockdown",
    "school closures",
    "diagnostic accuracy of antigen tests",
    "thrombotic complications",
    "treatment with corticosteroids",
    "genomic surveillance of variants",
    "telemedicine adoption",
];

const RECOVERY_PHRASES: [&str; 6] = [
    "persistent symptoms months after recovery",
    "ongoing fatigue and breathlessness after discharge",
    "return to work following acute illness",
    "rehabilitation needs of survivors",
    "symptom burden at twelve months",
    "quality of life after hospitalization",
];

fn pick<'a>(rng: &mut impl Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().expect("non-empty list")
}

fn entity(id: &str, section: &str) -> Entity {
    Entity {
        entity_type: "Disease".into(),
        id: id.into(),
        text: id.replace('_', " "),
        section: section.into(),
    }
}

fn draw_entities(rng: &mut impl Rng, relevant: bool, section: &str, out: &mut Vec<Entity>) {
    let k = rng.gen_range(2..=6);
    let p_sequelae = if relevant { 0.45 } else { 0.06 };
    for _ in 0..k {
        let id = if rng.gen_bool(p_sequelae) {
            pick(rng, &SEQUELAE_ENTITIES)
        } else {
            pick(rng, &GENERAL_ENTITIES)
        };
        out.push(entity(id, section));
    }
}

fn generate_document(rng: &mut impl Rng, id: String, relevant: bool, full_text: bool) -> Document {
    let topic = pick(rng, &TOPICS);
    let recovery = pick(rng, &RECOVERY_PHRASES);
    let title = if relevant && rng.gen_bool(0.2) {
        format!("{} and {}", pick(rng, &SEED_TERMS), recovery)
    } else if relevant && rng.gen_bool(0.5) {
        format!("COVID-19 survivors: {recovery}")
    } else {
        format!("COVID-19 and {topic}")
    };
    let mut abstract_text = format!("We studied {topic} in a cohort of patients.");
    if relevant {
        if rng.gen_bool(0.2) {
            abstract_text.push_str(&format!(" We describe {} in this population.", pick(rng, &SEED_TERMS)));
        }
        abstract_text.push_str(&format!(" Outcomes included {recovery}."));
    } else if rng.gen_bool(0.015) {
        abstract_text.push_str(" We measured how long COVID-19 (SARS-CoV-2) survives on surfaces.");
    } else if rng.gen_bool(0.05) {
        abstract_text.push_str(&format!(" Outcomes included {recovery}."));
    }

    let mut doc = Document::new(id, title).with_abstract(abstract_text);
    draw_entities(rng, relevant, "abstract", &mut doc.entities);
    if full_text {
        let mention = if relevant { rng.gen_bool(0.6) } else { rng.gen_bool(0.04) };
        let body = if mention {
            format!("Participants were followed for {}. Several met criteria for {}.", recovery, pick(rng, &SEED_TERMS))
        } else {
            format!("Participants were followed for outcomes related to {topic}.")
        };
        doc = doc.with_full_text(body);
        for section in ["methods", "results"] {
            draw_entities(rng, relevant, section, &mut doc.entities);
        }
    }

    let n_mesh = rng.gen_range(2..=5);
    let p_mesh = if relevant { 0.4 } else { 0.04 };
    for _ in 0..n_mesh {
        let term = if rng.gen_bool(p_mesh) {
            pick(rng, &SEQUELAE_MESH)
        } else {
            pick(rng, &GENERAL_MESH)
        };
        doc.mesh_terms.insert(term.to_string());
    }
    let pub_type = if rng.gen_bool(0.15) { "Review" } else { "Journal Article" };
    doc.pub_types.insert(pub_type.to_string());
    doc
}

pub fn generate_corpus(params: &CorpusParams) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut docs = Vec::with_capacity(params.n);
    let mut truth = BTreeMap::new();
    let mut query = HashMap::new();
    let mut topic = HashMap::new();
    for i in 0..params.n {
        let id = format!("doc{i:06}");
        let relevant = rng.gen_bool(params.prior);
        let full_text = rng.gen_bool(params.full_text_fraction);
        docs.push(generate_document(&mut rng, id.clone(), relevant, full_text));
        truth.insert(id.clone(), u8::from(relevant));

        let mean: f64 = if relevant { 0.5 } else { -0.8 };
        let z = Normal::new(mean, 1.5).expect("finite parameters").sample(&mut rng);
        query.insert(id.clone(), 1.0 / (1.0 + (-z).exp()));
        if rng.gen_bool(0.5) {
            let tagged = if relevant { rng.gen_bool(0.4) } else { rng.gen_bool(0.03) };
            topic.insert(id, if tagged { 1.0 } else { 0.0 });
        }
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::from_documents(docs)?,
        truth,
        external: vec![
            ("query_classifier".into(), ExternalPredictions::from_map(query)?),
            ("topic_portal".into(), ExternalPredictions::from_map(topic)?),
        ],
    })
}

/// Labels batch documents with their ground truth.
#[derive(Debug, Clone)]
pub struct OracleAnnotator<'a> {
    pub truth: &'a BTreeMap<String, u8>,
    pub name: String,
}

impl OracleAnnotator<'_> {
    pub fn annotate(&self, batch: &[SelectionCandidate], round: u32) -> Vec<AnnotationRecord> {
        batch
            .iter()
            .filter_map(|c| {
                self.truth.get(&c.doc_id).map(|&label| AnnotationRecord {
                    doc_id: c.doc_id.clone(),
                    label,
                    annotator: self.name.clone(),
                    timestamp: Utc.timestamp_opt(1_600_000_000 + i64::from(round) * 86_400, 0).unwrap(),
                    round,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_matrix_shape_and_rates() {
        let (m, truth) = planted_binary_matrix(20_000, &[0.9, 0.6], 0.3, 7);
        assert_eq!(m.n_docs(), 20_000);
        assert_eq!(m.n_lfs(), 2);
        let pos = truth.iter().filter(|&&t| t == 1).count() as f64 / 20_000.0;
        assert!((pos - 0.3).abs() < 0.02);
        let acc0 = m.column(0).iter().zip(&truth).filter(|(v, &t)| **v == f64::from(t)).count() as f64 / 20_000.0;
        assert!((acc0 - 0.9).abs() < 0.01);
    }

    #[test]
    fn corpus_is_deterministic() {
        let p = CorpusParams {
            n: 200,
            ..Default::default()
        };
        let a = generate_corpus(&p).unwrap();
        let b = generate_corpus(&p).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.corpus.len(), 200);
    }
}
