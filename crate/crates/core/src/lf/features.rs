//! Fold-trained logistic regression over entity and subject-heading features.
//!
//! Each feature source yields three models, one per training fold. A model
//! abstains on the documents of its own fold so that its agreement with
//! other labeling functions is measured on data it has not seen.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSource, LabelValue};
use crate::corpus::{AnnotationStore, Corpus, Document, SplitAssignment};
use crate::error::{Error, Result};

const MODEL_FORMAT: &str = "weaksift-feature-model";
const MODEL_VERSION: u32 = 1;

/// Full-batch gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub l2: f64,
    pub learning_rate: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
}

impl Default for TrainingParams {
    fn default() -> Self {
        TrainingParams {
            l2: 1e-4,
            learning_rate: 0.1,
            decay: 0.9,
            decay_every: 20,
            epochs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    pub format: String,
    pub version: u32,
    /// Training fold, 1-based.
    pub trained_on: u8,
    pub feature_source: FeatureSource,
    pub params: TrainingParams,
    pub n_train: usize,
    pub bias_weight: f64,
    pub weights: BTreeMap<String, f64>,
}

/// A feature labeling function that may not have been trainable this round
/// (empty or single-class fold). Untrained functions abstain everywhere.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureLf {
    Trained(FeatureModel),
    Untrained { reason: String },
}

fn entity_key(entity_type: &str, id: &str) -> String {
    format!("{entity_type}:{id}")
}

fn is_title_or_abstract(section: &str) -> bool {
    section.is_empty() || section.eq_ignore_ascii_case("title") || section.eq_ignore_ascii_case("abstract")
}

/// Sparse feature vector for a document. Returns `None` when the source
/// needs full text and the document has none.
pub fn extract_features(doc: &Document, source: FeatureSource) -> Option<BTreeMap<String, f64>> {
    let mut features: BTreeMap<String, f64> = BTreeMap::new();
    match source {
        FeatureSource::EntitiesTitleAbstract => {
            for e in doc.entities.iter().filter(|e| is_title_or_abstract(&e.section)) {
                *features.entry(entity_key(&e.entity_type, &e.id)).or_default() += 1.0;
            }
        }
        FeatureSource::EntitiesFulltextSectioned => {
            if !doc.has_full_text() {
                return None;
            }
            for e in &doc.entities {
                let section = if e.section.is_empty() {
                    "body".to_string()
                } else {
                    e.section.to_lowercase()
                };
                let key = format!("{section}|{}", entity_key(&e.entity_type, &e.id));
                *features.entry(key).or_default() += 1.0;
            }
        }
        FeatureSource::MeshAndPubtypes => {
            for t in &doc.mesh_terms {
                features.insert(format!("mesh:{t}"), 1.0);
            }
            for t in &doc.pub_types {
                features.insert(format!("pt:{t}"), 1.0);
            }
        }
    }
    Some(features)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits an L2-regularized logistic regression on the annotated documents of
/// one training fold. Evaluation-set documents are never read.
pub fn train_feature_lf(
    corpus: &Corpus,
    annotations: &AnnotationStore,
    splits: &SplitAssignment,
    fold: u8,
    source: FeatureSource,
    params: &TrainingParams,
) -> Result<FeatureModel> {
    if !(1..=3).contains(&fold) {
        return Err(Error::InvalidArgument(format!("fold must be 1..=3, got {fold}")));
    }
    let fold_idx = usize::from(fold);
    let mut examples: Vec<(BTreeMap<String, f64>, f64)> = Vec::new();
    for id in splits.fold(fold) {
        let (Some(doc), Some(rec)) = (corpus.get(id), annotations.current(id)) else {
            continue;
        };
        if let Some(f) = extract_features(doc, source) {
            examples.push((f, f64::from(rec.label)));
        }
    }
    if examples.is_empty() {
        return Err(Error::EmptyFold { fold: fold_idx });
    }
    let positives = examples.iter().filter(|e| e.1 == 1.0).count();
    if positives == 0 || positives == examples.len() {
        return Err(Error::DegenerateFold { fold: fold_idx });
    }

    // Dense feature index in sorted key order keeps training deterministic.
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (f, _) in &examples {
        for k in f.keys() {
            index.entry(k.as_str()).or_insert(0);
        }
    }
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    let rows: Vec<(Vec<(usize, f64)>, f64)> = examples
        .iter()
        .map(|(f, y)| (f.iter().map(|(k, v)| (index[k.as_str()], *v)).collect(), *y))
        .collect();

    let (weights, bias) = gradient_descent(&rows, index.len(), params);
    let weights = index
        .keys()
        .map(|k| (k.to_string(), weights[index[k]]))
        .collect();
    Ok(FeatureModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        trained_on: fold,
        feature_source: source,
        params: *params,
        n_train: rows.len(),
        bias_weight: bias,
        weights,
    })
}

fn gradient_descent(rows: &[(Vec<(usize, f64)>, f64)], dim: usize, params: &TrainingParams) -> (Vec<f64>, f64) {
    let n = rows.len() as f64;
    let n_pos = rows.iter().filter(|r| r.1 > 0.5).count() as f64;
    // Each class carries half the loss, so the fold's class mix does not
    // leak into the output as a prior.
    let class_weight = |y: f64| if y > 0.5 { n / (2.0 * n_pos) } else { n / (2.0 * (n - n_pos)) };
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut grad = vec![0.0; dim];
    for epoch in 0..params.epochs {
        let lr = params.learning_rate * params.decay.powi((epoch / params.decay_every.max(1)) as i32);
        for (g, wi) in grad.iter_mut().zip(&w) {
            *g = params.l2 * wi;
        }
        let mut grad_b = 0.0;
        for (x, y) in rows {
            let z = b + x.iter().map(|&(j, v)| w[j] * v).sum::<f64>();
            let err = class_weight(*y) * (sigmoid(z) - y) / n;
            grad_b += err;
            for &(j, v) in x {
                grad[j] += err * v;
            }
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= lr * g;
        }
        b -= lr * grad_b;
    }
    (w, b)
}

impl FeatureModel {
    /// Probability of relevance from the weighted feature sum, ignoring
    /// fold membership.
    pub fn score(&self, features: &BTreeMap<String, f64>) -> f64 {
        let z = self.bias_weight
            + features
                .iter()
                .filter_map(|(k, v)| self.weights.get(k).map(|w| w * v))
                .sum::<f64>();
        sigmoid(z)
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
        let model: FeatureModel = serde_json::from_str(&text)?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::InvalidArgument(format!(
                "{}: unsupported model format {} v{}",
                path.display(),
                model.format,
                model.version
            )));
        }
        Ok(model)
    }
}

/// Abstains on the model's own training fold and, for the full-text source,
/// on documents without full text; otherwise returns the model probability.
pub fn apply_feature_lf(model: &FeatureModel, doc: &Document, splits: &SplitAssignment) -> LabelValue {
    if splits.fold_of(&doc.id) == Some(model.trained_on) {
        return LabelValue::ABSTAIN;
    }
    match extract_features(doc, model.feature_source) {
        Some(f) => LabelValue(model.score(&f)),
        None => LabelValue::ABSTAIN,
    }
}

impl FeatureLf {
    pub fn apply(&self, doc: &Document, splits: &SplitAssignment) -> LabelValue {
        match self {
            FeatureLf::Trained(m) => apply_feature_lf(m, doc, splits),
            FeatureLf::Untrained { .. } => LabelValue::ABSTAIN,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{assign_splits, AnnotationRecord, Entity};
    use chrono::{TimeZone, Utc};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn entity(id: &str) -> Entity {
        Entity {
            entity_type: "Disease".into(),
            id: id.into(),
            text: id.into(),
            section: "abstract".into(),
        }
    }

    /// Relevant documents carry entity F; every document carries a few
    /// random noise entities.
    fn synthetic(n: usize, seed: u64) -> (Vec<Document>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut docs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let relevant = rng.gen_bool(0.4);
            let mut d = Document::new(format!("s{seed}-{i}"), "t");
            if relevant {
                d.entities.push(entity("F"));
            }
            for _ in 0..3 {
                d.entities.push(entity(&format!("N{}", rng.gen_range(0..20))));
            }
            docs.push(d);
            labels.push(u8::from(relevant));
        }
        (docs, labels)
    }

    fn annotate(docs: &[Document], labels: &[u8]) -> AnnotationStore {
        let mut store = AnnotationStore::new();
        for (d, &l) in docs.iter().zip(labels) {
            store
                .record(AnnotationRecord {
                    doc_id: d.id.clone(),
                    label: l,
                    annotator: "t".into(),
                    timestamp: Utc.timestamp_opt(0, 0).unwrap(),
                    round: 0,
                })
                .unwrap();
        }
        store
    }

    #[test]
    fn separable_fold_generalizes() {
        let (docs, labels) = synthetic(400, 1);
        let corpus = Corpus::from_documents(docs.clone()).unwrap();
        let store = annotate(&docs, &labels);
        let splits = assign_splits(&store, 5, 0.25, None).unwrap();
        let model = train_feature_lf(
            &corpus,
            &store,
            &splits,
            1,
            FeatureSource::EntitiesTitleAbstract,
            &TrainingParams::default(),
        )
        .unwrap();

        let (test_docs, test_labels) = synthetic(1000, 2);
        let correct = test_docs
            .iter()
            .zip(&test_labels)
            .filter(|(d, &l)| {
                let p = apply_feature_lf(&model, d, &SplitAssignment::default()).value();
                (p >= 0.5) == (l == 1)
            })
            .count();
        assert!(correct as f64 / 1000.0 > 0.95, "accuracy {correct}/1000");
    }

    #[test]
    fn class_mix_does_not_shift_uninformative_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (docs, _) = synthetic(400, 4);
        let docs: Vec<Document> = docs
            .into_iter()
            .map(|mut d| {
                d.entities.retain(|e| e.id != "F");
                d
            })
            .collect();
        let labels: Vec<u8> = docs.iter().map(|_| u8::from(rng.gen_bool(0.9))).collect();
        let corpus = Corpus::from_documents(docs.clone()).unwrap();
        let store = annotate(&docs, &labels);
        let splits = assign_splits(&store, 5, 0.25, None).unwrap();
        let model = train_feature_lf(&corpus, &store, &splits, 1, FeatureSource::EntitiesTitleAbstract, &TrainingParams::default())
            .unwrap();
        let (fresh, _) = synthetic(500, 5);
        let mean = fresh
            .iter()
            .map(|d| apply_feature_lf(&model, d, &SplitAssignment::default()).value())
            .sum::<f64>()
            / 500.0;
        assert!((mean - 0.5).abs() < 0.1, "mean output {mean}");
    }

    #[test]
    fn single_class_fold_is_degenerate() {
        let (docs, _) = synthetic(40, 3);
        let labels = vec![1u8; docs.len()];
        let corpus = Corpus::from_documents(docs.clone()).unwrap();
        let store = annotate(&docs, &labels);
        let splits = assign_splits(&store, 1, 0.25, None).unwrap();
        let err = train_feature_lf(&corpus, &store, &splits, 2, FeatureSource::EntitiesTitleAbstract, &TrainingParams::default())
            .unwrap_err();
        assert!(err.to_string().starts_with("degenerate fold"), "{err}");
    }

    #[test]
    fn empty_fold_is_an_error() {
        let corpus = Corpus::from_documents(vec![]).unwrap();
        let err = train_feature_lf(
            &corpus,
            &AnnotationStore::new(),
            &SplitAssignment::default(),
            1,
            FeatureSource::MeshAndPubtypes,
            &TrainingParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyFold { fold: 1 }));
    }

    fn toy_model(bias_weight: f64, source: FeatureSource) -> FeatureModel {
        FeatureModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            trained_on: 1,
            feature_source: source,
            params: TrainingParams::default(),
            n_train: 0,
            bias_weight,
            weights: BTreeMap::from([("Disease:F".to_string(), 2.0)]),
        }
    }

    #[test]
    fn empty_features_give_sigmoid_of_bias() {
        let doc = Document::new("x", "t");
        let p = apply_feature_lf(&toy_model(-1.5, FeatureSource::EntitiesTitleAbstract), &doc, &SplitAssignment::default());
        assert!((p.value() - 1.0 / (1.0 + 1.5f64.exp())).abs() < 1e-15);
        let p0 = apply_feature_lf(&toy_model(0.0, FeatureSource::EntitiesTitleAbstract), &doc, &SplitAssignment::default());
        assert_eq!(p0.value(), 0.5);
    }

    #[test]
    fn abstains_on_own_fold_only() {
        let mut splits = SplitAssignment::default();
        splits.folds[0].insert("own".into());
        splits.folds[1].insert("other".into());
        let model = toy_model(1.0, FeatureSource::EntitiesTitleAbstract);
        let own = Document::new("own", "t");
        let other = Document::new("other", "t");
        assert!(apply_feature_lf(&model, &own, &splits).is_abstain());
        assert!(!apply_feature_lf(&model, &other, &splits).is_abstain());
    }

    #[test]
    fn fulltext_source_abstains_without_text() {
        let model = toy_model(1.0, FeatureSource::EntitiesFulltextSectioned);
        let doc = Document::new("x", "t");
        assert!(apply_feature_lf(&model, &doc, &SplitAssignment::default()).is_abstain());
    }

    #[test]
    fn feature_extraction_shapes() {
        let mut doc = Document::new("x", "t").with_full_text("body");
        doc.entities.push(entity("A"));
        doc.entities.push(entity("A"));
        doc.entities.push(Entity {
            section: "Methods".into(),
            ..entity("B")
        });
        doc.mesh_terms.insert("D017741".into());
        doc.pub_types.insert("Review".into());
        let ta = extract_features(&doc, FeatureSource::EntitiesTitleAbstract).unwrap();
        assert_eq!(ta.get("Disease:A"), Some(&2.0));
        assert!(!ta.contains_key("Disease:B"));
        let ft = extract_features(&doc, FeatureSource::EntitiesFulltextSectioned).unwrap();
        assert_eq!(ft.get("methods|Disease:B"), Some(&1.0));
        assert_eq!(ft.get("abstract|Disease:A"), Some(&2.0));
        let mesh = extract_features(&doc, FeatureSource::MeshAndPubtypes).unwrap();
        assert_eq!(mesh.len(), 2);
        assert!(mesh.values().all(|&v| v == 1.0));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = toy_model(0.123456789012345, FeatureSource::MeshAndPubtypes);
        model.save(&path).unwrap();
        assert_eq!(FeatureModel::load(&path).unwrap(), model);
    }
}
