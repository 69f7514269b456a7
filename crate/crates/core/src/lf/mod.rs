//! Labeling functions: noisy relevance signals mapping a document to a
//! probabilistic label in `[0, 1]`, where exactly `0.5` means abstain.

mod external;
mod features;
mod matrix;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::grammar::{title_abstract_mentions, GrammarRuleSet};

pub use external::{ExternalPredictions, EXTERNAL_HEADER};
pub use features::{
    apply_feature_lf, extract_features, train_feature_lf, FeatureLf, FeatureModel, TrainingParams,
};
pub use matrix::{build_label_matrix, LabelMatrix, LfResources};

/// The abstain sentinel.
pub const ABSTAIN: f64 = 0.5;

/// Prior positive rate used by the bias function before any round has run.
pub const DEFAULT_BIAS_PRIOR: f64 = 0.029;

const BIAS_CLAMP: (f64, f64) = (0.01, 0.99);

/// A probabilistic label in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LabelValue(f64);

impl LabelValue {
    pub const ABSTAIN: LabelValue = LabelValue(ABSTAIN);
    pub const POSITIVE: LabelValue = LabelValue(1.0);
    pub const NEGATIVE: LabelValue = LabelValue(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(LabelValue(value))
        } else {
            Err(Error::InvalidArgument(format!(
                "label value {value} outside [0, 1]"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_abstain(self) -> bool {
        self.0 == ABSTAIN
    }

    fn from_bool(b: bool) -> Self {
        if b {
            LabelValue::POSITIVE
        } else {
            LabelValue::NEGATIVE
        }
    }
}

impl TryFrom<f64> for LabelValue {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        LabelValue::new(v)
    }
}

impl From<LabelValue> for f64 {
    fn from(v: LabelValue) -> f64 {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LfKind {
    GrammarTitleAbstract,
    GrammarFulltext,
    FeatureModel,
    ExternalPredictions,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Entity occurrence counts from the title and abstract.
    EntitiesTitleAbstract,
    /// (section, entity) occurrence counts from the full text.
    EntitiesFulltextSectioned,
    /// Binary subject-heading and publication-type indicators.
    MeshAndPubtypes,
}

impl FeatureSource {
    pub const ALL: [FeatureSource; 3] = [
        FeatureSource::EntitiesTitleAbstract,
        FeatureSource::EntitiesFulltextSectioned,
        FeatureSource::MeshAndPubtypes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::EntitiesTitleAbstract => "entities_title_abstract",
            FeatureSource::EntitiesFulltextSectioned => "entities_fulltext_sectioned",
            FeatureSource::MeshAndPubtypes => "mesh_and_pubtypes",
        }
    }
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelingFunctionSpec {
    pub lf_id: String,
    pub kind: LfKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_source: Option<FeatureSource>,
    /// Ablation group tag.
    pub group: String,
    /// Predictions file for `external_predictions`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl LabelingFunctionSpec {
    pub fn grammar(scope: GrammarScope) -> Self {
        let (lf_id, kind) = match scope {
            GrammarScope::TitleAbstract => ("grammar_title_abstract", LfKind::GrammarTitleAbstract),
            GrammarScope::FullText => ("grammar_fulltext", LfKind::GrammarFulltext),
        };
        LabelingFunctionSpec {
            lf_id: lf_id.into(),
            kind,
            fold: None,
            feature_source: None,
            group: "grammar".into(),
            path: None,
        }
    }

    pub fn feature(source: FeatureSource, fold: u8) -> Self {
        LabelingFunctionSpec {
            lf_id: format!("{source}_fold{fold}"),
            kind: LfKind::FeatureModel,
            fold: Some(fold),
            feature_source: Some(source),
            group: source.as_str().into(),
            path: None,
        }
    }

    pub fn external(lf_id: impl Into<String>, group: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        LabelingFunctionSpec {
            lf_id: lf_id.into(),
            kind: LfKind::ExternalPredictions,
            fold: None,
            feature_source: None,
            group: group.into(),
            path: Some(path.into()),
        }
    }

    pub fn bias() -> Self {
        LabelingFunctionSpec {
            lf_id: "bias".into(),
            kind: LfKind::Bias,
            fold: None,
            feature_source: None,
            group: "bias".into(),
            path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| {
            Err(Error::InvalidSpec {
                lf_id: self.lf_id.clone(),
                reason: reason.into(),
            })
        };
        if self.lf_id.is_empty() {
            return invalid("empty lf_id");
        }
        let is_feature = self.kind == LfKind::FeatureModel;
        if is_feature != self.fold.is_some() {
            return invalid("fold must be present exactly when kind is feature_model");
        }
        if is_feature != self.feature_source.is_some() {
            return invalid("feature_source must be present exactly when kind is feature_model");
        }
        if let Some(f) = self.fold {
            if !(1..=3).contains(&f) {
                return invalid("fold must be 1, 2 or 3");
            }
        }
        if (self.kind == LfKind::ExternalPredictions) != self.path.is_some() {
            return invalid("path must be present exactly when kind is external_predictions");
        }
        Ok(())
    }
}

/// The standard suite: both grammar functions, three folds for every
/// feature source, the given external prediction sets, and the bias.
pub fn default_specs(external: &[LabelingFunctionSpec]) -> Vec<LabelingFunctionSpec> {
    let mut specs = vec![
        LabelingFunctionSpec::grammar(GrammarScope::TitleAbstract),
        LabelingFunctionSpec::grammar(GrammarScope::FullText),
    ];
    for source in FeatureSource::ALL {
        for fold in 1..=3 {
            specs.push(LabelingFunctionSpec::feature(source, fold));
        }
    }
    specs.extend(external.iter().cloned());
    specs.push(LabelingFunctionSpec::bias());
    specs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrammarScope {
    TitleAbstract,
    FullText,
}

/// 1 when the grammar finds a term in scope, 0 when it finds none. The full
/// text scope abstains for documents without full text.
pub fn grammar_lf(doc: &Document, rules: &GrammarRuleSet, scope: GrammarScope) -> LabelValue {
    match scope {
        GrammarScope::TitleAbstract => LabelValue::from_bool(!title_abstract_mentions(doc, rules).is_empty()),
        GrammarScope::FullText => match &doc.full_text {
            Some(text) => LabelValue::from_bool(!rules.find(text).is_empty()),
            None => LabelValue::ABSTAIN,
        },
    }
}

/// The same label for every document: last round's positive rate, or the
/// initial prior when there is no previous round.
pub fn bias_lf(prev_round_positive_rate: Option<f64>, initial_prior: f64) -> LabelValue {
    let rate = prev_round_positive_rate.unwrap_or(initial_prior);
    LabelValue(rate.clamp(BIAS_CLAMP.0, BIAS_CLAMP.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_title() {
        let g = GrammarRuleSet::bundled();
        let doc = Document::new("1", "Long COVID in children");
        assert_eq!(grammar_lf(&doc, &g, GrammarScope::TitleAbstract), LabelValue::POSITIVE);
    }

    #[test]
    fn grammar_fulltext_abstains_without_text() {
        let g = GrammarRuleSet::bundled();
        let doc = Document::new("1", "Long COVID in children");
        assert!(grammar_lf(&doc, &g, GrammarScope::FullText).is_abstain());
        let with_text = doc.clone().with_full_text("nothing relevant here");
        assert_eq!(grammar_lf(&with_text, &g, GrammarScope::FullText), LabelValue::NEGATIVE);
    }

    #[test]
    fn grammar_negative_abstract() {
        let g = GrammarRuleSet::bundled();
        let doc = Document::new("1", "Vaccines").with_abstract("Antibody titres after two doses.");
        assert_eq!(grammar_lf(&doc, &g, GrammarScope::TitleAbstract), LabelValue::NEGATIVE);
    }

    #[test]
    fn bias_values() {
        assert_eq!(bias_lf(None, DEFAULT_BIAS_PRIOR).value(), 0.029);
        assert_eq!(bias_lf(Some(200.0 / 10000.0), DEFAULT_BIAS_PRIOR).value(), 0.02);
        assert_eq!(bias_lf(Some(1.0), DEFAULT_BIAS_PRIOR).value(), 0.99);
        assert_eq!(bias_lf(Some(0.0), DEFAULT_BIAS_PRIOR).value(), 0.01);
    }

    #[test]
    fn label_value_range() {
        assert!(LabelValue::new(1.7).is_err());
        assert!(LabelValue::new(f64::NAN).is_err());
        assert!(LabelValue::new(0.5).unwrap().is_abstain());
    }

    #[test]
    fn spec_invariants() {
        for spec in default_specs(&[LabelingFunctionSpec::external("cc_topic", "coronacentral", "x.csv")]) {
            spec.validate().unwrap();
        }
        let mut bad = LabelingFunctionSpec::feature(FeatureSource::MeshAndPubtypes, 1);
        bad.fold = None;
        assert!(bad.validate().is_err());
        let mut bad = LabelingFunctionSpec::bias();
        bad.feature_source = Some(FeatureSource::MeshAndPubtypes);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spec_serde_shape() {
        let spec = LabelingFunctionSpec::feature(FeatureSource::EntitiesTitleAbstract, 2);
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(json["kind"], "feature_model");
        assert_eq!(json["feature_source"], "entities_title_abstract");
        assert_eq!(json["lf_id"], "entities_title_abstract_fold2");
    }
}
