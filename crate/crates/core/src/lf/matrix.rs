use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::{
    grammar_lf, ExternalPredictions, FeatureLf, GrammarScope, LabelValue, LabelingFunctionSpec, LfKind,
};
use crate::corpus::{Corpus, Document, SplitAssignment};
use crate::error::{Error, Result};
use crate::grammar::GrammarRuleSet;

/// Documents × labeling functions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    doc_ids: Vec<String>,
    lf_ids: Vec<String>,
    cells: Vec<f64>,
}

impl LabelMatrix {
    pub fn new(doc_ids: Vec<String>, lf_ids: Vec<String>, cells: Vec<f64>) -> Result<Self> {
        if cells.len() != doc_ids.len() * lf_ids.len() {
            return Err(Error::InvalidArgument(format!(
                "matrix shape {}x{} does not match {} cells",
                doc_ids.len(),
                lf_ids.len(),
                cells.len()
            )));
        }
        if let Some(v) = cells.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("cell value {v} outside [0, 1]")));
        }
        Ok(LabelMatrix {
            doc_ids,
            lf_ids,
            cells,
        })
    }

    /// Builds a matrix from columns of equal length.
    pub fn from_columns(doc_ids: Vec<String>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = doc_ids.len();
        if let Some((id, _)) = columns.iter().find(|(_, c)| c.len() != n) {
            return Err(Error::InvalidArgument(format!("column {id} has wrong length")));
        }
        let m = columns.len();
        let mut cells = vec![0.0; n * m];
        for (j, (_, col)) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                cells[i * m + j] = *v;
            }
        }
        LabelMatrix::new(doc_ids, columns.into_iter().map(|c| c.0).collect(), cells)
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_lfs(&self) -> usize {
        self.lf_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn lf_ids(&self) -> &[String] {
        &self.lf_ids
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.lf_ids.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let m = self.lf_ids.len();
        &self.cells[row * m..(row + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_docs()).map(move |i| self.row(i))
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_docs()).map(|i| self.get(i, col)).collect()
    }

    pub fn lf_index(&self, lf_id: &str) -> Option<usize> {
        self.lf_ids.iter().position(|l| l == lf_id)
    }

    /// Keeps the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> LabelMatrix {
        let m = self.n_lfs();
        let mut cells = Vec::with_capacity(self.n_docs() * cols.len());
        for i in 0..self.n_docs() {
            let row = &self.cells[i * m..(i + 1) * m];
            cells.extend(cols.iter().map(|&c| row[c]));
        }
        LabelMatrix {
            doc_ids: self.doc_ids.clone(),
            lf_ids: cols.iter().map(|&c| self.lf_ids[c].clone()).collect(),
            cells,
        }
    }

    pub fn without_columns(&self, drop: &[usize]) -> LabelMatrix {
        let keep: Vec<usize> = (0..self.n_lfs()).filter(|c| !drop.contains(c)).collect();
        self.select_columns(&keep)
    }

    pub fn with_column(&self, lf_id: impl Into<String>, values: &[f64]) -> Result<LabelMatrix> {
        let mut columns: Vec<(String, Vec<f64>)> =
            (0..self.n_lfs()).map(|c| (self.lf_ids[c].clone(), self.column(c))).collect();
        columns.push((lf_id.into(), values.to_vec()));
        LabelMatrix::from_columns(self.doc_ids.clone(), columns)
    }

    /// Tab-separated: a `doc_id` header followed by one column per function.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("doc_id");
        for lf in &self.lf_ids {
            out.push('\t');
            out.push_str(lf);
        }
        out.push('\n');
        for (i, id) in self.doc_ids.iter().enumerate() {
            out.push_str(id);
            for v in self.row(i) {
                write!(out, "\t{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Line {
            line: 1,
            message: "missing header".into(),
        })?;
        let mut cols = header.split('\t');
        if cols.next() != Some("doc_id") {
            return Err(Error::Line {
                line: 1,
                message: "header must start with doc_id".into(),
            });
        }
        let lf_ids: Vec<String> = cols.map(String::from).collect();
        let mut doc_ids = Vec::new();
        let mut cells = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut fields = line.split('\t');
            doc_ids.push(fields.next().unwrap_or("").to_string());
            let before = cells.len();
            for f in fields {
                cells.push(f.parse::<f64>().map_err(|e| Error::Line {
                    line: i + 2,
                    message: e.to_string(),
                })?);
            }
            if cells.len() - before != lf_ids.len() {
                return Err(Error::Line {
                    line: i + 2,
                    message: "wrong number of columns".into(),
                });
            }
        }
        LabelMatrix::new(doc_ids, lf_ids, cells)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_tsv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Everything needed to evaluate a list of labeling function specs.
#[derive(Debug, Clone, Default)]
pub struct LfResources<'a> {
    pub grammar: Option<&'a GrammarRuleSet>,
    /// Feature functions keyed by `lf_id`.
    pub features: HashMap<String, FeatureLf>,
    /// External predictions keyed by `lf_id`.
    pub external: HashMap<String, ExternalPredictions>,
    pub bias: Option<LabelValue>,
}

enum Evaluator<'a> {
    Grammar(&'a GrammarRuleSet, GrammarScope),
    Feature(&'a FeatureLf),
    External(&'a ExternalPredictions),
    Constant(LabelValue),
}

impl Evaluator<'_> {
    fn eval(&self, doc: &Document, splits: &SplitAssignment) -> f64 {
        match self {
            Evaluator::Grammar(g, scope) => grammar_lf(doc, g, *scope).value(),
            Evaluator::Feature(f) => f.apply(doc, splits).value(),
            Evaluator::External(p) => p.get(&doc.id).value(),
            Evaluator::Constant(v) => v.value(),
        }
    }
}

fn resolve<'a>(spec: &LabelingFunctionSpec, res: &'a LfResources<'_>) -> Result<Evaluator<'a>> {
    spec.validate()?;
    let missing = |what: &str| Error::Unresolvable {
        lf_id: spec.lf_id.clone(),
        reason: format!("no {what} available"),
    };
    Ok(match spec.kind {
        LfKind::GrammarTitleAbstract => {
            Evaluator::Grammar(res.grammar.ok_or_else(|| missing("grammar"))?, GrammarScope::TitleAbstract)
        }
        LfKind::GrammarFulltext => {
            Evaluator::Grammar(res.grammar.ok_or_else(|| missing("grammar"))?, GrammarScope::FullText)
        }
        LfKind::FeatureModel => Evaluator::Feature(
            res.features
                .get(&spec.lf_id)
                .ok_or_else(|| missing("feature model"))?,
        ),
        LfKind::ExternalPredictions => Evaluator::External(
            res.external
                .get(&spec.lf_id)
                .ok_or_else(|| missing("external predictions"))?,
        ),
        LfKind::Bias => Evaluator::Constant(res.bias.ok_or_else(|| missing("bias rate"))?),
    })
}

/// Evaluates every spec on every document. Rows follow corpus order and
/// columns follow spec order.
pub fn build_label_matrix(
    corpus: &Corpus,
    specs: &[LabelingFunctionSpec],
    resources: &LfResources<'_>,
    splits: &SplitAssignment,
) -> Result<LabelMatrix> {
    let evaluators = specs
        .iter()
        .map(|s| resolve(s, resources))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = corpus
        .documents()
        .par_iter()
        .map(|doc| evaluators.iter().map(|e| e.eval(doc, splits)).collect())
        .collect();
    Ok(LabelMatrix {
        doc_ids: corpus.ids().map(String::from).collect(),
        lf_ids: specs.iter().map(|s| s.lf_id.clone()).collect(),
        cells: rows.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lf::{bias_lf, FeatureSource, DEFAULT_BIAS_PRIOR};

    #[test]
    fn single_bias_cell() {
        let corpus = Corpus::from_documents(vec![Document::new("d", "t")]).unwrap();
        let res = LfResources {
            bias: Some(bias_lf(None, DEFAULT_BIAS_PRIOR)),
            ..Default::default()
        };
        let m = build_label_matrix(&corpus, &[LabelingFunctionSpec::bias()], &res, &SplitAssignment::default()).unwrap();
        assert_eq!(m.row(0), &[0.029]);
    }

    #[test]
    fn empty_corpus_gives_empty_matrix() {
        let corpus = Corpus::default();
        let res = LfResources {
            bias: Some(LabelValue::ABSTAIN),
            ..Default::default()
        };
        let m = build_label_matrix(&corpus, &[LabelingFunctionSpec::bias()], &res, &SplitAssignment::default()).unwrap();
        assert_eq!(m.n_docs(), 0);
        assert_eq!(m.n_lfs(), 1);
    }

    #[test]
    fn grammar_pair_without_full_text() {
        let g = GrammarRuleSet::bundled();
        let corpus = Corpus::from_documents(vec![Document::new("d", "Long COVID clinics")]).unwrap();
        let res = LfResources {
            grammar: Some(&g),
            ..Default::default()
        };
        let specs = [
            LabelingFunctionSpec::grammar(GrammarScope::TitleAbstract),
            LabelingFunctionSpec::grammar(GrammarScope::FullText),
        ];
        let m = build_label_matrix(&corpus, &specs, &res, &SplitAssignment::default()).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.5]);
    }

    #[test]
    fn unresolvable_spec_names_lf() {
        let corpus = Corpus::from_documents(vec![Document::new("d", "t")]).unwrap();
        let spec = LabelingFunctionSpec::feature(FeatureSource::MeshAndPubtypes, 1);
        let err = build_label_matrix(&corpus, &[spec], &LfResources::default(), &SplitAssignment::default()).unwrap_err();
        assert!(err.to_string().contains("mesh_and_pubtypes_fold1"), "{err}");
    }

    #[test]
    fn untrained_feature_lf_abstains() {
        let corpus = Corpus::from_documents(vec![Document::new("a", "t"), Document::new("b", "u")]).unwrap();
        let spec = LabelingFunctionSpec::feature(FeatureSource::MeshAndPubtypes, 2);
        let mut res = LfResources::default();
        res.features.insert(
            spec.lf_id.clone(),
            FeatureLf::Untrained {
                reason: "empty fold".into(),
            },
        );
        let m = build_label_matrix(&corpus, &[spec], &res, &SplitAssignment::default()).unwrap();
        assert_eq!(m.column(0), vec![0.5, 0.5]);
    }

    #[test]
    fn tsv_round_trip_is_exact() {
        let m = LabelMatrix::from_columns(
            vec!["a".into(), "b".into()],
            vec![
                ("x".into(), vec![0.1 + 0.2, 1.0 / 3.0]),
                ("y".into(), vec![0.5, 0.029]),
            ],
        )
        .unwrap();
        let back = LabelMatrix::from_tsv(&m.to_tsv()).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.row(1), &[1.0 / 3.0, 0.029]);
    }

    #[test]
    fn column_selection() {
        let m = LabelMatrix::from_columns(
            vec!["a".into()],
            vec![("x".into(), vec![0.1]), ("y".into(), vec![0.2]), ("z".into(), vec![0.3])],
        )
        .unwrap();
        let w = m.without_columns(&[1]);
        assert_eq!(w.lf_ids(), &["x".to_string(), "z".to_string()]);
        assert_eq!(w.row(0), &[0.1, 0.3]);
    }
}
