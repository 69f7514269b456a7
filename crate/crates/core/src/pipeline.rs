//! On-disk workspace and the round-based pipeline stages.
//!
//! Layout under the data directory:
//!
//! ```text
//! corpus.jsonl  annotations.csv  skips.csv  splits.json  round.json
//! models/round-N/manifest.json, <lf_id>.json
//! state/round-N/model_state.json, matrix.tsv, predictions.tsv, batch.tsv
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{
    distance_to_threshold, masked_iqr, read_candidates, select_batch, write_candidates, SelectionCandidate,
};
use crate::config::Config;
use crate::corpus::{
    append_annotations, assign_splits, ingest_jsonl, read_litcovid_tsv, write_jsonl, AnnotationRecord,
    AnnotationStore, Corpus, Document, SplitAssignment,
};
use crate::error::{Error, Result};
use crate::eval::{ablate, enrichment_report, evaluate, AblationReport, EnrichmentFeature, EnrichmentRow, EvalSummary, Roc};
use crate::grammar::{compile_grammar, term_frequency_report, GrammarRuleSet, TermReport};
use crate::label_model::ModelState;
use crate::lf::{
    bias_lf, build_label_matrix, default_specs, train_feature_lf, ExternalPredictions, FeatureLf, FeatureModel,
    LabelMatrix, LabelingFunctionSpec, LfKind, LfResources, TrainingParams,
};

/// Paths inside a data directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.root.join("annotations.csv")
    }

    pub fn skips_path(&self) -> PathBuf {
        self.root.join("skips.csv")
    }

    pub fn splits_path(&self) -> PathBuf {
        self.root.join("splits.json")
    }

    pub fn round_path(&self) -> PathBuf {
        self.root.join("round.json")
    }

    /// Present while a round advancement is in progress.
    pub fn lock_path(&self) -> PathBuf {
        self.root.join(".advancing")
    }

    pub fn model_dir(&self, round: u32) -> PathBuf {
        self.root.join("models").join(format!("round-{round}"))
    }

    pub fn state_dir(&self, round: u32) -> PathBuf {
        self.root.join("state").join(format!("round-{round}"))
    }

    pub fn model_state_path(&self, round: u32) -> PathBuf {
        self.state_dir(round).join("model_state.json")
    }

    pub fn matrix_path(&self, round: u32) -> PathBuf {
        self.state_dir(round).join("matrix.tsv")
    }

    pub fn predictions_path(&self, round: u32) -> PathBuf {
        self.state_dir(round).join("predictions.tsv")
    }

    pub fn batch_path(&self, round: u32) -> PathBuf {
        self.state_dir(round).join("batch.tsv")
    }

    pub fn is_advancing(&self) -> bool {
        self.lock_path().exists()
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        let path = self.corpus_path();
        if !path.exists() {
            return Err(Error::InvalidArgument(format!(
                "no corpus at {}; run ingest first",
                path.display()
            )));
        }
        ingest_jsonl(path)
    }

    pub fn load_annotations(&self) -> Result<AnnotationStore> {
        AnnotationStore::load(self.annotations_path(), Some(&self.skips_path()))
    }

    pub fn load_splits(&self) -> Result<SplitAssignment> {
        read_json_or_default(&self.splits_path())
    }

    pub fn load_round(&self) -> Result<RoundState> {
        read_json_or_default(&self.round_path())
    }

    pub fn save_round(&self, state: &RoundState) -> Result<()> {
        write_json(&self.round_path(), state)
    }

    pub fn load_batch(&self, round: u32) -> Result<Vec<SelectionCandidate>> {
        let path = self.batch_path(round);
        if !path.exists() {
            return Err(Error::NoBatch(round));
        }
        read_candidates(path)
    }
}

fn read_json_or_default<T: Default + for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Ok(T::default());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes through a temporary file and a rename so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Persistent loop position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: u32,
    /// Value of the bias labeling function this round: the previous round's
    /// positive rate, or the initial prior when unset.
    pub bias_rate: Option<f64>,
    /// Fraction of this round's calibrated predictions at or above the
    /// threshold, once predictions exist.
    pub positive_rate: Option<f64>,
    pub last_eval: Option<EvalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub lf_id: String,
    pub trained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub round: u32,
    pub lfs: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    LitcovidTsv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub annotated: usize,
    pub bias_rate: f64,
    pub positive_rate: f64,
    pub batch_size: usize,
    pub accuracies: Vec<(String, f64)>,
}

/// Removes the advancement lock when dropped.
struct AdvanceLock(PathBuf);

impl AdvanceLock {
    fn acquire(path: PathBuf) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::InvalidArgument("round advancement already in progress".into())
                } else {
                    Error::io(&path, e)
                }
            })?;
        Ok(AdvanceLock(path))
    }
}

impl Drop for AdvanceLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

pub struct Pipeline {
    pub config: Config,
    pub workspace: Workspace,
    grammar: GrammarRuleSet,
}

impl Pipeline {
    pub fn open(config: Config) -> Result<Self> {
        config.validate()?;
        let grammar = match &config.grammar {
            Some(path) => compile_grammar(path)?,
            None => GrammarRuleSet::bundled(),
        };
        Ok(Pipeline {
            workspace: Workspace::new(&config.data_dir),
            config,
            grammar,
        })
    }

    pub fn grammar(&self) -> &GrammarRuleSet {
        &self.grammar
    }

    pub fn specs(&self) -> Vec<LabelingFunctionSpec> {
        default_specs(&self.config.external_specs())
    }

    fn round_seed(&self, round: u32) -> u64 {
        self.config.seed ^ (u64::from(round) << 32)
    }

    /// Replaces the stored corpus with the documents in `input`.
    pub fn ingest(&self, input: &Path, format: InputFormat) -> Result<usize> {
        let corpus = match format {
            InputFormat::Jsonl => ingest_jsonl(input)?,
            InputFormat::LitcovidTsv => Corpus::from_documents(read_litcovid_tsv(input)?)?,
        };
        std::fs::create_dir_all(self.workspace.root()).map_err(|e| Error::io(self.workspace.root(), e))?;
        write_jsonl(&corpus, self.workspace.corpus_path())?;
        Ok(corpus.len())
    }

    /// Validates an annotation CSV against the corpus and appends it to the
    /// log.
    pub fn import_labels(&self, input: &Path) -> Result<usize> {
        let corpus = self.workspace.load_corpus()?;
        let mut scratch = AnnotationStore::new();
        let n = scratch.import_csv(input, &corpus)?;
        append_annotations(self.workspace.annotations_path(), scratch.log())?;
        Ok(n)
    }

    /// Appends judgments made through the service.
    pub fn record_annotations(&self, records: &[AnnotationRecord]) -> Result<()> {
        append_annotations(self.workspace.annotations_path(), records)
    }

    /// Extends the stored split with newly annotated documents. Fewer than
    /// four annotations leave the split empty.
    pub fn split(&self) -> Result<SplitAssignment> {
        let annotations = self.workspace.load_annotations()?;
        let previous = self.workspace.load_splits()?;
        let splits = self.compute_splits(&annotations, &previous)?;
        write_json(&self.workspace.splits_path(), &splits)?;
        Ok(splits)
    }

    fn compute_splits(&self, annotations: &AnnotationStore, previous: &SplitAssignment) -> Result<SplitAssignment> {
        match assign_splits(annotations, self.config.seed, self.config.eval_fraction, Some(previous)) {
            Ok(s) => Ok(s),
            Err(Error::InsufficientAnnotations { .. }) => Ok(previous.clone()),
            Err(e) => Err(e),
        }
    }

    pub fn train_lfs(&self) -> Result<ModelManifest> {
        let round = self.workspace.load_round()?.round;
        let corpus = self.workspace.load_corpus()?;
        let annotations = self.workspace.load_annotations()?;
        let splits = self.workspace.load_splits()?;
        self.train_round(round, &corpus, &annotations, &splits)
    }

    fn train_round(
        &self,
        round: u32,
        corpus: &Corpus,
        annotations: &AnnotationStore,
        splits: &SplitAssignment,
    ) -> Result<ModelManifest> {
        let feature_specs: Vec<LabelingFunctionSpec> =
            self.specs().into_iter().filter(|s| s.kind == LfKind::FeatureModel).collect();
        let params = TrainingParams::default();
        let trained: Vec<(String, Result<FeatureModel>)> = feature_specs
            .par_iter()
            .map(|s| {
                let fold = s.fold.expect("feature spec has a fold");
                let source = s.feature_source.expect("feature spec has a source");
                (s.lf_id.clone(), train_feature_lf(corpus, annotations, splits, fold, source, &params))
            })
            .collect();
        let dir = self.workspace.model_dir(round);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut lfs = Vec::new();
        for (lf_id, result) in trained {
            match result {
                Ok(model) => {
                    let file = format!("{lf_id}.json");
                    model.save(dir.join(&file))?;
                    lfs.push(ManifestEntry {
                        lf_id,
                        trained: true,
                        file: Some(file),
                        reason: None,
                    });
                }
                Err(e @ (Error::EmptyFold { .. } | Error::DegenerateFold { .. })) => lfs.push(ManifestEntry {
                    lf_id,
                    trained: false,
                    file: None,
                    reason: Some(e.to_string()),
                }),
                Err(e) => return Err(e),
            }
        }
        let manifest = ModelManifest { round, lfs };
        write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }

    fn load_feature_lfs(&self, round: u32) -> Result<Option<HashMap<String, FeatureLf>>> {
        let dir = self.workspace.model_dir(round);
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ModelManifest = serde_json::from_str(&text)?;
        let mut out = HashMap::new();
        for entry in manifest.lfs {
            let lf = match (&entry.file, entry.trained) {
                (Some(file), true) => FeatureLf::Trained(FeatureModel::load(dir.join(file))?),
                _ => FeatureLf::Untrained {
                    reason: entry.reason.clone().unwrap_or_default(),
                },
            };
            out.insert(entry.lf_id, lf);
        }
        Ok(Some(out))
    }

    fn build_matrix(
        &self,
        state: &RoundState,
        corpus: &Corpus,
        annotations: &AnnotationStore,
        splits: &SplitAssignment,
    ) -> Result<LabelMatrix> {
        let features = match self.load_feature_lfs(state.round)? {
            Some(f) => f,
            None => {
                self.train_round(state.round, corpus, annotations, splits)?;
                self.load_feature_lfs(state.round)?.unwrap_or_default()
            }
        };
        let mut external = HashMap::new();
        for e in &self.config.external {
            external.insert(e.lf_id.clone(), ExternalPredictions::load(&e.path)?);
        }
        let resources = LfResources {
            grammar: Some(&self.grammar),
            features,
            external,
            bias: Some(bias_lf(state.bias_rate, self.config.bias_prior_init)),
        };
        build_label_matrix(corpus, &self.specs(), &resources, splits)
    }

    /// `(row, label)` for annotated documents in the given parts.
    fn labeled_rows(
        matrix: &LabelMatrix,
        annotations: &AnnotationStore,
        keep: impl Fn(&str) -> bool,
    ) -> Vec<(usize, u8)> {
        matrix
            .doc_ids()
            .iter()
            .enumerate()
            .filter(|(_, id)| keep(id))
            .filter_map(|(i, id)| annotations.current(id).map(|r| (i, r.label)))
            .collect()
    }

    /// Builds the label matrix and fits the label model for the current
    /// round. Calibration uses annotated training-fold documents only.
    pub fn fit(&self) -> Result<ModelState> {
        let state = self.workspace.load_round()?;
        let corpus = self.workspace.load_corpus()?;
        let annotations = self.workspace.load_annotations()?;
        let splits = self.workspace.load_splits()?;
        self.fit_round(&state, &corpus, &annotations, &splits)
    }

    fn fit_round(
        &self,
        state: &RoundState,
        corpus: &Corpus,
        annotations: &AnnotationStore,
        splits: &SplitAssignment,
    ) -> Result<ModelState> {
        let matrix = self.build_matrix(state, corpus, annotations, splits)?;
        let labeled = Self::labeled_rows(&matrix, annotations, |id| splits.is_training(id));
        let model = ModelState::fit(&matrix, &self.config.model_params(), &labeled, state.round)?;
        let dir = self.workspace.state_dir(state.round);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_atomic(&self.workspace.matrix_path(state.round), matrix.to_tsv().as_bytes())?;
        model.save(self.workspace.model_state_path(state.round))?;
        Ok(model)
    }

    fn load_model(&self, round: u32) -> Result<(ModelState, LabelMatrix)> {
        let path = self.workspace.model_state_path(round);
        if !path.exists() {
            return Err(Error::NoModelState(round));
        }
        Ok((ModelState::load(path)?, LabelMatrix::load(self.workspace.matrix_path(round))?))
    }

    /// Scores every document with the current round's model and writes the
    /// predictions file. Updates the stored positive rate.
    pub fn predict(&self) -> Result<Vec<SelectionCandidate>> {
        let mut state = self.workspace.load_round()?;
        let annotations = self.workspace.load_annotations()?;
        let splits = self.workspace.load_splits()?;
        let candidates = self.predict_round(&mut state, &annotations, &splits)?;
        self.workspace.save_round(&state)?;
        Ok(candidates)
    }

    fn predict_round(
        &self,
        state: &mut RoundState,
        annotations: &AnnotationStore,
        splits: &SplitAssignment,
    ) -> Result<Vec<SelectionCandidate>> {
        let (model, matrix) = self.load_model(state.round)?;
        let predictions = model.predict(&matrix)?;
        let labeled = Self::labeled_rows(&matrix, annotations, |id| splits.is_training(id));
        let iqr = masked_iqr(
            &matrix,
            &model.accuracies(),
            &labeled,
            self.config.mask_runs,
            self.config.mask_fraction,
            self.round_seed(state.round),
        )?;
        let t = self.config.threshold;
        let candidates: Vec<SelectionCandidate> = matrix
            .doc_ids()
            .iter()
            .zip(predictions.iter().zip(iqr))
            .map(|(id, (pred, iqr))| SelectionCandidate {
                doc_id: id.clone(),
                p: pred.p,
                x: pred.x,
                dist: distance_to_threshold(pred.p, t),
                iqr,
                rank: 0,
            })
            .collect();
        write_candidates(self.workspace.predictions_path(state.round), &candidates, state.round)?;
        let positives = candidates.iter().filter(|c| c.p >= t).count();
        state.positive_rate = Some(if candidates.is_empty() {
            0.0
        } else {
            positives as f64 / candidates.len() as f64
        });
        Ok(candidates)
    }

    /// Scores documents and writes the next annotation batch for the
    /// current round.
    pub fn select(&self) -> Result<Vec<SelectionCandidate>> {
        let mut state = self.workspace.load_round()?;
        let annotations = self.workspace.load_annotations()?;
        let splits = self.workspace.load_splits()?;
        let batch = self.select_round(&mut state, &annotations, &splits)?;
        self.workspace.save_round(&state)?;
        Ok(batch)
    }

    fn select_round(
        &self,
        state: &mut RoundState,
        annotations: &AnnotationStore,
        splits: &SplitAssignment,
    ) -> Result<Vec<SelectionCandidate>> {
        let candidates = self.predict_round(state, annotations, splits)?;
        let annotated: BTreeSet<String> = annotations.annotated_ids().map(String::from).collect();
        let batch = select_batch(&candidates, self.config.batch_size, &annotated);
        write_candidates(self.workspace.batch_path(state.round), &batch, state.round)?;
        Ok(batch)
    }

    /// Starts the next round: extends the splits, retrains the fold models,
    /// refits the label model, rescores every document and selects a new
    /// batch. The round state is written last, so a failure leaves the
    /// previous round current.
    pub fn advance_round(&self) -> Result<RoundSummary> {
        let _lock = AdvanceLock::acquire(self.workspace.lock_path())?;
        let previous = self.workspace.load_round()?;
        let corpus = self.workspace.load_corpus()?;
        let annotations = self.workspace.load_annotations()?;
        let splits = self.compute_splits(&annotations, &self.workspace.load_splits()?)?;

        let mut state = RoundState {
            round: previous.round + 1,
            bias_rate: previous.positive_rate.or(previous.bias_rate),
            positive_rate: None,
            last_eval: previous.last_eval,
        };
        write_json(&self.workspace.splits_path(), &splits)?;
        self.train_round(state.round, &corpus, &annotations, &splits)?;
        let model = self.fit_round(&state, &corpus, &annotations, &splits)?;
        let batch = self.select_round(&mut state, &annotations, &splits)?;
        self.workspace.save_round(&state)?;
        Ok(RoundSummary {
            round: state.round,
            annotated: annotations.len(),
            bias_rate: bias_lf(state.bias_rate, self.config.bias_prior_init).value(),
            positive_rate: state.positive_rate.unwrap_or(0.0),
            batch_size: batch.len(),
            accuracies: model.lfs.iter().map(|l| (l.lf_id.clone(), l.accuracy)).collect(),
        })
    }

    fn current_predictions(&self, state: &mut RoundState) -> Result<Vec<SelectionCandidate>> {
        let path = self.workspace.predictions_path(state.round);
        if path.exists() {
            return read_candidates(path);
        }
        let annotations = self.workspace.load_annotations()?;
        let splits = self.workspace.load_splits()?;
        self.predict_round(state, &annotations, &splits)
    }

    /// Scores the current round's predictions against the annotated
    /// evaluation set and stores the result as the latest evaluation.
    pub fn evaluate(&self) -> Result<(EvalSummary, Roc)> {
        let mut state = self.workspace.load_round()?;
        let predictions = self.current_predictions(&mut state)?;
        let annotations = self.workspace.load_annotations()?;
        let splits = self.workspace.load_splits()?;
        let mut scores = Vec::new();
        let mut truth = Vec::new();
        for c in &predictions {
            if splits.eval_set.contains(&c.doc_id) {
                if let Some(r) = annotations.current(&c.doc_id) {
                    scores.push(c.p);
                    truth.push(r.label);
                }
            }
        }
        if scores.is_empty() {
            return Err(Error::InvalidArgument("evaluation set has no annotated documents".into()));
        }
        let (summary, roc) = evaluate(&scores, &truth, self.config.threshold)?;
        state.last_eval = Some(summary);
        self.workspace.save_round(&state)?;
        Ok((summary, roc))
    }

    /// Ablation by labeling-function group on the current round's matrix.
    pub fn ablate(&self) -> Result<AblationReport> {
        let state = self.workspace.load_round()?;
        let (_, matrix) = self.load_model(state.round)?;
        let annotations = self.workspace.load_annotations()?;
        let splits = self.workspace.load_splits()?;
        let labeled = Self::labeled_rows(&matrix, &annotations, |id| splits.is_training(id));
        let eval = Self::labeled_rows(&matrix, &annotations, |id| splits.eval_set.contains(id));
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for s in self.specs() {
            groups.entry(s.group).or_default().push(s.lf_id);
        }
        ablate(&matrix, &groups, &self.config.model_params(), &labeled, &eval)
    }

    pub fn terms(&self) -> Result<TermReport> {
        Ok(term_frequency_report(&self.workspace.load_corpus()?, &self.grammar))
    }

    /// Compares documents called relevant in the current round (annotation
    /// when present, otherwise prediction at the threshold) with the rest.
    pub fn enrich(&self, feature: EnrichmentFeature) -> Result<Vec<EnrichmentRow>> {
        let mut state = self.workspace.load_round()?;
        let predictions = self.current_predictions(&mut state)?;
        let corpus = self.workspace.load_corpus()?;
        let annotations = self.workspace.load_annotations()?;
        let p: HashMap<&str, f64> = predictions.iter().map(|c| (c.doc_id.as_str(), c.p)).collect();
        let (target, background): (Vec<&Document>, Vec<&Document>) = corpus.iter().partition(|d| {
            match annotations.current(&d.id) {
                Some(r) => r.label == 1,
                None => p.get(d.id.as_str()).is_some_and(|&v| v >= self.config.threshold),
            }
        });
        enrichment_report(&target, &background, feature)
    }
}
