#![allow(dead_code)]

use std::path::Path;

use tempfile::TempDir;
use weaksift_core::config::{Config, ExternalLf};
use weaksift_core::corpus::write_jsonl;
use weaksift_core::pipeline::{InputFormat, Pipeline};
use weaksift_core::synthetic::{generate_corpus, CorpusParams, SyntheticCorpus};

/// A synthetic corpus ingested into a fresh workspace, with the external
/// predictions written next to it and registered in the config.
pub struct SimWorkspace {
    pub dir: TempDir,
    pub pipeline: Pipeline,
    pub corpus: SyntheticCorpus,
}

pub fn write_inputs(dir: &Path, corpus: &SyntheticCorpus, seed: u64) -> Config {
    let input = dir.join("corpus.jsonl");
    write_jsonl(&corpus.corpus, &input).unwrap();
    let mut config = Config {
        data_dir: dir.join("work"),
        seed,
        ..Config::default()
    };
    for (id, preds) in &corpus.external {
        let path = dir.join(format!("{id}.csv"));
        preds.save(&path).unwrap();
        config.external.push(ExternalLf {
            lf_id: id.clone(),
            group: id.clone(),
            path,
        });
    }
    config
}

pub fn sim_workspace(n: usize, corpus_seed: u64, seed: u64) -> SimWorkspace {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusParams {
        n,
        seed: corpus_seed,
        ..Default::default()
    })
    .unwrap();
    let config = write_inputs(dir.path(), &corpus, seed);
    let pipeline = Pipeline::open(config).unwrap();
    pipeline
        .ingest(&dir.path().join("corpus.jsonl"), InputFormat::Jsonl)
        .unwrap();
    SimWorkspace { dir, pipeline, corpus }
}
