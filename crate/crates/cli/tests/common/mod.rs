#![allow(dead_code)]

use std::path::PathBuf;

use tempfile::TempDir;
use weaksift_core::config::{Config, ExternalLf};
use weaksift_core::corpus::write_jsonl;
use weaksift_core::synthetic::{generate_corpus, CorpusParams, SyntheticCorpus};

/// Corpus, external predictions and a config file in a temporary directory.
pub struct Inputs {
    pub dir: TempDir,
    pub corpus: SyntheticCorpus,
    pub config: Config,
    pub config_path: PathBuf,
    pub corpus_path: PathBuf,
}

pub fn inputs(n: usize, corpus_seed: u64, token: Option<&str>) -> Inputs {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusParams {
        n,
        seed: corpus_seed,
        ..Default::default()
    })
    .unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    write_jsonl(&corpus.corpus, &corpus_path).unwrap();
    let mut config = Config {
        data_dir: dir.path().join("work"),
        seed: 3,
        ..Config::default()
    };
    config.service.token = token.map(String::from);
    for (id, preds) in &corpus.external {
        let path = dir.path().join(format!("{id}.csv"));
        preds.save(&path).unwrap();
        config.external.push(ExternalLf {
            lf_id: id.clone(),
            group: id.clone(),
            path,
        });
    }
    let config_path = dir.path().join("weaksift.toml");
    std::fs::write(&config_path, toml::to_string(&config).unwrap()).unwrap();
    Inputs {
        dir,
        corpus,
        config,
        config_path,
        corpus_path,
    }
}
