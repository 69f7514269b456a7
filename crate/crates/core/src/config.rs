use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::{DEFAULT_BATCH_SIZE, DEFAULT_MASK_FRACTION, DEFAULT_MASK_RUNS, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::label_model::{ModelParams, DEFAULT_ACCURACY_CLAMP, DEFAULT_WILSON_Z};
use crate::lf::{LabelingFunctionSpec, DEFAULT_BIAS_PRIOR};

/// An external predictions file used as a labeling function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalLf {
    pub lf_id: String,
    #[serde(default = "default_external_group")]
    pub group: String,
    pub path: PathBuf,
}

fn default_external_group() -> String {
    "external".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: String,
    /// When set, requests must carry it in the `x-annotation-token` header.
    pub token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            addr: "127.0.0.1:8080".into(),
            token: None,
        }
    }
}

/// Run configuration. Relative paths resolve against the directory of the
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub threshold: f64,
    pub batch_size: usize,
    pub mask_runs: usize,
    pub mask_fraction: f64,
    pub eval_fraction: f64,
    pub wilson_z: f64,
    pub accuracy_clamp_lo: f64,
    pub accuracy_clamp_hi: f64,
    pub bias_prior_init: f64,
    pub seed: u64,
    pub data_dir: PathBuf,
    /// Grammar file; the bundled grammar when unset.
    pub grammar: Option<PathBuf>,
    pub external: Vec<ExternalLf>,
    pub service: ServiceConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            threshold: DEFAULT_THRESHOLD,
            batch_size: DEFAULT_BATCH_SIZE,
            mask_runs: DEFAULT_MASK_RUNS,
            mask_fraction: DEFAULT_MASK_FRACTION,
            eval_fraction: 0.25,
            wilson_z: DEFAULT_WILSON_Z,
            accuracy_clamp_lo: DEFAULT_ACCURACY_CLAMP.0,
            accuracy_clamp_hi: DEFAULT_ACCURACY_CLAMP.1,
            bias_prior_init: DEFAULT_BIAS_PRIOR,
            seed: 0,
            data_dir: PathBuf::from("."),
            grammar: None,
            external: Vec::new(),
            service: ServiceConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.data_dir);
        if let Some(g) = self.grammar.as_mut() {
            resolve(g);
        }
        for e in &mut self.external {
            resolve(&mut e.path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail(format!("threshold must be in (0, 1), got {}", self.threshold));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.mask_runs < 2 {
            return fail(format!("mask_runs must be at least 2, got {}", self.mask_runs));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return fail(format!("mask_fraction must be in (0, 1), got {}", self.mask_fraction));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return fail(format!("eval_fraction must be in [0, 1), got {}", self.eval_fraction));
        }
        if !(self.wilson_z > 0.0) {
            return fail(format!("wilson_z must be positive, got {}", self.wilson_z));
        }
        if !(0.0 < self.accuracy_clamp_lo && self.accuracy_clamp_lo <= self.accuracy_clamp_hi && self.accuracy_clamp_hi < 1.0) {
            return fail(format!(
                "accuracy clamp must satisfy 0 < lo <= hi < 1, got [{}, {}]",
                self.accuracy_clamp_lo, self.accuracy_clamp_hi
            ));
        }
        if !(0.0..=1.0).contains(&self.bias_prior_init) {
            return fail(format!("bias_prior_init must be in [0, 1], got {}", self.bias_prior_init));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.external {
            if !seen.insert(e.lf_id.as_str()) {
                return fail(format!("duplicate external lf_id {}", e.lf_id));
            }
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            wilson_z: self.wilson_z,
            clamp_lo: self.accuracy_clamp_lo,
            clamp_hi: self.accuracy_clamp_hi,
        }
    }

    pub fn external_specs(&self) -> Vec<LabelingFunctionSpec> {
        self.external
            .iter()
            .map(|e| LabelingFunctionSpec::external(&e.lf_id, &e.group, &e.path))
            .collect()
    }
}
