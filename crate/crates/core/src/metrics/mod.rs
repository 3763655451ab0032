//! Evaluation metrics: reconstruction accuracy, point-cloud set metrics and
//! the Fréchet distance on embeddings. Every fast path has a brute-force
//! oracle next to it in the tests.

pub mod chamfer;
pub mod fid;
pub mod gen;
pub mod recon;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions vs {1} references")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
}

/// A reported metric value together with the protocol that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    /// Per-repeat values when the protocol repeats; singleton otherwise.
    pub repeats: Vec<f64>,
    /// Sample standard deviation over repeats (when more than one).
    pub std_dev: Option<f64>,
    /// Protocol parameters: set sizes, point counts, seeds, eta, grids.
    pub protocol: BTreeMap<String, serde_json::Value>,
}

impl MetricReport {
    pub fn single(name: &str, value: f64) -> Self {
        MetricReport {
            name: name.to_string(),
            value,
            repeats: vec![value],
            std_dev: None,
            protocol: BTreeMap::new(),
        }
    }

    pub fn repeated(name: &str, repeats: Vec<f64>) -> Self {
        assert!(!repeats.is_empty());
        let mean = repeats.iter().sum::<f64>() / repeats.len() as f64;
        let std_dev = if repeats.len() > 1 {
            let var = repeats.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (repeats.len() - 1) as f64;
            Some(var.sqrt())
        } else {
            None
        };
        MetricReport { name: name.to_string(), value: mean, repeats, std_dev, protocol: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.protocol.insert(key.to_string(), value.into());
        self
    }
}
