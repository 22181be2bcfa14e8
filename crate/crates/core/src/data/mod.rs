//! Labelled embedding sets, few-shot splits, file formats, and the
//! synthetic anisotropic benchmark.

mod io;
mod sampling;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureVector;

pub use io::{
    load_embeddings, read_camf, read_csv, save_camf, save_csv, write_camf, write_csv, LoadOptions,
    CAMF_MAGIC, CAMF_VERSION,
};
pub use sampling::{sample_few_shot, FewShotTask};
pub use synthetic::{bayes_oracle, gen_synthetic, OracleParams, Spectrum, SyntheticSpec};

/// Labelled features with class names. Every class has at least one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    features: Vec<FeatureVector>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    dim: usize,
    normalized: bool,
}

impl EmbeddingSet {
    pub fn new(
        features: Vec<FeatureVector>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        normalized: bool,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyFile);
        }
        if features.len() != labels.len() {
            return Err(Error::DimMismatch {
                expected: features.len(),
                found: labels.len(),
            });
        }
        let dim = features[0].dim();
        let classes = class_names.len();
        let mut counts = vec![0usize; classes];
        for (f, &l) in features.iter().zip(&labels) {
            f.check_dim(dim)?;
            if !f.is_finite() {
                return Err(Error::InvalidConfig("non-finite feature".into()));
            }
            if l >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
            counts[l] += 1;
        }
        if let Some(class) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass { class });
        }
        Ok(EmbeddingSet {
            features,
            labels,
            class_names,
            dim,
            normalized,
        })
    }

    /// Names `class_0 … class_{C−1}`.
    pub fn default_class_names(classes: usize) -> Vec<String> {
        (0..classes).map(|c| format!("class_{c}")).collect()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// L2-normalizes every feature (no-op if already flagged normalized).
    pub fn normalized(&self) -> EmbeddingSet {
        if self.normalized {
            return self.clone();
        }
        EmbeddingSet {
            features: self
                .features
                .iter()
                .map(FeatureVector::normalized)
                .collect(),
            normalized: true,
            ..self.clone()
        }
    }

    /// Sample indices grouped by class, each group in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.class_count()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Features grouped by class.
    pub fn features_by_class(&self) -> Vec<Vec<FeatureVector>> {
        self.indices_by_class()
            .into_iter()
            .map(|idx| idx.into_iter().map(|i| self.features[i].clone()).collect())
            .collect()
    }

    /// Subset keeping the full class list. Fails if a class ends up empty.
    pub fn subset(&self, indices: &[usize]) -> Result<EmbeddingSet> {
        EmbeddingSet::new(
            indices.iter().map(|&i| self.features[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_names.clone(),
            self.normalized,
        )
    }
}
