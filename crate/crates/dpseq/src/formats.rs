//! On-disk JSON schemas: model configuration files (optionally carrying a
//! fitted preprocessing transform per stream).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FittedStream, Transform};
use crate::error::{Error, Result};
use crate::model::{DistributionSpec, StreamModel};

/// One stream in a model configuration file. `transform`, when present,
/// maps raw feature rows into the model's space before the LLR is computed
/// (written by `fit`, consumed by `detect`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamEntry {
    pub stream_id: String,
    pub pre: DistributionSpec,
    pub post: DistributionSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trunc_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
}

/// A parsed model file: validated models plus their optional transforms.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub entries: Vec<StreamEntry>,
    pub models: Vec<StreamModel>,
}

impl ModelFile {
    pub fn from_entries(entries: Vec<StreamEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Data("model file has no streams".into()));
        }
        let models = entries
            .iter()
            .map(|e| StreamModel::new(e.pre.clone(), e.post.clone(), e.trunc_level))
            .collect::<Result<Vec<_>>>()?;
        for (e, m) in entries.iter().zip(&models) {
            if let Some(t) = &e.transform {
                if t.pca.retained != m.dim() {
                    return Err(Error::Data(format!(
                        "stream {}: transform outputs {} components but model has dim {}",
                        e.stream_id,
                        t.pca.retained,
                        m.dim()
                    )));
                }
            }
        }
        Ok(ModelFile { entries, models })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<StreamEntry> = serde_json::from_str(&text)?;
        Self::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn from_models(models: &[StreamModel]) -> Self {
        let entries = models
            .iter()
            .enumerate()
            .map(|(i, m)| StreamEntry {
                stream_id: format!("s{i}"),
                pre: m.pre().clone(),
                post: m.post().clone(),
                trunc_level: m.trunc_level(),
                transform: None,
            })
            .collect();
        ModelFile {
            entries,
            models: models.to_vec(),
        }
    }

    pub fn from_fitted(fitted: &[FittedStream]) -> Self {
        let entries = fitted
            .iter()
            .map(|f| StreamEntry {
                stream_id: f.id.clone(),
                pre: f.model.pre().clone(),
                post: f.model.post().clone(),
                trunc_level: Some(f.trunc_level),
                transform: Some(f.transform.clone()),
            })
            .collect();
        ModelFile {
            entries,
            models: fitted.iter().map(|f| f.model.clone()).collect(),
        }
    }

    pub fn has_transforms(&self) -> bool {
        self.entries.iter().any(|e| e.transform.is_some())
    }

    /// Width of a raw input row: transform input dims where present,
    /// model dims otherwise.
    pub fn raw_row_width(&self) -> usize {
        self.entries
            .iter()
            .zip(&self.models)
            .map(|(e, m)| match &e.transform {
                Some(t) => t.input_dim(),
                None => m.dim(),
            })
            .sum()
    }

    /// Map one raw flattened row into model space. Identity when no stream
    /// has a transform.
    pub fn apply_transforms(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if !self.has_transforms() {
            return Ok(raw.to_vec());
        }
        if raw.len() != self.raw_row_width() {
            return Err(Error::Data(format!(
                "raw row has {} values, expected {}",
                raw.len(),
                self.raw_row_width()
            )));
        }
        let mut out = Vec::new();
        let mut scratch = Vec::new();
        let mut cell = Vec::new();
        let mut off = 0usize;
        for (e, m) in self.entries.iter().zip(&self.models) {
            match &e.transform {
                Some(t) => {
                    let d = t.input_dim();
                    t.apply_row(&raw[off..off + d], &mut scratch, &mut cell);
                    out.extend_from_slice(&cell);
                    off += d;
                }
                None => {
                    let d = m.dim();
                    out.extend_from_slice(&raw[off..off + d]);
                    off += d;
                }
            }
        }
        Ok(out)
    }
}
