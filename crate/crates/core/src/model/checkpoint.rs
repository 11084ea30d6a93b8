use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tape::Mat, ModelConfig, Parameters};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "vap-engine-checkpoint";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

/// On-disk parameter container: format tag, version, config echo and named
/// row-major tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    version: u32,
    pub config: ModelConfig,
    /// Free-form provenance, e.g. the augmentation mode.
    #[serde(default)]
    pub note: String,
    tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_parameters(p: &Parameters, note: impl Into<String>) -> Self {
        Self {
            format: FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: p.config().clone(),
            note: note.into(),
            tensors: p
                .names()
                .iter()
                .zip(p.tensors())
                .map(|(name, t)| NamedTensor {
                    name: name.clone(),
                    shape: [t.nrows(), t.ncols()],
                    data: t.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn into_parameters(self) -> Result<Parameters> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format tag '{}'", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let named = self
            .tensors
            .into_iter()
            .map(|t| {
                Mat::from_shape_vec((t.shape[0], t.shape[1]), t.data)
                    .map(|m| (t.name.clone(), m))
                    .map_err(|e| Error::Checkpoint(format!("tensor '{}': {e}", t.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        Parameters::from_named(&self.config, named)
    }
}

pub fn save_checkpoint(p: &Parameters, note: &str, path: impl AsRef<Path>) -> Result<()> {
    let ck = Checkpoint::from_parameters(p, note);
    std::fs::write(path, serde_json::to_vec(&ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Parameters, String)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
    let note = ck.note.clone();
    Ok((ck.into_parameters()?, note))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let p = Parameters::init(&ModelConfig {
            seed: 12,
            ..ModelConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&p, "mc", &path).unwrap();
        let (back, note) = load_checkpoint(&path).unwrap();
        assert_eq!(back, p);
        assert_eq!(note, "mc");
    }

    #[test]
    fn rejects_tampered_checkpoints() {
        let p = Parameters::init(&ModelConfig::default()).unwrap();
        let mut ck = Checkpoint::from_parameters(&p, "");
        ck.version = 99;
        assert!(ck.into_parameters().is_err());
        let mut ck = Checkpoint::from_parameters(&p, "");
        ck.tensors[0].shape = [1, 1];
        assert!(ck.into_parameters().is_err());
        let mut ck = Checkpoint::from_parameters(&p, "");
        ck.tensors.pop();
        assert!(ck.into_parameters().is_err());
        assert!(matches!(
            load_checkpoint("/nonexistent/ck.json"),
            Err(Error::MissingFile(_))
        ));
    }
}
