//! JSON model files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, Variant};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk layout of a model. Floats are written in shortest round-trip form,
/// so save followed by load is value-exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub variant: Variant,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub params: BTreeMap<String, TensorRecord>,
}

impl From<&ModelParams> for ModelFile {
    fn from(p: &ModelParams) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            variant: p.variant,
            embed_dim: p.embed_dim,
            hidden_dim: p.hidden_dim,
            seed: p.seed,
            params: p
                .tensors()
                .iter()
                .map(|(name, t)| {
                    let record = TensorRecord {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    };
                    (name.clone(), record)
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for ModelParams {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format {
                offset: 0,
                message: format!(
                    "unsupported model format_version {} (expected {MODEL_FORMAT_VERSION})",
                    file.format_version
                ),
            });
        }
        let tensors = file
            .params
            .into_iter()
            .map(|(name, rec)| Ok((name, Tensor::new(rec.shape, rec.data)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        ModelParams::from_tensors(file.variant, file.embed_dim, file.hidden_dim, file.seed, tensors)
    }
}

impl ModelParams {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&ModelFile::from(self)).map_err(|source| Error::Json {
            context: "serializing model".into(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "parsing model".into(),
            source,
        })?;
        file.try_into()
    }
}

pub fn save_model(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, params.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelParams::from_json(&text).map_err(|e| match e {
        Error::Json { source, .. } => Error::Json {
            context: path.display().to_string(),
            source,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_value_exact() {
        for variant in Variant::ALL {
            let p = ModelParams::init(variant, 5, 6, 42).unwrap();
            let back = ModelParams::from_json(&p.to_json().unwrap()).unwrap();
            assert_eq!(p, back);
        }
    }

    #[test]
    fn file_fields() {
        let p = ModelParams::init(Variant::AraO, 3, 4, u64::MAX).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["variant"], "ara-o");
        assert_eq!(v["embed_dim"], 3);
        assert_eq!(v["hidden_dim"], 4);
        assert_eq!(v["seed"].as_u64(), Some(u64::MAX));
        assert_eq!(v["params"]["lstm.fwd.w"]["shape"], serde_json::json!([5, 8]));
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let p = ModelParams::init(Variant::Ara, 3, 4, 1).unwrap();
        let mut file = ModelFile::from(&p);
        file.format_version = 2;
        assert!(ModelParams::try_from(file.clone()).is_err());
        file.format_version = 1;
        file.params.get_mut("rating.v").unwrap().shape = vec![1, 3];
        assert!(matches!(ModelParams::try_from(file), Err(Error::Dimension { .. })));
    }
}
