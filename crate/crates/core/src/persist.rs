//! Saving and loading trained models as JSON. Parameters are stored as
//! base64 little-endian `f64`, so a round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::data::TextVectorizer;
use crate::error::{Error, Result};
use crate::nn::{Model, ModelSpec};
use crate::tensor::Tensor;

pub const MODEL_FORMAT: &str = "privaudit-model/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredParam {
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredModel {
    format: String,
    spec: ModelSpec,
    params: Vec<StoredParam>,
    #[serde(default)]
    vectorizer: Option<TextVectorizer>,
}

/// A model plus the text vectorizer it was trained with, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub model: Model,
    pub vectorizer: Option<TextVectorizer>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(path: &Path, text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::format(path, 0, format!("parameter data: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(
            path,
            0,
            "parameter data is not a whole number of f64",
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn save_model(
    model: &Model,
    vectorizer: Option<&TextVectorizer>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let stored = StoredModel {
        format: MODEL_FORMAT.to_string(),
        spec: model.spec().clone(),
        params: model
            .params()
            .iter()
            .map(|t| StoredParam {
                shape: t.shape().to_vec(),
                data: encode(t.data()),
            })
            .collect(),
        vectorizer: vectorizer.cloned(),
    };
    let text = serde_json::to_string(&stored)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::DataNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stored: StoredModel = serde_json::from_str(&text).map_err(|e| {
        Error::format(
            path,
            0,
            format!("line {} column {}: {e}", e.line(), e.column()),
        )
    })?;
    if stored.format != MODEL_FORMAT {
        return Err(Error::format(
            path,
            0,
            format!(
                "unsupported format {:?}, expected {MODEL_FORMAT:?}",
                stored.format
            ),
        ));
    }
    let params = stored
        .params
        .iter()
        .map(|p| Tensor::new(p.shape.clone(), decode(path, &p.data)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(SavedModel {
        model: Model::from_params(stored.spec, params)?,
        vectorizer: stored.vectorizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fit_vectorizer;
    use crate::nn::init_model;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = init_model(&ModelSpec::mlp(3, &[4], 2), 5).unwrap();
        let v = fit_vectorizer(&["a b", "b c"], 10, 4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_model(&model, Some(&v), &p).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.vectorizer, Some(v));
    }

    #[test]
    fn wrong_format_or_shapes_are_rejected() {
        let model = init_model(&ModelSpec::mlp(3, &[], 2), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_model(&model, None, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.replace(MODEL_FORMAT, "other/9")).unwrap();
        assert!(matches!(load_model(&p), Err(Error::Format { .. })));

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["params"][0]["shape"] = serde_json::json!([1, 6]);
        std::fs::write(&p, doc.to_string()).unwrap();
        assert!(load_model(&p).is_err());
        assert!(matches!(
            load_model(dir.path().join("none.json")),
            Err(Error::DataNotFound(_))
        ));
    }
}
