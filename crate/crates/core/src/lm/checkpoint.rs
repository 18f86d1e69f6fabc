use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::ModelConfig;
use crate::dataset::LabelSchema;
use crate::error::{Error, Result};
use crate::hash::content_hash;

pub const CHECKPOINT_FORMAT: &str = "qdtile-checkpoint/1";

/// First line of a checkpoint file: JSON, then `param_count` little-endian
/// f32 values in [`ParamIndex`](super::ParamIndex) order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: ModelConfig,
    pub step: usize,
    pub height: usize,
    pub width: usize,
    pub dataset_id: String,
    pub catalog_hash: String,
    pub schema_hash: String,
    pub label_schema: LabelSchema,
    pub dtype: String,
    pub param_count: usize,
    pub param_hash: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model<f32>,
}

fn param_bytes(params: &[f32]) -> Vec<u8> {
    params.iter().flat_map(|p| p.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn new(
        model: Model<f32>,
        step: usize,
        height: usize,
        width: usize,
        dataset_id: &str,
        catalog_hash: &str,
        label_schema: &LabelSchema,
    ) -> Self {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            config: model.config.clone(),
            step,
            height,
            width,
            dataset_id: dataset_id.into(),
            catalog_hash: catalog_hash.into(),
            schema_hash: label_schema.hash(),
            label_schema: label_schema.clone(),
            dtype: "f32le".into(),
            param_count: model.params.len(),
            param_hash: content_hash(&param_bytes(&model.params)),
        };
        Checkpoint { header, model }
    }

    /// Hash identifying this checkpoint in reports and manifests.
    pub fn hash(&self) -> &str {
        &self.header.param_hash
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        w.write_all(&param_bytes(&self.model.params))?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end()).map_err(|e| Error::parse(1, e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format {:?}", header.format)));
        }
        if header.dtype != "f32le" {
            return Err(Error::Config(format!("unsupported dtype {:?}", header.dtype)));
        }
        let expected = header.config.param_count();
        if header.param_count != expected {
            return Err(Error::Shape {
                expected: format!("{expected} parameters for the stored config"),
                got: format!("{}", header.param_count),
            });
        }
        let mut bytes = Vec::with_capacity(expected * 4);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != expected * 4 {
            return Err(Error::Shape {
                expected: format!("{} parameter bytes", expected * 4),
                got: format!("{}", bytes.len()),
            });
        }
        let found = content_hash(&bytes);
        if found != header.param_hash {
            return Err(Error::HashMismatch {
                what: "parameter",
                expected: header.param_hash.clone(),
                found,
            });
        }
        let schema = header.label_schema.hash();
        if schema != header.schema_hash {
            return Err(Error::HashMismatch {
                what: "label schema",
                expected: header.schema_hash.clone(),
                found: schema,
            });
        }
        let params = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let model = Model::from_params(header.config.clone(), params)?;
        Ok(Checkpoint { header, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }

    /// Fails unless the checkpoint was trained against this catalog and schema.
    pub fn check_compat(&self, catalog_hash: &str, schema_hash: Option<&str>) -> Result<()> {
        if self.header.catalog_hash != catalog_hash {
            return Err(Error::HashMismatch {
                what: "catalog",
                expected: catalog_hash.into(),
                found: self.header.catalog_hash.clone(),
            });
        }
        if let Some(s) = schema_hash {
            if self.header.schema_hash != s {
                return Err(Error::HashMismatch {
                    what: "label schema",
                    expected: s.into(),
                    found: self.header.schema_hash.clone(),
                });
            }
        }
        Ok(())
    }
}
