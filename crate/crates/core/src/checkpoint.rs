//! Checkpoint directory: `manifest.json`, `vocab.txt`, `relations.txt` and one raw
//! little-endian f64 array per parameter group (`<group>.f64`, row-major).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{Mode, Scoring};
use crate::corpus::{RelationSchema, Vocab};
use crate::encoder::{EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::gradcheck::ParamGroups;
use crate::model::{ModelDims, ModelParams, GROUPS};
use crate::numeric::Matrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub filters: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub relations: usize,
    pub max_len: usize,
    pub clip: usize,
    pub window: usize,
    pub vocab: usize,
    pub keep_prob: f64,
    pub mode: Mode,
    pub scoring: Scoring,
    pub seed: u64,
    pub epoch: usize,
}

impl Manifest {
    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            encoder: EncoderDims {
                vocab: self.vocab,
                word_dim: self.word_dim,
                pos_dim: self.pos_dim,
                window: self.window,
                filters: self.filters,
                clip: self.clip,
            },
            relations: self.relations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ModelParams,
    pub vocab: Vocab,
    pub schema: RelationSchema,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: ModelParams,
        vocab: Vocab,
        schema: RelationSchema,
        max_len: usize,
        mode: Mode,
        scoring: Scoring,
        seed: u64,
        epoch: usize,
    ) -> Result<Self> {
        let d = params.dims();
        if vocab.len() != d.encoder.vocab || schema.len() != d.relations {
            return Err(Error::Checkpoint(format!(
                "vocab/relations ({}, {}) do not match parameter shapes ({}, {})",
                vocab.len(),
                schema.len(),
                d.encoder.vocab,
                d.relations
            )));
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            filters: d.encoder.filters,
            word_dim: d.encoder.word_dim,
            pos_dim: d.encoder.pos_dim,
            relations: d.relations,
            max_len,
            clip: d.encoder.clip,
            window: d.encoder.window,
            vocab: d.encoder.vocab,
            keep_prob: params.keep_prob,
            mode,
            scoring,
            seed,
            epoch,
        };
        Ok(Checkpoint {
            manifest,
            params,
            vocab,
            schema,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        json.push('\n');
        fs::write(dir.join("manifest.json"), json)?;
        self.vocab.write(&dir.join("vocab.txt"))?;
        self.schema.write(&dir.join("relations.txt"))?;
        for (i, name) in GROUPS.iter().enumerate() {
            let bytes: Vec<u8> = self
                .params
                .group(i)
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            fs::write(dir.join(format!("{name}.f64")), bytes)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("manifest.json: {e}")))?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(FORMAT_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {version:?}, expected {FORMAT_VERSION}"
            )));
        }
        let manifest: Manifest =
            serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("manifest.json: {e}")))?;
        let vocab = Vocab::read(&dir.join("vocab.txt"))?;
        let schema = RelationSchema::load(&dir.join("relations.txt"))?;
        if vocab.len() != manifest.vocab || schema.len() != manifest.relations {
            return Err(Error::Checkpoint(format!(
                "vocab.txt/relations.txt sizes ({}, {}) disagree with manifest ({}, {})",
                vocab.len(),
                schema.len(),
                manifest.vocab,
                manifest.relations
            )));
        }

        let dims = manifest.model_dims();
        let d = dims.feature_dim();
        let mut params = ModelParams {
            encoder: EncoderParams {
                dims: dims.encoder,
                word_emb: Matrix::zeros(dims.encoder.vocab, dims.encoder.word_dim),
                pos_emb1: Matrix::zeros(
                    crate::corpus::position_table_size(manifest.clip),
                    manifest.pos_dim,
                ),
                pos_emb2: Matrix::zeros(
                    crate::corpus::position_table_size(manifest.clip),
                    manifest.pos_dim,
                ),
                filters: Matrix::zeros(manifest.filters, dims.encoder.filter_len()),
                bias: vec![0.0; manifest.filters],
            },
            relations: Matrix::zeros(manifest.relations, d),
            output: Matrix::zeros(manifest.relations, d),
            keep_prob: manifest.keep_prob,
        };
        for (i, name) in GROUPS.iter().enumerate() {
            let file = format!("{name}.f64");
            let bytes = fs::read(dir.join(&file))?;
            let target = params.group_mut(i);
            if bytes.len() != target.len() * 8 {
                return Err(Error::Checkpoint(format!(
                    "{file}: {} bytes, expected {}",
                    bytes.len(),
                    target.len() * 8
                )));
            }
            for (dst, chunk) in target.iter_mut().zip(bytes.chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("parameters contain non-finite values".into()));
        }
        Ok(Checkpoint {
            manifest,
            params,
            vocab,
            schema,
        })
    }
}
