//! JSON parameter checkpoints.
//!
//! ```json
//! {"format": "tkg-decay-params", "version": 1,
//!  "model": {...}, "entities": [...], "relations": [...],
//!  "params": {"entity": {"shape": [n, d], "data": [...]}, ...}}
//! ```
//!
//! `data` is row-major. Entity and relation names are stored so a checkpoint
//! can be applied to a dataset whose ids were assigned in another order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tkg_decay_core::dataset::{EntityId, RelationId, Vocab};
use tkg_decay_core::model::{Model, ModelConfig};
use tkg_decay_core::nd::{ParamStore, Tensor};

use crate::error::{Error, Result};

pub const FORMAT: &str = "tkg-decay-params";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, vocab: &Vocab) -> Self {
        let params = model
            .store
            .iter()
            .map(|(_, name, t)| {
                (
                    name.to_string(),
                    StoredTensor {
                        shape: t.shape(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            model: model.config.clone(),
            entities: (0..vocab.num_entities() as u32)
                .map(|i| vocab.entity_name(EntityId(i)).to_string())
                .collect(),
            relations: (0..vocab.num_relations() as u32)
                .map(|i| vocab.relation_name(RelationId(i)).to_string())
                .collect(),
            params,
        }
    }

    /// Rebuilds the model for `vocab`, reordering embedding rows by name.
    pub fn into_model(self, vocab: &Vocab) -> std::result::Result<Model, String> {
        let mut store = ParamStore::new();
        for (name, t) in &self.params {
            let [rows, cols] = t.shape;
            let tensor = Tensor::new(rows, cols, t.data.clone()).map_err(|e| format!("parameter `{name}`: {e}"))?;
            let tensor = match name.as_str() {
                "entity" => remap(&tensor, &self.entities, vocab.num_entities(), |i| {
                    vocab.entity_name(EntityId(i as u32))
                })?,
                "relation" => remap(&tensor, &self.relations, vocab.num_relations(), |i| {
                    vocab.relation_name(RelationId(i as u32))
                })?,
                _ => tensor,
            };
            store.insert(name, tensor);
        }
        Model::from_params(self.model, store, vocab.num_entities(), vocab.num_relations()).map_err(|e| e.to_string())
    }
}

fn remap<'a>(
    table: &Tensor,
    names: &[String],
    n: usize,
    name_of: impl Fn(usize) -> &'a str,
) -> std::result::Result<Tensor, String> {
    if table.rows() != names.len() {
        return Err(format!("{} embedding rows for {} names", table.rows(), names.len()));
    }
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut data = Vec::with_capacity(n * table.cols());
    for i in 0..n {
        let name = name_of(i);
        let row = index
            .get(name)
            .ok_or_else(|| format!("`{name}` is not in the checkpoint vocabulary"))?;
        data.extend_from_slice(table.row(*row));
    }
    Tensor::new(n, table.cols(), data).map_err(|e| e.to_string())
}

pub fn save(path: &Path, model: &Model, vocab: &Vocab) -> Result<()> {
    crate::report::write_json(path, &Checkpoint::from_model(model, vocab))
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fmt = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| fmt(e.to_string()))?;
    if ck.format != FORMAT || ck.version != VERSION {
        return Err(fmt(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
    }
    Ok(ck)
}

/// Reads a checkpoint and binds it to `vocab`.
pub fn load(path: &Path, vocab: &Vocab) -> Result<Model> {
    read(path)?.into_model(vocab).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}
