//! JSON checkpoints: config snapshot plus flat parameter arrays.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::model::{ParamId, ParamStore, ToyModelConfig};
use crate::tensor::{Scalar, Tensor};
use crate::AugmentError;

pub const CHECKPOINT_FORMAT: &str = "spanqa-toy-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ToyModelConfig,
    pub params: Vec<ParamEntry>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(config: &ToyModelConfig, params: &ParamStore<T>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            params: ParamId::ALL
                .iter()
                .map(|&p| {
                    let t = params.get(p);
                    ParamEntry {
                        name: p.name().to_string(),
                        rows: t.rows(),
                        cols: t.cols(),
                        data: t.data().iter().map(|v| v.as_f64()).collect(),
                    }
                })
                .collect(),
        }
    }

    pub fn params<T: Scalar>(&self) -> Result<ParamStore<T>, AugmentError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(AugmentError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut tensors = Vec::with_capacity(ParamId::ALL.len());
        for p in ParamId::ALL {
            let e = self
                .params
                .iter()
                .find(|e| e.name == p.name())
                .ok_or_else(|| AugmentError::Checkpoint(format!("missing parameter {}", p.name())))?;
            if e.data.len() != e.rows * e.cols {
                return Err(AugmentError::Checkpoint(format!(
                    "{} data does not match its shape",
                    e.name
                )));
            }
            tensors.push(Tensor::from_vec(
                e.rows,
                e.cols,
                e.data.iter().map(|&v| T::of(v)).collect(),
            ));
        }
        if self.params.len() != ParamId::ALL.len() {
            return Err(AugmentError::Checkpoint("unexpected extra parameters".into()));
        }
        ParamStore::from_tensors(&self.config, tensors)
    }

    pub fn write<W: Write>(&self, sink: W) -> Result<(), AugmentError> {
        serde_json::to_writer(sink, self).map_err(|e| AugmentError::Checkpoint(e.to_string()))
    }

    pub fn read<R: Read>(source: R) -> Result<Self, AugmentError> {
        serde_json::from_reader(source).map_err(|e| AugmentError::Checkpoint(e.to_string()))
    }
}
