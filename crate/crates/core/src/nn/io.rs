//! Versioned JSON weight files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{Activation, Dense, EdgeConv, Layer, Linear};
use super::model::GnnModel;
use super::{NnError, Tensor};
use crate::Scalar;

pub const WEIGHTS_SCHEMA_VERSION: u32 = 1;
const WEIGHTS_KIND: &str = "mvpose-gnn-weights";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRecord {
    pub input: usize,
    pub output: usize,
    /// Row-major `input x output`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerRecord {
    Dense {
        activation: Activation,
        linear: LinearRecord,
    },
    EdgeConv {
        edge_width: Option<usize>,
        residual: bool,
        self_loops: bool,
        mlp: Vec<LinearRecord>,
    },
    MaxPool,
    EdgeReadout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub schema_version: u32,
    pub kind: String,
    /// Free-form tag naming the architecture (`mmg`, `crg`, ...).
    pub architecture: String,
    pub input_width: usize,
    pub trunk: Vec<LayerRecord>,
    pub heads: Vec<Vec<LayerRecord>>,
}

fn linear_record<T: Scalar>(l: &Linear<T>) -> LinearRecord {
    LinearRecord {
        input: l.input(),
        output: l.output(),
        weight: l.weight.data().iter().map(|v| v.as_f64()).collect(),
        bias: l.bias.iter().map(|v| v.as_f64()).collect(),
    }
}

fn linear_from<T: Scalar>(r: &LinearRecord) -> Result<Linear<T>, NnError> {
    if r.weight.len() != r.input * r.output || r.bias.len() != r.output {
        return Err(NnError::Format(format!(
            "linear {}x{} has {} weights and {} biases",
            r.input,
            r.output,
            r.weight.len(),
            r.bias.len()
        )));
    }
    if r.weight.iter().chain(&r.bias).any(|v| !v.is_finite()) {
        return Err(NnError::Format("non-finite parameter".into()));
    }
    Ok(Linear {
        weight: Tensor::from_vec(r.input, r.output, r.weight.iter().map(|&v| T::lit(v)).collect()),
        bias: r.bias.iter().map(|&v| T::lit(v)).collect(),
    })
}

fn layer_record<T: Scalar>(l: &Layer<T>) -> LayerRecord {
    match l {
        Layer::Dense(d) => LayerRecord::Dense {
            activation: d.activation,
            linear: linear_record(&d.linear),
        },
        Layer::EdgeConv(c) => LayerRecord::EdgeConv {
            edge_width: c.edge_width,
            residual: c.residual,
            self_loops: c.self_loops,
            mlp: c.mlp.iter().map(linear_record).collect(),
        },
        Layer::MaxPoolGroups => LayerRecord::MaxPool,
        Layer::EdgeReadout => LayerRecord::EdgeReadout,
    }
}

fn layer_from<T: Scalar>(r: &LayerRecord) -> Result<Layer<T>, NnError> {
    Ok(match r {
        LayerRecord::Dense { activation, linear } => Layer::Dense(Dense {
            linear: linear_from(linear)?,
            activation: *activation,
        }),
        LayerRecord::EdgeConv {
            edge_width,
            residual,
            self_loops,
            mlp,
        } => {
            if mlp.is_empty() {
                return Err(NnError::Format("edge conv without transforms".into()));
            }
            Layer::EdgeConv(EdgeConv {
                mlp: mlp.iter().map(linear_from).collect::<Result<_, _>>()?,
                edge_width: *edge_width,
                residual: *residual,
                self_loops: *self_loops,
            })
        }
        LayerRecord::MaxPool => Layer::MaxPoolGroups,
        LayerRecord::EdgeReadout => Layer::EdgeReadout,
    })
}

impl<T: Scalar> GnnModel<T> {
    pub fn to_record(&self, architecture: &str) -> WeightsFile {
        WeightsFile {
            schema_version: WEIGHTS_SCHEMA_VERSION,
            kind: WEIGHTS_KIND.to_string(),
            architecture: architecture.to_string(),
            input_width: self.input_width(),
            trunk: self.trunk().iter().map(layer_record).collect(),
            heads: self
                .heads()
                .iter()
                .map(|h| h.iter().map(layer_record).collect())
                .collect(),
        }
    }

    pub fn from_record(file: &WeightsFile) -> Result<Self, NnError> {
        if file.kind != WEIGHTS_KIND {
            return Err(NnError::Format(format!("unexpected kind {:?}", file.kind)));
        }
        if file.schema_version != WEIGHTS_SCHEMA_VERSION {
            return Err(NnError::Format(format!(
                "unsupported schema_version {}",
                file.schema_version
            )));
        }
        let trunk = file.trunk.iter().map(layer_from).collect::<Result<_, _>>()?;
        let heads = file
            .heads
            .iter()
            .map(|h| h.iter().map(layer_from).collect::<Result<_, _>>())
            .collect::<Result<_, _>>()?;
        Ok(GnnModel::from_parts(file.input_width, trunk, heads))
    }

    pub fn save(&self, path: &Path, architecture: &str) -> Result<(), NnError> {
        let text = serde_json::to_string(&self.to_record(architecture))
            .map_err(|e| NnError::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| NnError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String), NnError> {
        let text = std::fs::read_to_string(path).map_err(|e| NnError::Io(e.to_string()))?;
        let file: WeightsFile =
            serde_json::from_str(&text).map_err(|e| NnError::Format(e.to_string()))?;
        Ok((Self::from_record(&file)?, file.architecture))
    }

    /// Loads weights and checks they fit the architecture of `expected`.
    pub fn load_matching(path: &Path, expected: &GnnModel<T>) -> Result<Self, NnError> {
        let (model, _) = Self::load(path)?;
        if model.signature() != expected.signature() {
            return Err(NnError::Contract(format!(
                "weight file architecture {:?} does not match expected {:?}",
                model.signature(),
                expected.signature()
            )));
        }
        Ok(model)
    }
}
