use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{deeponet::OperatorModel, Layout, NetworkSpec, ParamVector, TrainingMeta};
use crate::error::{Error, Result};

const FORMAT: &str = "eivuq-operator-checkpoint/1";

/// On-disk form of an [`OperatorModel`]. Parameters and sensors are stored as
/// 16-digit hex IEEE-754 bit patterns so the round trip is bit-exact.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: NetworkSpec,
    pub layout: Layout,
    pub params: Vec<String>,
    pub sensors: Vec<String>,
    pub meta: TrainingMeta,
}

fn encode(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| format!("{:016x}", x.to_bits())).collect()
}

fn decode(v: &[String], what: &str) -> Result<Vec<f64>> {
    v.iter()
        .enumerate()
        .map(|(i, s)| {
            u64::from_str_radix(s, 16)
                .map(f64::from_bits)
                .map_err(|e| Error::Serde(format!("{what}[{i}] = {s:?}: {e}")))
        })
        .collect()
}

impl Checkpoint {
    pub fn from_model(model: &OperatorModel) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            spec: model.spec.clone(),
            layout: model.params.layout.clone(),
            params: encode(&model.params.values),
            sensors: encode(&model.sensors),
            meta: model.meta.clone(),
        }
    }

    pub fn into_model(self) -> Result<OperatorModel> {
        if self.format != FORMAT {
            return Err(Error::Serde(format!("unknown checkpoint format {:?}", self.format)));
        }
        if self.layout != self.spec.layout() {
            return Err(Error::ShapeError("stored layout does not match the stored network".into()));
        }
        let params = ParamVector::new(decode(&self.params, "params")?, self.layout)?;
        let mut model = OperatorModel::new(self.spec, params, decode(&self.sensors, "sensors")?)?;
        model.meta = self.meta;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &OperatorModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&Checkpoint::from_model(model))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<OperatorModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    ck.into_model()
}
