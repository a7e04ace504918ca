//! Trainable parameters of the pooling head and their gradients.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::{AttentionPoolParams, NeckParams, PoolingMode};

pub const HEAD_FORMAT: &str = "xfdreid-head";
pub const HEAD_VERSION: u32 = 1;

/// Names every trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamTensor {
    AttentionW,
    NeckScale,
    NeckShift,
    ClassifierWeight,
    ClassifierBias,
    IdentityMemory,
    LogTemperature,
}

impl ParamTensor {
    pub const ALL: [ParamTensor; 7] = [
        ParamTensor::AttentionW,
        ParamTensor::NeckScale,
        ParamTensor::NeckShift,
        ParamTensor::ClassifierWeight,
        ParamTensor::ClassifierBias,
        ParamTensor::IdentityMemory,
        ParamTensor::LogTemperature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamTensor::AttentionW => "attention.w",
            ParamTensor::NeckScale => "neck.scale",
            ParamTensor::NeckShift => "neck.shift",
            ParamTensor::ClassifierWeight => "classifier.weight",
            ParamTensor::ClassifierBias => "classifier.bias",
            ParamTensor::IdentityMemory => "identity_memory",
            ParamTensor::LogTemperature => "log_temperature",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

/// Attention projection, neck affine, identity classifier and the
/// per-identity memory table used by the cross-modal terms.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingHead {
    pub mode: PoolingMode,
    pub attention: AttentionPoolParams,
    pub neck: NeckParams,
    /// num_ids × C
    pub classifier_weight: Array2<f64>,
    pub classifier_bias: Array1<f64>,
    /// num_ids × C; rows are ℓ2-normalized on use.
    pub identity_memory: Array2<f64>,
    pub log_temperature: f64,
    /// person_id of each class index.
    pub class_person_ids: Vec<u32>,
}

impl PoolingHead {
    pub fn init<R: Rng>(
        mode: PoolingMode,
        feature_dim: usize,
        class_person_ids: Vec<u32>,
        instance_norm: bool,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let num_ids = class_person_ids.len();
        let classifier = Normal::new(0.0, 0.01).unwrap();
        let memory = Normal::new(0.0, 1.0 / (feature_dim as f64).sqrt()).unwrap();
        let classifier_weight = Array2::from_shape_simple_fn((num_ids, feature_dim), || classifier.sample(rng));
        let identity_memory = Array2::from_shape_simple_fn((num_ids, feature_dim), || memory.sample(rng));
        let mut attention = AttentionPoolParams::zeros(feature_dim);
        attention.trainable = mode == PoolingMode::Attn;
        Ok(Self {
            mode,
            attention,
            neck: if instance_norm {
                NeckParams::with_affine(feature_dim)
            } else {
                NeckParams::disabled()
            },
            classifier_weight,
            classifier_bias: Array1::zeros(num_ids),
            identity_memory,
            log_temperature: temperature.ln(),
            class_person_ids,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.attention.w.len()
    }

    pub fn num_ids(&self) -> usize {
        self.class_person_ids.len()
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn tensor(&self, t: ParamTensor) -> Option<&[f64]> {
        match t {
            ParamTensor::AttentionW => self.attention.w.as_slice(),
            ParamTensor::NeckScale => self.neck.scale.as_ref().and_then(|s| s.as_slice()),
            ParamTensor::NeckShift => self.neck.shift.as_ref().and_then(|s| s.as_slice()),
            ParamTensor::ClassifierWeight => self.classifier_weight.as_slice(),
            ParamTensor::ClassifierBias => self.classifier_bias.as_slice(),
            ParamTensor::IdentityMemory => self.identity_memory.as_slice(),
            ParamTensor::LogTemperature => Some(std::slice::from_ref(&self.log_temperature)),
        }
    }

    pub fn tensor_mut(&mut self, t: ParamTensor) -> Option<&mut [f64]> {
        match t {
            ParamTensor::AttentionW => self.attention.w.as_slice_mut(),
            ParamTensor::NeckScale => self.neck.scale.as_mut().and_then(|s| s.as_slice_mut()),
            ParamTensor::NeckShift => self.neck.shift.as_mut().and_then(|s| s.as_slice_mut()),
            ParamTensor::ClassifierWeight => self.classifier_weight.as_slice_mut(),
            ParamTensor::ClassifierBias => self.classifier_bias.as_slice_mut(),
            ParamTensor::IdentityMemory => self.identity_memory.as_slice_mut(),
            ParamTensor::LogTemperature => Some(std::slice::from_mut(&mut self.log_temperature)),
        }
    }

    /// Tensors this head actually carries.
    pub fn tensors(&self) -> Vec<ParamTensor> {
        ParamTensor::ALL
            .into_iter()
            .filter(|&t| self.tensor(t).is_some())
            .collect()
    }

    fn shape(&self, t: ParamTensor) -> Vec<usize> {
        match t {
            ParamTensor::ClassifierWeight => self.classifier_weight.shape().to_vec(),
            ParamTensor::IdentityMemory => self.identity_memory.shape().to_vec(),
            ParamTensor::LogTemperature => vec![1],
            _ => vec![self.tensor(t).map_or(0, <[f64]>::len)],
        }
    }

    pub fn to_file(&self, run: serde_json::Value) -> HeadFile {
        let tensors = self
            .tensors()
            .into_iter()
            .map(|t| {
                let data = self.tensor(t).unwrap().to_vec();
                (
                    t.name().to_string(),
                    TensorData {
                        shape: self.shape(t),
                        data,
                    },
                )
            })
            .collect();
        HeadFile {
            format: HEAD_FORMAT.to_string(),
            version: HEAD_VERSION,
            mode: self.mode,
            feature_dim: self.feature_dim(),
            num_ids: self.num_ids(),
            class_person_ids: self.class_person_ids.clone(),
            neck_enabled: self.neck.enabled,
            neck_eps: self.neck.eps,
            tensors,
            run,
        }
    }

    pub fn from_file(file: &HeadFile) -> Result<Self> {
        if file.format != HEAD_FORMAT || file.version != HEAD_VERSION {
            return Err(Error::Config(format!(
                "unsupported head file {} v{}",
                file.format, file.version
            )));
        }
        let (c, k) = (file.feature_dim, file.num_ids);
        if file.class_person_ids.len() != k {
            return Err(Error::ShapeMismatch(
                "class_person_ids length differs from num_ids".into(),
            ));
        }
        let get = |t: ParamTensor, shape: &[usize]| -> Result<Option<Vec<f64>>> {
            match file.tensors.get(t.name()) {
                None => Ok(None),
                Some(td) => {
                    if td.shape != shape || td.data.len() != shape.iter().product::<usize>() {
                        return Err(Error::ShapeMismatch(format!(
                            "{} has shape {:?}, expected {shape:?}",
                            t.name(),
                            td.shape
                        )));
                    }
                    Ok(Some(td.data.clone()))
                }
            }
        };
        let require = |t: ParamTensor, shape: &[usize]| -> Result<Vec<f64>> {
            get(t, shape)?.ok_or_else(|| Error::Config(format!("head file lacks {}", t.name())))
        };
        let w = Array1::from(require(ParamTensor::AttentionW, &[c])?);
        let head = Self {
            mode: file.mode,
            attention: AttentionPoolParams {
                w,
                trainable: file.mode == PoolingMode::Attn,
            },
            neck: NeckParams {
                enabled: file.neck_enabled,
                eps: file.neck_eps,
                scale: get(ParamTensor::NeckScale, &[c])?.map(Array1::from),
                shift: get(ParamTensor::NeckShift, &[c])?.map(Array1::from),
            },
            classifier_weight: Array2::from_shape_vec((k, c), require(ParamTensor::ClassifierWeight, &[k, c])?)
                .expect("shape checked"),
            classifier_bias: Array1::from(require(ParamTensor::ClassifierBias, &[k])?),
            identity_memory: Array2::from_shape_vec((k, c), require(ParamTensor::IdentityMemory, &[k, c])?)
                .expect("shape checked"),
            log_temperature: require(ParamTensor::LogTemperature, &[1])?[0],
            class_person_ids: file.class_person_ids.clone(),
        };
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>, run: serde_json::Value) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&self.to_file(run))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file(&serde_json::from_str(&text)?)
    }
}

/// Versioned JSON document for a trained head. Arrays are decimal,
/// row-major, with explicit shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadFile {
    pub format: String,
    pub version: u32,
    pub mode: PoolingMode,
    pub feature_dim: usize,
    pub num_ids: usize,
    pub class_person_ids: Vec<u32>,
    pub neck_enabled: bool,
    pub neck_eps: f64,
    pub tensors: BTreeMap<String, TensorData>,
    #[serde(default)]
    pub run: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Gradients shaped like a [`PoolingHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub attention_w: Array1<f64>,
    pub neck_scale: Option<Array1<f64>>,
    pub neck_shift: Option<Array1<f64>>,
    pub classifier_weight: Array2<f64>,
    pub classifier_bias: Array1<f64>,
    pub identity_memory: Array2<f64>,
    pub log_temperature: f64,
}

impl HeadGrads {
    pub fn zeros_like(head: &PoolingHead) -> Self {
        Self {
            attention_w: Array1::zeros(head.attention.w.len()),
            neck_scale: head.neck.scale.as_ref().map(|s| Array1::zeros(s.len())),
            neck_shift: head.neck.shift.as_ref().map(|s| Array1::zeros(s.len())),
            classifier_weight: Array2::zeros(head.classifier_weight.dim()),
            classifier_bias: Array1::zeros(head.classifier_bias.len()),
            identity_memory: Array2::zeros(head.identity_memory.dim()),
            log_temperature: 0.0,
        }
    }

    pub fn tensor(&self, t: ParamTensor) -> Option<&[f64]> {
        match t {
            ParamTensor::AttentionW => self.attention_w.as_slice(),
            ParamTensor::NeckScale => self.neck_scale.as_ref().and_then(|s| s.as_slice()),
            ParamTensor::NeckShift => self.neck_shift.as_ref().and_then(|s| s.as_slice()),
            ParamTensor::ClassifierWeight => self.classifier_weight.as_slice(),
            ParamTensor::ClassifierBias => self.classifier_bias.as_slice(),
            ParamTensor::IdentityMemory => self.identity_memory.as_slice(),
            ParamTensor::LogTemperature => Some(std::slice::from_ref(&self.log_temperature)),
        }
    }

    /// Every entry, in tensor order.
    pub fn iter_all(&self) -> impl Iterator<Item = f64> + '_ {
        ParamTensor::ALL
            .into_iter()
            .filter_map(|t| self.tensor(t))
            .flat_map(|s| s.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head = PoolingHead::init(PoolingMode::Attn, 6, vec![3, 8, 11], true, 0.07, &mut rng).unwrap();
        head.attention.w[2] = 0.1 + 0.2;
        let file = head.to_file(serde_json::json!({"seed": 1}));
        let text = serde_json::to_string(&file).unwrap();
        let back = PoolingHead::from_file(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, head);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = PoolingHead::init(PoolingMode::Mean, 4, vec![0, 1], false, 0.07, &mut rng).unwrap();
        let mut file = head.to_file(serde_json::Value::Null);
        file.tensors.get_mut("classifier.bias").unwrap().shape = vec![3];
        assert!(matches!(PoolingHead::from_file(&file), Err(Error::ShapeMismatch(_))));
    }
}
