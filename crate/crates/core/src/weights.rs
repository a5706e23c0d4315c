//! Named tensor storage and its JSON file format.
//!
//! The file is a single JSON object mapping tensor name to
//! `{"shape": [..], "data": [..]}` with `data` in row-major order.
//!
//! | name                               | shape               |
//! |------------------------------------|---------------------|
//! | `attention.{theta,phi,rho}.kernel` | `[C, C, 1, 1]`      |
//! | `attention.{theta,phi,rho}.bias`   | `[C]`               |
//! | `memory.init.{1..4}.kernel`        | `[C, C, k, k]`      |
//! | `memory.init.{1..4}.bias`          | `[C]`               |
//! | `memory.gru.{update,reset,candidate}.kernel` | `[C, 2C, 3, 3]` |
//! | `memory.gru.{update,reset,candidate}.bias`   | `[C]`           |
//! | `classifier.weight` (training only) | `[K, C]`           |
//! | `classifier.bias` (training only)   | `[K]`              |

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionWeights;
use crate::error::{Error, Result};
use crate::memory::MemoryWeights;
use crate::tensor::ConvLayer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered map of named tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightStore {
    tensors: BTreeMap<String, StoredTensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("tensor `{name}` shape {shape:?} holds {} values", data.len())));
        }
        self.tensors.insert(name, StoredTensor { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&StoredTensor> {
        self.tensors.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let store: WeightStore = serde_json::from_str(text)?;
        for (name, t) in &store.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!("tensor `{name}` shape {:?} holds {} values", t.shape, t.data.len())));
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn put_conv(&mut self, prefix: &str, layer: &ConvLayer) {
        self.tensors.insert(
            format!("{prefix}.kernel"),
            StoredTensor { shape: layer.kernel_shape().to_vec(), data: layer.kernel().to_vec() },
        );
        self.tensors.insert(
            format!("{prefix}.bias"),
            StoredTensor { shape: vec![layer.out_channels()], data: layer.bias().to_vec() },
        );
    }

    pub fn conv(&self, prefix: &str) -> Result<ConvLayer> {
        let kernel = self.get(&format!("{prefix}.kernel"))?;
        let bias = self.get(&format!("{prefix}.bias"))?;
        let [o, i, k, k2] = kernel.shape[..] else {
            return Err(Error::Shape(format!("`{prefix}.kernel` must be rank 4, got {:?}", kernel.shape)));
        };
        if k != k2 {
            return Err(Error::Shape(format!("`{prefix}.kernel` must be square, got {:?}", kernel.shape)));
        }
        ConvLayer::new(o, i, k, kernel.data.clone(), bias.data.clone())
    }
}

/// Every learnable tensor the tracker needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub attention: AttentionWeights,
    pub memory: MemoryWeights,
}

impl ModelWeights {
    pub fn random(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let memory = MemoryWeights::random(channels, &mut rng);
        let attention = AttentionWeights::random(channels, &mut rng);
        Self { attention, memory }
    }

    pub fn channels(&self) -> usize {
        self.memory.channels()
    }

    pub fn write_to(&self, store: &mut WeightStore) {
        store.put_conv("attention.theta", &self.attention.theta);
        store.put_conv("attention.phi", &self.attention.phi);
        store.put_conv("attention.rho", &self.attention.rho);
        for (i, layer) in self.memory.init.iter().enumerate() {
            store.put_conv(&format!("memory.init.{}", i + 1), layer);
        }
        store.put_conv("memory.gru.update", &self.memory.update_gate);
        store.put_conv("memory.gru.reset", &self.memory.reset_gate);
        store.put_conv("memory.gru.candidate", &self.memory.candidate);
    }

    pub fn to_store(&self) -> WeightStore {
        let mut store = WeightStore::new();
        self.write_to(&mut store);
        store
    }

    pub fn from_store(store: &WeightStore) -> Result<Self> {
        let attention =
            AttentionWeights::new(store.conv("attention.theta")?, store.conv("attention.phi")?, store.conv("attention.rho")?)?;
        let init = [
            store.conv("memory.init.1")?,
            store.conv("memory.init.2")?,
            store.conv("memory.init.3")?,
            store.conv("memory.init.4")?,
        ];
        let memory = MemoryWeights::new(
            init,
            store.conv("memory.gru.update")?,
            store.conv("memory.gru.reset")?,
            store.conv("memory.gru.candidate")?,
        )?;
        if memory.channels() != attention.channels() {
            return Err(Error::Shape("attention and memory channel counts differ".into()));
        }
        Ok(Self { attention, memory })
    }

    /// Trained weights bundled with the crate (see `examples/train_embedding.rs`).
    pub fn pretrained() -> Self {
        let store = WeightStore::from_json(include_str!("../assets/pretrained.json"))
            .expect("bundled weight file parses");
        Self::from_store(&store).expect("bundled weight file is complete")
    }
}
