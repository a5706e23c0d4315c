//! Identity memory: state initialisation, convolutional GRU update, and
//! pooling of embeddings into association vectors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::tape::{ConvVars, Tape, Var};
use crate::tensor::{conv2d, kernels, pointwise, ConvLayer, FeatureMap, Pointwise};

/// Embedding geometry shared by every memory in a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for EmbeddingShape {
    fn default() -> Self {
        Self { channels: 16, height: 8, width: 8 }
    }
}

/// Kernel sizes of the four state-initialisation layers.
pub const INIT_KERNELS: [usize; 4] = [3, 1, 1, 1];

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryWeights {
    pub init: [ConvLayer; 4],
    pub update_gate: ConvLayer,
    pub reset_gate: ConvLayer,
    pub candidate: ConvLayer,
}

impl MemoryWeights {
    pub fn new(init: [ConvLayer; 4], update_gate: ConvLayer, reset_gate: ConvLayer, candidate: ConvLayer) -> Result<Self> {
        let c = init[0].in_channels();
        for (i, layer) in init.iter().enumerate() {
            if layer.in_channels() != c || layer.out_channels() != c {
                return Err(Error::Shape(format!("init layer {} must map {c}->{c} channels", i + 1)));
            }
        }
        for (name, layer) in [("update", &update_gate), ("reset", &reset_gate), ("candidate", &candidate)] {
            if layer.in_channels() != 2 * c || layer.out_channels() != c {
                return Err(Error::Shape(format!("gru {name} gate must map {}->{c} channels", 2 * c)));
            }
        }
        Ok(Self { init, update_gate, reset_gate, candidate })
    }

    pub fn zeros(channels: usize) -> Self {
        let c = channels;
        Self {
            init: INIT_KERNELS.map(|k| ConvLayer::zeros(c, c, k)),
            update_gate: ConvLayer::zeros(c, 2 * c, 3),
            reset_gate: ConvLayer::zeros(c, 2 * c, 3),
            candidate: ConvLayer::zeros(c, 2 * c, 3),
        }
    }

    pub fn random(channels: usize, rng: &mut impl Rng) -> Self {
        let c = channels;
        let relu_gain = 2f64.sqrt();
        let init = [
            ConvLayer::random(c, c, INIT_KERNELS[0], relu_gain, rng),
            ConvLayer::random(c, c, INIT_KERNELS[1], relu_gain, rng),
            ConvLayer::random(c, c, INIT_KERNELS[2], relu_gain, rng),
            ConvLayer::random(c, c, INIT_KERNELS[3], 1.0, rng),
        ];
        Self {
            init,
            update_gate: ConvLayer::random(c, 2 * c, 3, 1.0, rng),
            reset_gate: ConvLayer::random(c, 2 * c, 3, 1.0, rng),
            candidate: ConvLayer::random(c, 2 * c, 3, 1.0, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.init[0].in_channels()
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.init.iter_mut().chain([&mut self.update_gate, &mut self.reset_gate, &mut self.candidate])
    }
}

/// Aggregated per-identity reference embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState {
    state: FeatureMap,
}

impl MemoryState {
    pub fn from_map(state: FeatureMap) -> Self {
        Self { state }
    }

    pub fn state(&self) -> &FeatureMap {
        &self.state
    }

    pub fn into_state(self) -> FeatureMap {
        self.state
    }
}

fn check_input(x: &FeatureMap, w: &MemoryWeights) -> Result<()> {
    if x.channels() != w.channels() {
        return Err(Error::Shape(format!(
            "memory expects {} channels, got {}",
            w.channels(),
            x.channels()
        )));
    }
    Ok(())
}

/// Four convolutions, ReLU after the first three and tanh after the last.
pub fn init_state(raw_embed: &FeatureMap, w: &MemoryWeights) -> Result<MemoryState> {
    check_input(raw_embed, w)?;
    let mut x = raw_embed.clone();
    for layer in &w.init[..3] {
        x = conv2d(&x, layer)?.map(|v| v.max(0.0));
    }
    let state = conv2d(&x, &w.init[3])?.map(f64::tanh);
    Ok(MemoryState { state })
}

/// Embedding of a single observation: aggregation of a length-1 sequence.
pub fn extract_embedding(raw_patch: &FeatureMap, w: &MemoryWeights) -> Result<FeatureMap> {
    Ok(init_state(raw_patch, w)?.state)
}

/// Convolutional GRU step.
///
/// `z = σ(Wz * [x; h])`, `r = σ(Wr * [x; h])`, `c = tanh(Wc * [x; r ⊙ h])`,
/// `h' = (1 − z) ⊙ h + z ⊙ c`.
pub fn update(memory: &MemoryState, refined_embed: &FeatureMap, w: &MemoryWeights) -> Result<MemoryState> {
    check_input(refined_embed, w)?;
    let h = &memory.state;
    if !h.same_shape(refined_embed) {
        return Err(Error::Shape(format!(
            "memory state {:?} vs embedding {:?}",
            h.shape(),
            refined_embed.shape()
        )));
    }
    let xh = refined_embed.concat_channels(h)?;
    let z = conv2d(&xh, &w.update_gate)?.map(kernels::sigmoid);
    let r = conv2d(&xh, &w.reset_gate)?.map(kernels::sigmoid);
    let rh = pointwise(&r, h, Pointwise::Mul)?;
    let cand = conv2d(&refined_embed.concat_channels(&rh)?, &w.candidate)?.map(f64::tanh);
    let data = h
        .data()
        .iter()
        .zip(z.data())
        .zip(cand.data())
        .map(|((hv, zv), cv)| (1.0 - zv) * hv + zv * cv)
        .collect();
    let (c, hh, ww) = h.shape();
    Ok(MemoryState { state: FeatureMap::from_raw(c, hh, ww, data) })
}

/// Per-channel spatial mean, L2-normalised. A zero mean stays zero.
pub fn pool(embed: &FeatureMap) -> Vec<f64> {
    let n = (embed.height() * embed.width()) as f64;
    let mean: Vec<f64> = (0..embed.channels()).map(|c| embed.plane(c).iter().sum::<f64>() / n).collect();
    normalize(mean)
}

pub(crate) fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Tape handles for [`MemoryWeights`].
#[derive(Clone, Copy, Debug)]
pub struct MemoryVars {
    pub init: [ConvVars; 4],
    pub update_gate: ConvVars,
    pub reset_gate: ConvVars,
    pub candidate: ConvVars,
}

impl MemoryVars {
    pub fn register(tape: &mut Tape, w: &MemoryWeights) -> Self {
        let init = [
            tape.conv_params(&w.init[0]),
            tape.conv_params(&w.init[1]),
            tape.conv_params(&w.init[2]),
            tape.conv_params(&w.init[3]),
        ];
        Self {
            init,
            update_gate: tape.conv_params(&w.update_gate),
            reset_gate: tape.conv_params(&w.reset_gate),
            candidate: tape.conv_params(&w.candidate),
        }
    }

    pub fn all(&self) -> [ConvVars; 7] {
        [self.init[0], self.init[1], self.init[2], self.init[3], self.update_gate, self.reset_gate, self.candidate]
    }
}

pub fn init_state_tape(tape: &mut Tape, raw: Var, w: &MemoryVars) -> Var {
    let mut x = raw;
    for layer in &w.init[..3] {
        let y = tape.conv(x, *layer);
        x = tape.relu(y);
    }
    let y = tape.conv(x, w.init[3]);
    tape.tanh(y)
}

pub fn update_tape(tape: &mut Tape, h: Var, x: Var, w: &MemoryVars) -> Var {
    let xh = tape.concat_channels(x, h);
    let zp = tape.conv(xh, w.update_gate);
    let z = tape.sigmoid(zp);
    let rp = tape.conv(xh, w.reset_gate);
    let r = tape.sigmoid(rp);
    let rh = tape.mul(r, h);
    let xrh = tape.concat_channels(x, rh);
    let cp = tape.conv(xrh, w.candidate);
    let cand = tape.tanh(cp);
    let keep = tape.one_minus(z);
    let kept = tape.mul(keep, h);
    let fresh = tape.mul(z, cand);
    tape.add(kept, fresh)
}

pub fn pool_tape(tape: &mut Tape, embed: Var) -> Var {
    let m = tape.spatial_mean(embed);
    tape.l2_normalize(m)
}
