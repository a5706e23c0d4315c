//! Target and distractor attention and the additive refinement they drive.
//!
//! A target's reference embedding (its aggregated memory) attends onto the
//! newly extracted raw embedding; the result is added to the feature being
//! refined. The distractor's reference produces the same kind of response,
//! which is subtracted. Both branches share the θ, φ, ρ projections.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::kernels;
use crate::tensor::tape::{ConvVars, Tape, Var};
use crate::tensor::{conv2d, ConvLayer, FeatureMap};

/// The three 1×1 projections of the attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub theta: ConvLayer,
    pub phi: ConvLayer,
    pub rho: ConvLayer,
}

impl AttentionWeights {
    pub fn new(theta: ConvLayer, phi: ConvLayer, rho: ConvLayer) -> Result<Self> {
        let c = theta.in_channels();
        for (name, layer) in [("theta", &theta), ("phi", &phi), ("rho", &rho)] {
            if layer.kernel_size() != 1 || layer.in_channels() != c || layer.out_channels() != c {
                return Err(Error::Shape(format!(
                    "attention {name} must be a 1x1 {c}->{c} convolution, got {:?}",
                    layer.kernel_shape()
                )));
            }
        }
        Ok(Self { theta, phi, rho })
    }

    pub fn identity(channels: usize) -> Self {
        let id = ConvLayer::identity(channels);
        Self { theta: id.clone(), phi: id.clone(), rho: id }
    }

    pub fn random(channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            theta: ConvLayer::random(channels, channels, 1, 1.0, rng),
            phi: ConvLayer::random(channels, channels, 1, 1.0, rng),
            rho: ConvLayer::random(channels, channels, 1, 1.0, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.theta.in_channels()
    }
}

/// Which attention branches take part in a refinement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Branches {
    pub target: bool,
    pub distractor: bool,
}

impl Branches {
    pub const BOTH: Branches = Branches { target: true, distractor: true };
    pub const NONE: Branches = Branches { target: false, distractor: false };
}

impl Default for Branches {
    fn default() -> Self {
        Self::BOTH
    }
}

fn check_pair(a: &FeatureMap, b: &FeatureMap, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn projections(
    query: &FeatureMap,
    reference: &FeatureMap,
    w: &AttentionWeights,
) -> Result<(FeatureMap, FeatureMap, FeatureMap)> {
    check_pair(query, reference, "non-local attention")?;
    if query.channels() != w.channels() {
        return Err(Error::Shape(format!(
            "attention weights expect {} channels, got {}",
            w.channels(),
            query.channels()
        )));
    }
    Ok((conv2d(query, &w.theta)?, conv2d(reference, &w.phi)?, conv2d(reference, &w.rho)?))
}

/// Row-stochastic attention matrix (`HW × HW`, row = query location).
pub fn attention_matrix(query: &FeatureMap, reference: &FeatureMap, w: &AttentionWeights) -> Result<Vec<f64>> {
    let (q, k, v) = projections(query, reference, w)?;
    let (c, h, wd) = q.shape();
    Ok(kernels::attend_forward(q.data(), k.data(), v.data(), c, h * wd).1)
}

/// Non-local response of `reference` onto `query`:
/// `out_i = Σ_j softmax_j(⟨θ(q)_i, φ(r)_j⟩) ρ(r)_j`.
pub fn non_local(query: &FeatureMap, reference: &FeatureMap, w: &AttentionWeights) -> Result<FeatureMap> {
    let (q, k, v) = projections(query, reference, w)?;
    let (c, h, wd) = q.shape();
    let (out, _) = kernels::attend_forward(q.data(), k.data(), v.data(), c, h * wd);
    Ok(FeatureMap::from_raw(c, h, wd, out))
}

/// `feature + w · (TA − DA)` with both branches enabled.
pub fn refine(
    feature: &FeatureMap,
    query_embed: &FeatureMap,
    target_ref: &FeatureMap,
    distractor_ref: Option<&FeatureMap>,
    w: f64,
    weights: &AttentionWeights,
) -> Result<FeatureMap> {
    refine_with(feature, query_embed, target_ref, distractor_ref, w, weights, Branches::BOTH)
}

/// [`refine`] with individually switchable branches.
///
/// A zero weight (or no active branch) returns `feature` unchanged, bit for bit.
pub fn refine_with(
    feature: &FeatureMap,
    query_embed: &FeatureMap,
    target_ref: &FeatureMap,
    distractor_ref: Option<&FeatureMap>,
    w: f64,
    weights: &AttentionWeights,
    branches: Branches,
) -> Result<FeatureMap> {
    check_pair(feature, query_embed, "refine feature/query")?;
    check_pair(feature, target_ref, "refine feature/target reference")?;
    if let Some(d) = distractor_ref {
        check_pair(feature, d, "refine feature/distractor reference")?;
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Invalid(format!("refinement weight must lie in [0, 1], got {w}")));
    }
    let use_distractor = branches.distractor && distractor_ref.is_some();
    if w == 0.0 || (!branches.target && !use_distractor) {
        return Ok(feature.clone());
    }
    let target = if branches.target { Some(non_local(query_embed, target_ref, weights)?) } else { None };
    let distractor = match distractor_ref {
        Some(d) if branches.distractor => Some(non_local(query_embed, d, weights)?),
        _ => None,
    };
    let data = feature
        .data()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let ta = target.as_ref().map_or(0.0, |t| t.data()[i]);
            let da = distractor.as_ref().map_or(0.0, |d| d.data()[i]);
            f + w * (ta - da)
        })
        .collect();
    let (c, h, wd) = feature.shape();
    Ok(FeatureMap::from_raw(c, h, wd, data))
}

/// Tape handles for [`AttentionWeights`].
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub theta: ConvVars,
    pub phi: ConvVars,
    pub rho: ConvVars,
}

impl AttentionVars {
    pub fn register(tape: &mut Tape, w: &AttentionWeights) -> Self {
        Self { theta: tape.conv_params(&w.theta), phi: tape.conv_params(&w.phi), rho: tape.conv_params(&w.rho) }
    }
}

pub fn non_local_tape(tape: &mut Tape, query: Var, reference: Var, w: &AttentionVars) -> Var {
    let q = tape.conv(query, w.theta);
    let k = tape.conv(reference, w.phi);
    let v = tape.conv(reference, w.rho);
    tape.attend(q, k, v)
}

/// Differentiable [`refine_with`] for a fixed scalar weight `w > 0`.
#[allow(clippy::too_many_arguments)]
pub fn refine_tape(
    tape: &mut Tape,
    feature: Var,
    query_embed: Var,
    target_ref: Var,
    distractor_ref: Option<Var>,
    w: f64,
    weights: &AttentionVars,
    branches: Branches,
) -> Var {
    let ta = branches.target.then(|| non_local_tape(tape, query_embed, target_ref, weights));
    let da = match distractor_ref {
        Some(d) if branches.distractor => Some(non_local_tape(tape, query_embed, d, weights)),
        _ => None,
    };
    let delta = match (ta, da) {
        (Some(t), Some(d)) => tape.sub(t, d),
        (Some(t), None) => t,
        (None, Some(d)) => tape.scale(d, -1.0),
        (None, None) => return feature,
    };
    let scaled = tape.scale(delta, w);
    tape.add(feature, scaled)
}
