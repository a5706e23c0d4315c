//! Identity-discriminative training of the memory module, and a separate
//! fit of the attention projections with the memory frozen.

pub mod data;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{refine_tape, AttentionVars, Branches};
use crate::error::{Error, Result};
use crate::geometry::{weight_from_iou, BBox, OcclusionConfig};
use crate::memory::{cosine, extract_embedding, init_state, init_state_tape, pool, pool_tape, update, update_tape, MemoryState, MemoryVars, MemoryWeights};
use crate::tensor::tape::{ConvVars, Gradients, Tape, Tensor, Var};
use crate::tensor::{ConvLayer, FeatureMap};
use crate::weights::{ModelWeights, WeightStore};

pub use data::{render_scene, IdentityBatch, IdentityPool, PatchConfig, Scene};

/// `-log softmax(logits)[label]`.
pub fn ce_loss(logits: &[f64], label: usize) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Invalid("cross-entropy of empty logits".into()));
    }
    if label >= logits.len() {
        return Err(Error::Invalid(format!("label {label} out of range for {} logits", logits.len())));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok((lse - logits[label]).max(0.0))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `max(d(a, p) − d(a, n) + margin, 0)` with Euclidean `d`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::Shape(format!(
            "triplet lengths {}, {}, {}",
            anchor.len(),
            positive.len(),
            negative.len()
        )));
    }
    Ok((euclid(anchor, positive) - euclid(anchor, negative) + margin).max(0.0))
}

/// Linear identity classifier on pooled embeddings; only used in training.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub classes: usize,
    pub inputs: usize,
}

impl Classifier {
    pub fn random(classes: usize, inputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / inputs as f64).sqrt();
        let weight = (0..classes * inputs).map(|_| rng.random_range(-bound..bound)).collect();
        Self { weight, bias: vec![0.0; classes], classes, inputs }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| self.bias[k] + self.weight[k * self.inputs..(k + 1) * self.inputs].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn write_to(&self, store: &mut WeightStore) -> Result<()> {
        store.insert("classifier.weight", vec![self.classes, self.inputs], self.weight.clone())?;
        store.insert("classifier.bias", vec![self.classes], self.bias.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Identities per batch.
    pub batch: usize,
    pub samples_per_identity: usize,
    /// Crops per sequence; the first initialises the memory, the rest update it.
    pub sequence_length: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { margin: 0.3, learning_rate: 0.05, steps: 500, batch: 4, samples_per_identity: 2, sequence_length: 2, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Invalid(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch < 2 || self.samples_per_identity < 2 {
            return Err(Error::Invalid("batches need at least 2 identities and 2 samples per identity".into()));
        }
        if self.sequence_length == 0 {
            return Err(Error::Invalid("sequence length must be at least 1".into()));
        }
        Ok(())
    }
}

/// Losses after one training step (evaluated before the update).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub ce: f64,
    pub triplet: f64,
    pub total: f64,
}

pub fn curve_csv(curve: &[LossRecord]) -> String {
    let mut out = String::from("step,ce,triplet,total\n");
    for r in curve {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.ce, r.triplet, r.total));
    }
    out
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub memory: MemoryWeights,
    pub classifier: Classifier,
    pub curve: Vec<LossRecord>,
}

impl FitOutcome {
    pub fn to_store(&self) -> Result<WeightStore> {
        let mut store = WeightStore::new();
        for (i, layer) in self.memory.init.iter().enumerate() {
            store.put_conv(&format!("memory.init.{}", i + 1), layer);
        }
        store.put_conv("memory.gru.update", &self.memory.update_gate);
        store.put_conv("memory.gru.reset", &self.memory.reset_gate);
        store.put_conv("memory.gru.candidate", &self.memory.candidate);
        self.classifier.write_to(&mut store)?;
        Ok(store)
    }
}

/// Mean over anchors of the batch-hard triplet loss, recorded on the tape.
fn batch_hard_tape(tape: &mut Tape, vecs: &[Var], labels: &[usize], margin: f64) -> Option<Var> {
    let n = vecs.len();
    let mut dist = vec![vec![None; n]; n];
    let mut terms = Vec::new();
    for i in 0..n {
        let mut pos: Option<(f64, Var)> = None;
        let mut neg: Option<(f64, Var)> = None;
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = match dist[i][j] {
                Some(d) => d,
                None => {
                    let d = tape.distance(vecs[i], vecs[j]);
                    dist[i][j] = Some(d);
                    dist[j][i] = Some(d);
                    d
                }
            };
            let v = tape.value(d).item();
            if labels[i] == labels[j] {
                if pos.is_none_or(|(best, _)| v > best) {
                    pos = Some((v, d));
                }
            } else if neg.is_none_or(|(best, _)| v < best) {
                neg = Some((v, d));
            }
        }
        if let (Some((_, p)), Some((_, q))) = (pos, neg) {
            let diff = tape.sub(p, q);
            let shifted = tape.add_scalar(diff, margin);
            terms.push(tape.relu(shifted));
        }
    }
    if terms.is_empty() {
        return None;
    }
    let total = tape.add_all(&terms);
    Some(tape.scale(total, 1.0 / terms.len() as f64))
}

fn mean_ce_tape(tape: &mut Tape, vecs: &[Var], labels: &[usize], weight: Var, bias: Var) -> Var {
    let terms: Vec<Var> = vecs
        .iter()
        .zip(labels)
        .map(|(&v, &l)| {
            let z = tape.linear(v, weight, bias);
            tape.cross_entropy(z, l)
        })
        .collect();
    let total = tape.add_all(&terms);
    tape.scale(total, 1.0 / terms.len() as f64)
}

fn step_conv(layer: &mut ConvLayer, vars: ConvVars, grads: &Gradients, lr: f64) {
    let gk = grads.get(vars.kernel);
    for (k, g) in layer.kernel_mut().iter_mut().zip(&gk) {
        *k -= lr * g;
    }
    let gb = grads.get(vars.bias);
    for (b, g) in layer.bias_mut().iter_mut().zip(&gb) {
        *b -= lr * g;
    }
}

/// One forward pass over a batch: `(ce, triplet, total)` nodes.
struct BatchLoss {
    ce: Var,
    triplet: Var,
    total: Var,
}

fn record_batch(
    tape: &mut Tape,
    batch: &IdentityBatch,
    mvars: &MemoryVars,
    weight: Var,
    bias: Var,
    margin: f64,
) -> BatchLoss {
    let mut pre = Vec::new();
    let mut pre_labels = Vec::new();
    let mut post = Vec::new();
    for (seq, &label) in batch.sequences.iter().zip(&batch.labels) {
        let mut state: Option<Var> = None;
        for crop in seq {
            let x = tape.map_leaf(crop);
            let e = init_state_tape(tape, x, mvars);
            pre.push(pool_tape(tape, e));
            pre_labels.push(label);
            state = Some(match state {
                None => e,
                Some(h) => update_tape(tape, h, e, mvars),
            });
        }
        let h = state.expect("non-empty sequence");
        post.push(pool_tape(tape, h));
    }
    let ce_pre = mean_ce_tape(tape, &pre, &pre_labels, weight, bias);
    let ce_post = mean_ce_tape(tape, &post, &batch.labels, weight, bias);
    let ce = tape.add(ce_pre, ce_post);
    let mut parts = Vec::new();
    parts.extend(batch_hard_tape(tape, &pre, &pre_labels, margin));
    parts.extend(batch_hard_tape(tape, &post, &batch.labels, margin));
    let triplet = if parts.is_empty() { tape.leaf(Tensor::scalar(0.0)) } else { tape.add_all(&parts) };
    let total = tape.add(ce, triplet);
    BatchLoss { ce, triplet, total }
}

/// Gradient descent on cross-entropy plus batch-hard triplet losses over
/// pooled embeddings, both before (every crop) and after (end of each
/// sequence) memory aggregation. Deterministic for a fixed seed.
pub fn fit(pool: &IdentityPool, memory: &MemoryWeights, classifier: &Classifier, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    if classifier.classes != pool.len() || classifier.inputs != memory.channels() {
        return Err(Error::Shape(format!(
            "classifier is {}x{}, pool has {} identities of {} channels",
            classifier.classes,
            classifier.inputs,
            pool.len(),
            memory.channels()
        )));
    }
    if pool.channels() != memory.channels() {
        return Err(Error::Shape("pool and memory channel counts differ".into()));
    }
    let mut memory = memory.clone();
    let mut classifier = classifier.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = pool.batch(cfg.batch.min(pool.len()), cfg.samples_per_identity, cfg.sequence_length, &mut rng)?;
        let mut tape = Tape::new();
        let mvars = MemoryVars::register(&mut tape, &memory);
        let weight = tape.leaf(Tensor::new(vec![classifier.classes, classifier.inputs], classifier.weight.clone()));
        let bias = tape.leaf(Tensor::vector(classifier.bias.clone()));
        let loss = record_batch(&mut tape, &batch, &mvars, weight, bias, cfg.margin);
        let total = tape.value(loss.total).item();
        if !total.is_finite() {
            return Err(Error::Diverged { step, loss: total });
        }
        curve.push(LossRecord {
            step,
            ce: tape.value(loss.ce).item(),
            triplet: tape.value(loss.triplet).item(),
            total,
        });
        let grads = tape.backward(loss.total);
        for (layer, vars) in memory.layers_mut().zip(mvars.all()) {
            step_conv(layer, vars, &grads, cfg.learning_rate);
        }
        for (w, g) in classifier.weight.iter_mut().zip(grads.get(weight)) {
            *w -= cfg.learning_rate * g;
        }
        for (b, g) in classifier.bias.iter_mut().zip(grads.get(bias)) {
            *b -= cfg.learning_rate * g;
        }
    }
    Ok(FitOutcome { memory, classifier, curve })
}

/// Fraction of probes whose nearest gallery vector (Euclidean) has the same label.
pub fn rank1_retrieval(gallery: &[(usize, Vec<f64>)], probes: &[(usize, Vec<f64>)]) -> Result<f64> {
    if gallery.is_empty() || probes.is_empty() {
        return Err(Error::Invalid("rank-1 retrieval needs a gallery and probes".into()));
    }
    let mut hits = 0usize;
    for (label, p) in probes {
        let mut best = (f64::INFINITY, usize::MAX);
        for (gl, g) in gallery {
            if g.len() != p.len() {
                return Err(Error::Shape(format!("gallery vector of length {} vs probe {}", g.len(), p.len())));
            }
            let d = euclid(g, p);
            if d < best.0 {
                best = (d, *gl);
            }
        }
        if best.1 == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / probes.len() as f64)
}

/// Pooled embeddings tagged with their identity.
pub type LabeledEmbeddings = Vec<(usize, Vec<f64>)>;

/// Pooled embeddings of fresh crops: one per crop before aggregation, and
/// one per `length`-crop sequence after it.
pub fn embed_samples(
    pool_: &IdentityPool,
    memory: &MemoryWeights,
    per_identity: usize,
    length: usize,
    seed: u64,
) -> Result<(LabeledEmbeddings, LabeledEmbeddings)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pre = Vec::new();
    let mut post = Vec::new();
    for id in 0..pool_.len() {
        for _ in 0..per_identity {
            let mut state = None;
            for _ in 0..length.max(1) {
                let e = extract_embedding(&pool_.patch(id, &mut rng)?, memory)?;
                pre.push((id, pool(&e)));
                // extraction is the length-1 aggregation, so it seeds the state directly
                state = Some(match state {
                    None => MemoryState::from_map(e),
                    Some(h) => update(&h, &e, memory)?,
                });
            }
            post.push((id, pool(state.expect("length >= 1").state())));
        }
    }
    Ok((pre, post))
}

/// Mean intra-identity and inter-identity Euclidean distance.
pub fn separation(samples: &[(usize, Vec<f64>)]) -> (f64, f64) {
    let (mut intra, mut ni, mut inter, mut ne) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let d = euclid(&samples[i].1, &samples[j].1);
            if samples[i].0 == samples[j].0 {
                intra += d;
                ni += 1;
            } else {
                inter += d;
                ne += 1;
            }
        }
    }
    (intra / ni.max(1) as f64, inter / ne.max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrainConfig {
    pub learning_rate: f64,
    /// Step size for the memory weights; zero keeps them frozen.
    pub memory_learning_rate: f64,
    pub steps: usize,
    /// Scenes per step.
    pub batch: usize,
    pub seed: u64,
    pub o_min: f64,
    pub noise_sigma: f64,
    pub margin: f64,
}

impl Default for AttentionTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            memory_learning_rate: 0.0,
            steps: 300,
            batch: 8,
            seed: 0,
            o_min: 0.2,
            noise_sigma: 0.1,
            margin: 0.3,
        }
    }
}

/// An overlapped target crop with everything the refinement consumes.
#[derive(Clone, Debug)]
pub struct OcclusionSample {
    /// Crop at the target box, overlapped by the distractor.
    pub crop: FeatureMap,
    pub target_signature: Vec<f64>,
    pub distractor_signature: Vec<f64>,
    /// Unoccluded crops of each object; the first seeds the reference and
    /// the rest are folded in as memory updates.
    pub target_views: Vec<FeatureMap>,
    pub distractor_views: Vec<FeatureMap>,
    pub weight: f64,
}

fn aggregate(views: &[FeatureMap], memory: &MemoryWeights) -> Result<FeatureMap> {
    let mut state = init_state(&views[0], memory)?;
    for v in &views[1..] {
        state = update(&state, &extract_embedding(v, memory)?, memory)?;
    }
    Ok(state.into_state())
}

fn aggregate_tape(tape: &mut Tape, views: &[FeatureMap], mvars: &MemoryVars) -> Var {
    let first = tape.map_leaf(&views[0]);
    let mut h = init_state_tape(tape, first, mvars);
    for v in &views[1..] {
        let x = tape.map_leaf(v);
        let e = init_state_tape(tape, x, mvars);
        h = update_tape(tape, h, e, mvars);
    }
    h
}

impl OcclusionSample {
    pub fn references(&self, memory: &MemoryWeights) -> Result<(FeatureMap, FeatureMap)> {
        Ok((aggregate(&self.target_views, memory)?, aggregate(&self.distractor_views, memory)?))
    }
}

/// Longest view history behind a training reference.
const MAX_VIEWS: usize = 6;

const TARGET_BOX: BBox = BBox { left: 64.0, top: 32.0, width: 64.0, height: 64.0 };

pub fn sample_with(
    rng: &mut impl Rng,
    channels: usize,
    noise_sigma: f64,
    occlusion: OcclusionConfig,
    other_box: BBox,
    distractor_in_front: bool,
    crop_jitter: f64,
) -> Result<OcclusionSample> {
    let target = crate::sim::unit_vector(rng, channels);
    let other = crate::sim::unit_vector(rng, channels);
    let offset = if crop_jitter > 0.0 {
        (rng.random_range(-crop_jitter..=crop_jitter), rng.random_range(-crop_jitter..=crop_jitter))
    } else {
        (0.0, 0.0)
    };
    let crop = render_scene(&target, Some((&other, other_box, distractor_in_front)), TARGET_BOX, offset, noise_sigma, rng.random())?.crop;
    let views = |sig: &[f64], b: BBox, rng: &mut dyn rand::RngCore| -> Result<Vec<FeatureMap>> {
        let n = rng.random_range(1..=MAX_VIEWS);
        (0..n).map(|_| Ok(render_scene(sig, None, b, (0.0, 0.0), noise_sigma, rng.random())?.crop)).collect()
    };
    let target_views = views(&target, TARGET_BOX, rng)?;
    let distractor_views = views(&other, other_box, rng)?;
    Ok(OcclusionSample {
        crop,
        target_signature: target,
        distractor_signature: other,
        target_views,
        distractor_views,
        weight: weight_from_iou(crate::geometry::iou(&TARGET_BOX, &other_box), occlusion),
    })
}

/// A random two-object scene where the target overlaps a distractor beyond
/// `o_min`.
pub fn occlusion_sample(
    rng: &mut impl Rng,
    channels: usize,
    noise_sigma: f64,
    occlusion: OcclusionConfig,
) -> Result<OcclusionSample> {
    let other_box = loop {
        let dx = rng.random_range(-40.0..=40.0f64).round();
        let dy = rng.random_range(-12.0..=12.0f64).round();
        let b = TARGET_BOX.translated(dx, dy);
        if crate::geometry::iou(&TARGET_BOX, &b) > occlusion.o_min {
            break b;
        }
    };
    let distractor_in_front = rng.random_bool(0.7);
    sample_with(rng, channels, noise_sigma, occlusion, other_box, distractor_in_front, 2.0)
}

/// The target with its left or right half covered by a distractor in front.
pub fn half_covered_sample(
    rng: &mut impl Rng,
    channels: usize,
    noise_sigma: f64,
    occlusion: OcclusionConfig,
) -> Result<OcclusionSample> {
    let dx = if rng.random_bool(0.5) { 32.0 } else { -32.0 };
    sample_with(rng, channels, noise_sigma, occlusion, TARGET_BOX.translated(dx, 0.0), true, 0.0)
}

/// Records the attention objective for one sample: distance between the
/// pooled refined crop and the target signature, plus a hinge that keeps the
/// refined direction closer to the target than to the distractor.
fn attention_sample_loss(tape: &mut Tape, s: &OcclusionSample, mvars: &MemoryVars, avars: &AttentionVars, margin: f64) -> Var {
    let f = tape.map_leaf(&s.crop);
    let e = init_state_tape(tape, f, mvars);
    let tr = aggregate_tape(tape, &s.target_views, mvars);
    let dr = aggregate_tape(tape, &s.distractor_views, mvars);
    let refined = refine_tape(tape, f, e, tr, Some(dr), s.weight, avars, Branches::BOTH);
    let pf = pool_tape(tape, refined);
    let sig = tape.leaf(Tensor::vector(s.target_signature.clone()));
    let fit = tape.distance(pf, sig);
    let dsig = tape.leaf(Tensor::vector(s.distractor_signature.clone()));
    let unit = tape.l2_normalize(pf);
    let dt = tape.distance(unit, sig);
    let dd = tape.distance(unit, dsig);
    let gap = tape.sub(dt, dd);
    let gap = tape.add_scalar(gap, margin);
    let hinge = tape.relu(gap);
    tape.add(fit, hinge)
}

/// Gradient descent on θ, φ, ρ, optionally fine-tuning the memory as well.
///
/// With a positive memory rate the identity losses of [`fit`] on batches
/// from `identities` are added so the embedding stays discriminative.
/// Returns the trained model and the total loss per step.
pub fn fit_attention(
    model: &ModelWeights,
    identities: Option<(&IdentityPool, &Classifier, &TrainConfig)>,
    cfg: &AttentionTrainConfig,
) -> Result<(ModelWeights, Vec<f64>)> {
    let occlusion = OcclusionConfig::new(cfg.o_min)?;
    if !(cfg.learning_rate > 0.0) || cfg.memory_learning_rate < 0.0 || cfg.batch == 0 {
        return Err(Error::Invalid("attention training needs positive rates and a non-empty batch".into()));
    }
    let tune_memory = cfg.memory_learning_rate > 0.0;
    let mut model = model.clone();
    let mut classifier = identities.map(|(_, c, _)| c.clone());
    let channels = model.channels();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let samples = (0..cfg.batch)
            .map(|_| occlusion_sample(&mut rng, channels, cfg.noise_sigma, occlusion))
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let avars = AttentionVars::register(&mut tape, &model.attention);
        let mvars = MemoryVars::register(&mut tape, &model.memory);
        let terms: Vec<Var> = samples.iter().map(|s| attention_sample_loss(&mut tape, s, &mvars, &avars, cfg.margin)).collect();
        let sum = tape.add_all(&terms);
        let mut loss = tape.scale(sum, 1.0 / terms.len() as f64);
        let mut head = None;
        if let (true, Some((pool_, _, tcfg)), Some(clf)) = (tune_memory, identities, classifier.as_ref()) {
            let batch = pool_.batch(tcfg.batch.min(pool_.len()), tcfg.samples_per_identity, tcfg.sequence_length, &mut rng)?;
            let weight = tape.leaf(Tensor::new(vec![clf.classes, clf.inputs], clf.weight.clone()));
            let bias = tape.leaf(Tensor::vector(clf.bias.clone()));
            let id_loss = record_batch(&mut tape, &batch, &mvars, weight, bias, cfg.margin);
            loss = tape.add(loss, id_loss.total);
            head = Some((weight, bias));
        }
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        curve.push(value);
        let grads = tape.backward(loss);
        step_conv(&mut model.attention.theta, avars.theta, &grads, cfg.learning_rate);
        step_conv(&mut model.attention.phi, avars.phi, &grads, cfg.learning_rate);
        step_conv(&mut model.attention.rho, avars.rho, &grads, cfg.learning_rate);
        if tune_memory {
            for (layer, vars) in model.memory.layers_mut().zip(mvars.all()) {
                step_conv(layer, vars, &grads, cfg.memory_learning_rate);
            }
            if let (Some(clf), Some((weight, bias))) = (classifier.as_mut(), head) {
                for (w, g) in clf.weight.iter_mut().zip(grads.get(weight)) {
                    *w -= cfg.memory_learning_rate * g;
                }
                for (b, g) in clf.bias.iter_mut().zip(grads.get(bias)) {
                    *b -= cfg.memory_learning_rate * g;
                }
            }
        }
    }
    Ok((model, curve))
}

/// Fraction of `trials` half-covered crops whose pooled vector moves closer
/// (in cosine) to the target signature after refinement, with the mean
/// cosine before and after.
pub fn focus_rate(model: &ModelWeights, trials: usize, seed: u64, noise_sigma: f64, o_min: f64) -> Result<(f64, f64, f64)> {
    let occlusion = OcclusionConfig::new(o_min)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut wins, mut before, mut after) = (0usize, 0.0, 0.0);
    for _ in 0..trials {
        let s = half_covered_sample(&mut rng, model.channels(), noise_sigma, occlusion)?;
        let (tr, dr) = s.references(&model.memory)?;
        let e = extract_embedding(&s.crop, &model.memory)?;
        let refined = crate::attention::refine(&s.crop, &e, &tr, Some(&dr), s.weight, &model.attention)?;
        let c0 = cosine(&pool(&s.crop), &s.target_signature);
        let c1 = cosine(&pool(&refined), &s.target_signature);
        wins += usize::from(c1 > c0);
        before += c0;
        after += c1;
    }
    let n = trials.max(1) as f64;
    Ok((wins as f64 / n, before / n, after / n))
}

/// Everything behind a trained model: identity training of the memory on a
/// synthetic pool, then joint fitting of the attention with memory
/// fine-tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub channels: usize,
    pub identities: usize,
    pub pool_seed: u64,
    /// Seed for the initial weights.
    pub init_seed: u64,
    pub embed_steps: usize,
    pub embed_learning_rate: f64,
    pub attention_steps: usize,
    pub attention_learning_rate: f64,
    pub memory_learning_rate: f64,
    pub margin: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            identities: 64,
            pool_seed: 11,
            init_seed: 7,
            embed_steps: 800,
            embed_learning_rate: 0.05,
            attention_steps: 600,
            attention_learning_rate: 0.5,
            memory_learning_rate: 0.05,
            margin: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: ModelWeights,
    pub classifier: Classifier,
    pub embed_curve: Vec<LossRecord>,
    pub attention_curve: Vec<f64>,
}

/// Runs the two training stages. The attention output projection starts at
/// zero so the untrained refinement is the identity.
pub fn pretrain(cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let memory = MemoryWeights::random(cfg.channels, &mut rng);
    let mut attention = crate::attention::AttentionWeights::random(cfg.channels, &mut rng);
    attention.rho = ConvLayer::zeros(cfg.channels, cfg.channels, 1);
    let classifier = Classifier::random(cfg.identities, cfg.channels, &mut rng);
    let identities = IdentityPool::new(cfg.identities, cfg.channels, cfg.pool_seed)?;
    let tcfg = TrainConfig {
        steps: cfg.embed_steps,
        learning_rate: cfg.embed_learning_rate,
        margin: cfg.margin,
        batch: 4,
        ..TrainConfig::default()
    };
    let embedded = fit(&identities, &memory, &classifier, &tcfg)?;
    let acfg = AttentionTrainConfig {
        steps: cfg.attention_steps,
        learning_rate: cfg.attention_learning_rate,
        memory_learning_rate: cfg.memory_learning_rate,
        margin: cfg.margin,
        ..AttentionTrainConfig::default()
    };
    let start = ModelWeights { attention, memory: embedded.memory };
    let (model, attention_curve) = fit_attention(&start, Some((&identities, &embedded.classifier, &tcfg)), &acfg)?;
    Ok(PretrainOutcome { model, classifier: embedded.classifier, embed_curve: embedded.curve, attention_curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_examples() {
        assert!((ce_loss(&[0.0; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(ce_loss(&[50.0, 0.0, 0.0], 0).unwrap() <= 1e-20);
        assert!((ce_loss(&[1.0, 0.0], 1).unwrap() - (1.0 + 1f64.exp()).ln()).abs() < 1e-12);
        assert!(ce_loss(&[], 0).is_err());
        assert!(ce_loss(&[1.0], 1).is_err());
    }

    #[test]
    fn triplet_examples() {
        let a = [0.0, 0.0];
        assert!((triplet_loss(&a, &a, &a, 0.3).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(triplet_loss(&a, &[0.1, 0.0], &[0.5, 0.0], 0.3).unwrap(), 0.0);
        assert!((triplet_loss(&a, &[0.5, 0.0], &[0.1, 0.0], 0.3).unwrap() - 0.7).abs() < 1e-12);
        assert!(triplet_loss(&a, &[0.0], &a, 0.3).is_err());
    }

    #[test]
    fn rank1_trivial_cases() {
        let g = vec![(0, vec![1.0, 0.0]), (1, vec![0.0, 1.0])];
        assert_eq!(rank1_retrieval(&g, &g).unwrap(), 1.0);
        assert_eq!(rank1_retrieval(&g, &[(1, vec![0.0, 1.0])]).unwrap(), 1.0);
        assert!(rank1_retrieval(&[], &g).is_err());
    }

    #[test]
    fn zero_steps_leave_weights_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let memory = MemoryWeights::random(4, &mut rng);
        let pool_ = IdentityPool::new(3, 4, 2).unwrap();
        let clf = Classifier::random(3, 4, &mut rng);
        let cfg = TrainConfig { steps: 0, batch: 2, ..TrainConfig::default() };
        let out = fit(&pool_, &memory, &clf, &cfg).unwrap();
        assert_eq!(out.memory, memory);
        assert_eq!(out.classifier, clf);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let memory = MemoryWeights::random(4, &mut rng);
        let pool_ = IdentityPool::new(3, 4, 2).unwrap();
        let clf = Classifier::random(3, 4, &mut rng);
        let cfg = TrainConfig { steps: 3, batch: 2, ..TrainConfig::default() };
        let a = fit(&pool_, &memory, &clf, &cfg).unwrap();
        let b = fit(&pool_, &memory, &clf, &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.memory, b.memory);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TrainConfig { margin: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: -1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
