//! Synthetic identity data: crops of a known object, optionally overlapped by
//! another object, rendered through the same compositing as the simulator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::sim::render_frame;
use crate::sim::{compute_visibility, unit_vector, Scenario, SimObject};
use crate::tensor::FeatureMap;
use crate::tracker::roi::roi_extract;

const WORLD_W: u32 = 192;
const WORLD_H: u32 = 128;
const SIZE: f64 = 64.0;
const HOME: (f64, f64) = (64.0, 32.0);

/// How training crops are rendered.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchConfig {
    pub noise_sigma: f64,
    /// Probability that a second object overlaps the crop.
    pub occluder_rate: f64,
    /// Minimum visible fraction of the labelled object.
    pub min_visibility: f64,
    /// Maximum misalignment of the crop box, in pixels.
    pub crop_jitter: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { noise_sigma: 0.1, occluder_rate: 0.5, min_visibility: 0.5, crop_jitter: 2.0 }
    }
}

/// One rendered two-object scene, cropped at the target.
#[derive(Clone, Debug)]
pub struct Scene {
    pub crop: FeatureMap,
    pub target_box: BBox,
    pub other_box: Option<BBox>,
    pub target_visibility: f64,
}

impl Scene {
    pub fn overlap(&self) -> f64 {
        self.other_box.map_or(0.0, |o| iou(&self.target_box, &o))
    }
}

/// Renders the target (and optionally another object, given as signature,
/// box and whether it is in front) and crops at the target box shifted by
/// `crop_offset`.
pub fn render_scene(
    target: &[f64],
    other: Option<(&[f64], BBox, bool)>,
    target_box: BBox,
    crop_offset: (f64, f64),
    noise_sigma: f64,
    seed: u64,
) -> Result<Scene> {
    let mut objects = vec![SimObject {
        id: 1,
        depth: 0,
        signature: target.to_vec(),
        boxes: vec![target_box],
        visibility: vec![1.0],
    }];
    if let Some((sig, b, in_front)) = other {
        objects[0].depth = u32::from(in_front);
        objects.push(SimObject {
            id: 2,
            depth: u32::from(!in_front),
            signature: sig.to_vec(),
            boxes: vec![b],
            visibility: vec![1.0],
        });
    }
    let boxes: Vec<BBox> = objects.iter().map(|o| o.boxes[0]).collect();
    let depths: Vec<u32> = objects.iter().map(|o| o.depth).collect();
    let vis = compute_visibility(&boxes, &depths)?;
    let scenario = Scenario {
        seed,
        frames: 1,
        world_width: WORLD_W,
        world_height: WORLD_H,
        noise_sigma,
        background: vec![0.0; target.len()],
        objects,
        detections: vec![Vec::new()],
    };
    let frame = render_frame(&scenario, 0, seed)?;
    let crop = roi_extract(&frame, &target_box.translated(crop_offset.0, crop_offset.1))?;
    Ok(Scene { crop, target_box, other_box: other.map(|o| o.1), target_visibility: vis[0] })
}

/// A fixed set of identities with random unit signatures.
#[derive(Clone, Debug)]
pub struct IdentityPool {
    signatures: Vec<Vec<f64>>,
    pub patches: PatchConfig,
}

impl IdentityPool {
    pub fn new(identities: usize, channels: usize, seed: u64) -> Result<Self> {
        if identities < 2 {
            return Err(Error::Invalid("an identity pool needs at least 2 identities".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signatures = (0..identities).map(|_| unit_vector(&mut rng, channels)).collect();
        Ok(Self { signatures, patches: PatchConfig::default() })
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.signatures[0].len()
    }

    pub fn signature(&self, id: usize) -> &[f64] {
        &self.signatures[id]
    }

    /// One crop of identity `id`, possibly overlapped by another identity
    /// drawn from the pool.
    pub fn patch(&self, id: usize, rng: &mut impl Rng) -> Result<FeatureMap> {
        let p = &self.patches;
        let jitter = |rng: &mut dyn rand::RngCore| {
            if p.crop_jitter > 0.0 {
                (rng.random_range(-p.crop_jitter..=p.crop_jitter), rng.random_range(-p.crop_jitter..=p.crop_jitter))
            } else {
                (0.0, 0.0)
            }
        };
        let target_box = BBox { left: HOME.0, top: HOME.1, width: SIZE, height: SIZE };
        let offset = jitter(rng);
        let seed = rng.random::<u64>();
        if !rng.random_bool(p.occluder_rate) {
            return Ok(render_scene(&self.signatures[id], None, target_box, offset, p.noise_sigma, seed)?.crop);
        }
        let other = loop {
            let o = rng.random_range(0..self.signatures.len());
            if o != id {
                break o;
            }
        };
        loop {
            let dx = rng.random_range(-56.0..=56.0f64).round();
            let dy = rng.random_range(-24.0..=24.0f64).round();
            let in_front = rng.random_bool(0.5);
            let other_box = target_box.translated(dx, dy);
            let scene = render_scene(
                &self.signatures[id],
                Some((&self.signatures[other], other_box, in_front)),
                target_box,
                offset,
                p.noise_sigma,
                seed,
            )?;
            if scene.target_visibility >= p.min_visibility {
                return Ok(scene.crop);
            }
        }
    }

    /// `identities` distinct labels, `samples` sequences each, every sequence
    /// `length` crops long.
    pub fn batch(&self, identities: usize, samples: usize, length: usize, rng: &mut impl Rng) -> Result<IdentityBatch> {
        if identities > self.len() {
            return Err(Error::Invalid(format!("batch of {identities} identities from a pool of {}", self.len())));
        }
        let mut ids: Vec<usize> = (0..self.len()).collect();
        for i in 0..identities {
            let j = rng.random_range(i..ids.len());
            ids.swap(i, j);
        }
        let mut labels = Vec::new();
        let mut sequences = Vec::new();
        for &id in &ids[..identities] {
            for _ in 0..samples {
                labels.push(id);
                sequences.push((0..length).map(|_| self.patch(id, rng)).collect::<Result<Vec<_>>>()?);
            }
        }
        let batch = IdentityBatch { labels, sequences };
        batch.validate()?;
        Ok(batch)
    }
}

/// Crop sequences grouped by identity label.
#[derive(Clone, Debug)]
pub struct IdentityBatch {
    pub labels: Vec<usize>,
    pub sequences: Vec<Vec<FeatureMap>>,
}

impl IdentityBatch {
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.sequences.len() {
            return Err(Error::Invalid("one label per sequence required".into()));
        }
        if self.sequences.iter().any(|s| s.is_empty()) {
            return Err(Error::Invalid("empty sequence in batch".into()));
        }
        let mut counts = std::collections::BTreeMap::new();
        for l in &self.labels {
            *counts.entry(*l).or_insert(0usize) += 1;
        }
        if counts.len() < 2 || counts.values().any(|&n| n < 2) {
            return Err(Error::Invalid("a batch needs at least 2 identities with at least 2 samples each".into()));
        }
        Ok(())
    }
}
