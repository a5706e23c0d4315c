//! Online tracking: attention-refined position search, memory update,
//! re-identification of lost tracks and the track lifecycle.

mod hungarian;
pub mod roi;

pub use hungarian::{assignment_cost, hungarian};
pub use roi::{roi_extract, ROI_SIZE};

use serde::{Deserialize, Serialize};

use crate::attention::{refine_with, Branches};
use crate::error::{Error, Result};
use crate::geometry::{iou, select_distractor, weight_from_iou, BBox, OcclusionConfig};
use crate::memory::{cosine, extract_embedding, init_state, pool, update, MemoryState};
use crate::motio::{DetRecord, ResultRecord};
use crate::sim::FeatureFrame;
use crate::tensor::FeatureMap;
use crate::weights::ModelWeights;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub o_min: f64,
    /// Largest cosine distance accepted when re-identifying a lost track.
    pub reid_distance_threshold: f64,
    /// Search similarity below which an active track is declared lost.
    pub prediction_score_threshold: f64,
    pub lost_patience: u32,
    /// Half-width of the square of integer shifts searched per frame.
    pub search_radius: u32,
    /// Minimum detection confidence for starting a track.
    pub detection_threshold: f64,
    /// IoU at which a detection counts as already covered by an active track.
    pub claim_iou: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            o_min: 0.2,
            reid_distance_threshold: 0.6,
            prediction_score_threshold: 0.8,
            lost_patience: 30,
            search_radius: 12,
            detection_threshold: 0.5,
            claim_iou: 0.5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        OcclusionConfig::new(self.o_min)?;
        let positive = [
            ("reid_distance_threshold", self.reid_distance_threshold),
            ("prediction_score_threshold", self.prediction_score_threshold),
            ("claim_iou", self.claim_iou),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return Err(Error::Invalid("detection_threshold must lie in [0, 1]".into()));
        }
        if self.lost_patience == 0 {
            return Err(Error::Invalid("lost_patience must be at least 1".into()));
        }
        Ok(())
    }

    pub fn occlusion(&self) -> OcclusionConfig {
        OcclusionConfig { o_min: self.o_min }
    }
}

/// Which parts of the model are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub target_attention: bool,
    pub distractor_attention: bool,
    pub memory: bool,
    pub adaptive_weight: bool,
}

impl Variant {
    pub const FULL: Variant = Variant { target_attention: true, distractor_attention: true, memory: true, adaptive_weight: true };
    /// Attention and memory all off.
    pub const DISABLED: Variant =
        Variant { target_attention: false, distractor_attention: false, memory: false, adaptive_weight: true };

    /// The five single-component ablations plus the full model.
    pub fn ablation_rows() -> [(&'static str, Variant); 6] {
        let f = Variant::FULL;
        [
            ("w/o TA & DA", Variant { target_attention: false, distractor_attention: false, ..f }),
            ("w/o DA", Variant { distractor_attention: false, ..f }),
            ("w/o TA", Variant { target_attention: false, ..f }),
            ("w/o adaptive weight", Variant { adaptive_weight: false, ..f }),
            ("w/o memory aggregation", Variant { memory: false, ..f }),
            ("Full model", f),
        ]
    }

    pub fn branches(&self) -> Branches {
        Branches { target: self.target_attention, distractor: self.distractor_attention }
    }

    /// Short machine-friendly tag, e.g. `ta1-da0-mem1-aw1`.
    pub fn tag(&self) -> String {
        format!(
            "ta{}-da{}-mem{}-aw{}",
            self.target_attention as u8, self.distractor_attention as u8, self.memory as u8, self.adaptive_weight as u8
        )
    }
}

impl Default for Variant {
    fn default() -> Self {
        Variant::FULL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackState {
    Active,
    Lost,
    Removed,
}

#[derive(Clone, Debug)]
pub struct Track {
    pub id: u32,
    pub state: TrackState,
    pub last_box: BBox,
    /// `(frame, box)` for every frame the track was active.
    pub history: Vec<(u32, BBox)>,
    pub memory: MemoryState,
    pub frames_since_seen: u32,
    /// `pool(memory)`, refreshed whenever the memory changes.
    pub pooled: Vec<f64>,
    /// Distractor chosen in the most recent frame.
    pub distractor: Option<u32>,
    /// Crop at `last_box` from the frame that produced it.
    template: FeatureMap,
    /// `extract_embedding(template)`.
    embedding: FeatureMap,
}

impl Track {
    /// `last_box` moved on by the displacement of the last two active frames.
    pub fn expected_box(&self) -> BBox {
        match self.history.as_slice() {
            [.., (f0, b0), (f1, b1)] if f1 == &(f0 + 1) => b1.translated(b1.left - b0.left, b1.top - b0.top),
            _ => self.last_box,
        }
    }

    fn start(id: u32, frame_index: u32, bbox: BBox, template: FeatureMap, weights: &ModelWeights) -> Result<Self> {
        let memory = init_state(&template, &weights.memory)?;
        let embedding = memory.state().clone();
        Ok(Self {
            id,
            state: TrackState::Active,
            last_box: bbox,
            history: vec![(frame_index, bbox)],
            pooled: pool(memory.state()),
            memory,
            frames_since_seen: 0,
            distractor: None,
            template,
            embedding,
        })
    }

    pub fn reference(&self) -> &FeatureMap {
        self.memory.state()
    }

    /// Fold a (refined) embedding into the reference: a GRU step with memory
    /// aggregation, plain replacement without.
    fn absorb(&mut self, refined: FeatureMap, weights: &ModelWeights, variant: Variant) -> Result<()> {
        self.memory = if variant.memory {
            update(&self.memory, &refined, &weights.memory)?
        } else {
            MemoryState::from_map(refined)
        };
        self.pooled = pool(self.memory.state());
        Ok(())
    }
}

/// Result of the position search for one track.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub bbox: BBox,
    pub score: f64,
    /// Refinement weight that was applied.
    pub weight: f64,
}

fn refinement_weight(track: &Track, distractor: Option<&Track>, cfg: &TrackerConfig, variant: Variant) -> f64 {
    if !variant.adaptive_weight {
        return 1.0;
    }
    distractor.map_or(0.0, |d| weight_from_iou(iou(&track.expected_box(), &d.expected_box()), cfg.occlusion()))
}

/// Projection of every grid cell onto `direction`, as a one-channel frame.
fn project(frame: &FeatureFrame, direction: &[f64]) -> Result<FeatureFrame> {
    let (c, h, w) = frame.map.shape();
    let mut plane = vec![0.0; h * w];
    for (ch, d) in direction.iter().enumerate().take(c) {
        for (o, v) in plane.iter_mut().zip(frame.map.plane(ch)) {
            *o += d * v;
        }
    }
    FeatureFrame::new(FeatureMap::new(1, h, w, plane)?, frame.cell_size, frame.world_width, frame.world_height)
}

/// Search integer shifts of `base` within `radius` for the box whose cell
/// coverage pattern best matches the grid projected onto the unit vector
/// `direction` (normalised correlation).
///
/// The returned score is the least-squares amplitude of that pattern in the
/// projection: about 1 when the box shows the template identity alone, and
/// lower as background or another identity takes over part of it.
///
/// Shifts are scanned on a stride-2 lattice and the best lattice point is
/// polished over its 8 neighbours. Ties prefer the smaller shift.
pub fn search(frame: &FeatureFrame, base: &BBox, direction: &[f64], radius: u32) -> Result<(BBox, f64)> {
    if direction.len() != frame.map.channels() {
        return Err(Error::Shape(format!(
            "search direction of length {} for a {}-channel frame",
            direction.len(),
            frame.map.channels()
        )));
    }
    let projected = project(frame, direction)?;
    let r = radius as i64;
    let world = frame.world();
    let mut best: Option<(f64, f64, i64, i64, i64)> = None;
    let visit = |dx: i64, dy: i64, best: &mut Option<(f64, f64, i64, i64, i64)>| {
        if dx.abs() > r || dy.abs() > r {
            return;
        }
        let candidate = base.translated(dx as f64, dy as f64);
        if !candidate.intersects(&world) {
            return;
        }
        let (dot, norm2) = roi::coverage_match(&projected, 0, &candidate);
        if norm2 == 0.0 {
            return;
        }
        let ncc = dot / norm2.sqrt();
        let dist = dx * dx + dy * dy;
        let better = match best {
            None => true,
            Some((s, _, d, bx, by)) => ncc > *s || (ncc == *s && (dist < *d || (dist == *d && (dy, dx) < (*by, *bx)))),
        };
        if better {
            *best = Some((ncc, dot / norm2, dist, dx, dy));
        }
    };
    let lattice = |v: i64| v - v.rem_euclid(2);
    for dy in (lattice(-r)..=r).step_by(2) {
        for dx in (lattice(-r)..=r).step_by(2) {
            visit(dx, dy, &mut best);
        }
    }
    if let Some((_, _, _, cx, cy)) = best {
        for (ox, oy) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
            visit(cx + ox, cy + oy, &mut best);
        }
    }
    best.map(|(_, amp, _, dx, dy)| (base.translated(dx as f64, dy as f64), amp))
        .ok_or_else(|| Error::Invalid("no search position intersects the world".into()))
}

/// Where `track` moved in `frame`.
///
/// The cached template is refined by target attention from the track's
/// reference and, when a distractor is given, by subtracting distractor
/// attention from its reference; the refined crop then steers the search.
pub fn predict_position(
    track: &Track,
    distractor: Option<&Track>,
    frame: &FeatureFrame,
    cfg: &TrackerConfig,
    weights: &ModelWeights,
    variant: Variant,
) -> Result<Prediction> {
    let w = refinement_weight(track, distractor, cfg, variant);
    let refined = refine_with(
        &track.template,
        &track.embedding,
        track.reference(),
        distractor.map(Track::reference),
        w,
        &weights.attention,
        variant.branches(),
    )?;
    let (bbox, score) = search(frame, &track.last_box, &pool(&refined), cfg.search_radius)?;
    Ok(Prediction { bbox, score, weight: w })
}

/// One output row for an active track.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameOutput {
    pub id: u32,
    pub bbox: BBox,
    pub score: f64,
}

/// Per-sequence tracker state.
#[derive(Clone, Debug)]
pub struct Tracker {
    config: TrackerConfig,
    variant: Variant,
    weights: ModelWeights,
    tracks: Vec<Track>,
    next_id: u32,
    last_frame: Option<u32>,
    removed: Vec<u32>,
}

impl Tracker {
    pub fn new(config: TrackerConfig, variant: Variant, weights: ModelWeights) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, variant, weights, tracks: Vec::new(), next_id: 1, last_frame: None, removed: Vec::new() })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Active and lost tracks, in id order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn removed_ids(&self) -> &[u32] {
        &self.removed
    }

    /// Advance by one frame. Frame indices are 1-based and strictly increasing.
    pub fn step(&mut self, frame_index: u32, frame: &FeatureFrame, detections: &[DetRecord]) -> Result<Vec<FrameOutput>> {
        if frame_index == 0 {
            return Err(Error::Invalid("frame indices are 1-based".into()));
        }
        if let Some(last) = self.last_frame {
            if frame_index <= last {
                return Err(Error::OutOfOrder { last, got: frame_index });
            }
        }
        if frame.map.channels() != self.weights.channels() {
            return Err(Error::Shape(format!(
                "frame has {} channels, model expects {}",
                frame.map.channels(),
                self.weights.channels()
            )));
        }
        self.last_frame = Some(frame_index);
        let cfg = self.config;
        let variant = self.variant;
        let weights = &self.weights;

        // (a) distractors and (b) predictions, all from the pre-step state
        let active: Vec<usize> = (0..self.tracks.len()).filter(|&i| self.tracks[i].state == TrackState::Active).collect();
        let mut plans = Vec::with_capacity(active.len());
        for &i in &active {
            let t = &self.tracks[i];
            let d_id = select_distractor(t.id, active.iter().map(|&j| (self.tracks[j].id, &self.tracks[j].last_box)));
            let d = d_id.and_then(|id| self.tracks.iter().find(|o| o.id == id));
            let pred = predict_position(t, d, frame, &cfg, weights, variant)?;
            let d_ref = d.map(|d| d.reference().clone());
            plans.push((i, d_id, d_ref, pred));
        }

        // (c) commit in id order: lose weak tracks, refresh and absorb the rest
        let mut scores = std::collections::BTreeMap::new();
        let mut just_lost = Vec::new();
        for (i, d_id, d_ref, pred) in plans {
            let t = &mut self.tracks[i];
            t.distractor = d_id;
            if pred.score < cfg.prediction_score_threshold {
                t.state = TrackState::Lost;
                t.frames_since_seen = 1;
                just_lost.push(t.id);
                continue;
            }
            let template = roi_extract(frame, &pred.bbox)?;
            let embedding = extract_embedding(&template, &weights.memory)?;
            let refined = refine_with(
                &embedding,
                &embedding,
                t.reference(),
                d_ref.as_ref(),
                pred.weight,
                &weights.attention,
                variant.branches(),
            )?;
            t.absorb(refined, weights, variant)?;
            t.template = template;
            t.embedding = embedding;
            t.last_box = pred.bbox;
            t.history.push((frame_index, pred.bbox));
            scores.insert(t.id, pred.score);
        }

        // (g) detections already covered by an active track
        let mut claimed: Vec<bool> = detections
            .iter()
            .map(|det| {
                self.tracks
                    .iter()
                    .any(|t| t.state == TrackState::Active && iou(&t.last_box, &det.bbox) >= cfg.claim_iou)
            })
            .collect();

        // (d) re-identify lost tracks among unclaimed detections
        let lost: Vec<usize> = (0..self.tracks.len()).filter(|&i| self.tracks[i].state == TrackState::Lost).collect();
        let open: Vec<usize> = (0..detections.len())
            .filter(|&k| !claimed[k] && detections[k].bbox.intersects(&frame.world()))
            .collect();
        let mut crops = std::collections::BTreeMap::new();
        for &k in &open {
            let template = roi_extract(frame, &detections[k].bbox)?;
            let embedding = extract_embedding(&template, &weights.memory)?;
            crops.insert(k, (template, embedding));
        }
        let mut reactivated = Vec::new();
        if !lost.is_empty() && !open.is_empty() {
            let cost: Vec<Vec<f64>> = lost
                .iter()
                .map(|&i| open.iter().map(|k| 1.0 - cosine(&self.tracks[i].pooled, &pool(&crops[k].1))).collect())
                .collect();
            for (r, c) in hungarian(&cost)? {
                if cost[r][c] >= cfg.reid_distance_threshold {
                    continue;
                }
                let (i, k) = (lost[r], open[c]);
                let (template, embedding) = crops.remove(&k).expect("crop computed for every open detection");
                let t = &mut self.tracks[i];
                t.absorb(embedding.clone(), weights, variant)?;
                t.template = template;
                t.embedding = embedding;
                t.state = TrackState::Active;
                t.frames_since_seen = 0;
                t.last_box = detections[k].bbox;
                t.history.push((frame_index, t.last_box));
                scores.insert(t.id, 1.0 - cost[r][c]);
                claimed[k] = true;
                reactivated.push(i);
            }
        }

        // (f) age lost tracks; drop those past patience
        for (i, t) in self.tracks.iter_mut().enumerate() {
            if t.state == TrackState::Lost && !reactivated.contains(&i) && !just_lost.contains(&t.id) {
                t.frames_since_seen += 1;
            }
            if t.state == TrackState::Lost && t.frames_since_seen > cfg.lost_patience {
                t.state = TrackState::Removed;
                self.removed.push(t.id);
            }
        }
        self.tracks.retain(|t| t.state != TrackState::Removed);

        // (e) start tracks from confident unclaimed detections
        for &k in &open {
            if claimed[k] || detections[k].confidence < cfg.detection_threshold {
                continue;
            }
            let Some((template, _)) = crops.remove(&k) else { continue };
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track::start(id, frame_index, detections[k].bbox, template, weights)?);
            scores.insert(id, detections[k].confidence);
            claimed[k] = true;
        }

        Ok(self
            .tracks
            .iter()
            .filter(|t| t.state == TrackState::Active)
            .map(|t| FrameOutput { id: t.id, bbox: t.last_box, score: scores[&t.id] })
            .collect())
    }
}

/// Flatten per-frame outputs into result-file records.
pub fn to_records(frames: &[(u32, Vec<FrameOutput>)]) -> Vec<ResultRecord> {
    frames
        .iter()
        .flat_map(|(f, outs)| outs.iter().map(move |o| ResultRecord { frame: *f, id: o.id, bbox: o.bbox, conf: o.score }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FeatureMap;

    fn weights() -> ModelWeights {
        ModelWeights::random(4, 3)
    }

    fn blank(c: usize) -> FeatureFrame {
        FeatureFrame::new(FeatureMap::zeros(c, 8, 8), 8.0, 64.0, 64.0).unwrap()
    }

    #[test]
    fn empty_frame_gives_empty_output() {
        let mut t = Tracker::new(TrackerConfig::default(), Variant::FULL, weights()).unwrap();
        assert!(t.step(1, &blank(4), &[]).unwrap().is_empty());
    }

    #[test]
    fn out_of_order_frames_rejected() {
        let mut t = Tracker::new(TrackerConfig::default(), Variant::FULL, weights()).unwrap();
        t.step(2, &blank(4), &[]).unwrap();
        assert!(matches!(t.step(2, &blank(4), &[]), Err(Error::OutOfOrder { last: 2, got: 2 })));
        assert!(t.step(1, &blank(4), &[]).is_err());
        assert!(t.step(3, &blank(3), &[]).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            TrackerConfig { lost_patience: 0, ..TrackerConfig::default() },
            TrackerConfig { reid_distance_threshold: 0.0, ..TrackerConfig::default() },
            TrackerConfig { o_min: 1.0, ..TrackerConfig::default() },
        ] {
            assert!(Tracker::new(cfg, Variant::FULL, weights()).is_err());
        }
    }

    #[test]
    fn ablation_rows_are_distinct() {
        let rows = Variant::ablation_rows();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                assert_ne!(rows[i].1, rows[j].1);
            }
        }
        assert_eq!(Variant::FULL.tag(), "ta1-da1-mem1-aw1");
    }

    #[test]
    fn search_finds_shifted_blob() {
        let sig = [0.0, 1.0, 0.0, 0.5];
        let map = FeatureMap::from_fn(4, 12, 12, |c, y, x| if (4..8).contains(&y) && (5..9).contains(&x) { sig[c] } else { 0.0 });
        let frame = FeatureFrame::new(map, 8.0, 96.0, 96.0).unwrap();
        let target = BBox { left: 40.0, top: 32.0, width: 32.0, height: 32.0 };
        let direction = pool(&roi_extract(&frame, &target).unwrap());
        let norm = 1.25f64.sqrt();
        for (dx, dy) in [(-5.0, 3.0), (0.0, 0.0), (7.0, -8.0)] {
            let (found, score) = search(&frame, &target.translated(dx, dy), &direction, 8).unwrap();
            assert_eq!(found, target);
            assert!((score - norm).abs() < 1e-12);
        }
    }
}
