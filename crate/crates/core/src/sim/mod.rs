//! Synthetic occlusion scenarios: ground-truth motion, depth-ordered
//! visibility, feature-frame rendering and detection dropout.

mod detections;
mod export;
mod render;

pub use detections::{emit_detections, DropoutLaw};
pub use export::{load_sequence, write_sequence, Sidecar, SIDECAR_FILE};
pub use render::{render_frame, FeatureFrame, CELL_SIZE};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::motio::DetRecord;

/// How objects move relative to each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    /// Every object in its own lane; no overlaps.
    Parallel,
    /// Objects in each lane pair walk towards each other and pass.
    Crossing,
    /// A faster object overtakes a slower one walking the same way.
    Follow,
}

impl std::str::FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Motion::Parallel),
            "crossing" => Ok(Motion::Crossing),
            "follow" => Ok(Motion::Follow),
            other => Err(Error::Invalid(format!("unknown motion pattern `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub world_width: u32,
    pub world_height: u32,
    pub frames: usize,
    pub channels: usize,
    pub objects: usize,
    pub object_width: u32,
    pub object_height: u32,
    pub motion: Motion,
    /// Lower bound on the peak pairwise IoU reached by crossing/follow pairs.
    pub peak_iou: f64,
    pub min_speed: u32,
    pub max_speed: u32,
    /// Standard deviation of per-cell feature noise.
    pub noise_sigma: f64,
    /// Norm of the background signature carried by empty cells.
    pub background_level: f64,
    /// Standard deviation, in pixels, of detection box jitter.
    pub detection_jitter: f64,
    pub dropout: DropoutLaw,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            world_width: 384,
            world_height: 192,
            frames: 32,
            channels: 16,
            objects: 2,
            object_width: 64,
            object_height: 64,
            motion: Motion::Crossing,
            peak_iou: 0.7,
            min_speed: 5,
            max_speed: 8,
            noise_sigma: 0.1,
            background_level: 0.0,
            detection_jitter: 1.0,
            dropout: DropoutLaw::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.peak_iou) {
            return Err(Error::Invalid(format!("peak IoU must lie in [0, 1], got {}", self.peak_iou)));
        }
        if self.frames == 0 || self.channels == 0 {
            return Err(Error::Invalid("frames and channels must be positive".into()));
        }
        if self.min_speed > self.max_speed {
            return Err(Error::Invalid("min_speed exceeds max_speed".into()));
        }
        if self.object_width == 0 || self.object_height == 0 {
            return Err(Error::Invalid("objects need a positive size".into()));
        }
        if self.object_width > self.world_width || self.object_height > self.world_height {
            return Err(Error::Invalid("objects do not fit in the world".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.detection_jitter >= 0.0 && self.background_level >= 0.0) {
            return Err(Error::Invalid("noise levels must be non-negative".into()));
        }
        self.dropout.validate()
    }
}

/// One ground-truth object over the whole scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    /// 1-based identity.
    pub id: u32,
    /// Depth rank; 0 is front-most.
    pub depth: u32,
    pub signature: Vec<f64>,
    pub boxes: Vec<BBox>,
    /// Visible fraction per frame, rounded to two decimals.
    pub visibility: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub frames: usize,
    pub world_width: u32,
    pub world_height: u32,
    pub noise_sigma: f64,
    pub background: Vec<f64>,
    pub objects: Vec<SimObject>,
    /// Detections per frame (index 0 is frame 1).
    pub detections: Vec<Vec<DetRecord>>,
}

impl Scenario {
    pub fn channels(&self) -> usize {
        self.background.len()
    }

    /// Frame index (0-based) where the given pair overlaps most.
    pub fn peak_frame(&self, a: usize, b: usize) -> (usize, f64) {
        (0..self.frames)
            .map(|t| (t, iou(&self.objects[a].boxes[t], &self.objects[b].boxes[t])))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    pub fn max_pairwise_iou(&self) -> f64 {
        let mut best = 0.0f64;
        for t in 0..self.frames {
            for i in 0..self.objects.len() {
                for j in i + 1..self.objects.len() {
                    best = best.max(iou(&self.objects[i].boxes[t], &self.objects[j].boxes[t]));
                }
            }
        }
        best
    }

    pub fn boxes_at(&self, t: usize) -> Vec<BBox> {
        self.objects.iter().map(|o| o.boxes[t]).collect()
    }

    pub fn depths(&self) -> Vec<u32> {
        self.objects.iter().map(|o| o.depth).collect()
    }

    pub fn gt_records(&self) -> Vec<crate::motio::GtRecord> {
        let mut out = Vec::new();
        for t in 0..self.frames {
            for o in &self.objects {
                out.push(crate::motio::GtRecord {
                    frame: t as u32 + 1,
                    id: o.id as i64,
                    bbox: o.boxes[t],
                    conf: 1.0,
                    class: 1,
                    visibility: o.visibility[t],
                });
            }
        }
        out
    }
}

pub(crate) fn unit_vector(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub(crate) fn round2(v: f64) -> f64 {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Horizontal placement of two objects that meet at frame `peak`.
///
/// `va`, `vb` are signed speeds. Returns the x position of both at `peak`.
const MAX_LAYOUT_ATTEMPTS: usize = 64;

fn meeting_x(rng: &mut impl Rng, cfg: &SimConfig, va: f64, vb: f64, peak: usize) -> Option<f64> {
    let span = (cfg.world_width - cfg.object_width) as f64;
    let (mut lo, mut hi) = (0.0f64, span);
    for v in [va, vb] {
        for t in [0.0, (cfg.frames - 1) as f64] {
            // x(t) = xc + v (t - peak) must lie in [0, span]
            let off = v * (t - peak as f64);
            lo = lo.max(-off);
            hi = hi.min(span - off);
        }
    }
    if lo > hi {
        return None;
    }
    Some(rng.random_range(lo.ceil()..=hi.floor().max(lo.ceil())).round())
}

/// Vertical offset giving IoU `>= peak` for equal boxes aligned in x.
fn offset_for_peak(height: u32, peak: f64) -> u32 {
    let h = height as f64;
    let mut dy = (h * (1.0 - peak) / (1.0 + peak)).floor() as u32;
    while dy > 0 && (h - dy as f64) / (h + dy as f64) < peak {
        dy -= 1;
    }
    dy
}

pub fn generate(cfg: &SimConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.objects;
    let (w, h) = (cfg.object_width as f64, cfg.object_height as f64);
    let background: Vec<f64> = unit_vector(&mut rng, cfg.channels).into_iter().map(|v| v * cfg.background_level).collect();

    let lane_height = match cfg.motion {
        Motion::Parallel => cfg.object_height + 4,
        // room for the vertical offset between partners
        _ => 2 * cfg.object_height,
    };
    let lanes = match cfg.motion {
        Motion::Parallel => n,
        _ => n.div_ceil(2),
    };
    if lanes as u32 * lane_height > cfg.world_height {
        return Err(Error::Invalid(format!(
            "{} objects in {} lanes of {} px do not fit a {} px tall world",
            n, lanes, lane_height, cfg.world_height
        )));
    }
    let spare = cfg.world_height - lanes as u32 * lane_height;
    let lane_top = |lane: usize| (lane as u32 * lane_height + spare / 2) as f64;

    let mut depths: Vec<u32> = (0..n as u32).collect();
    depths.shuffle(&mut rng);

    let mut paths: Vec<Vec<BBox>> = Vec::with_capacity(n);
    let speed = |rng: &mut ChaCha8Rng| rng.random_range(cfg.min_speed..=cfg.max_speed) as f64;
    let peak_window = (cfg.frames / 3, (2 * cfg.frames / 3).max(cfg.frames / 3));
    match cfg.motion {
        Motion::Parallel => {
            for lane in 0..n {
                let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let v = dir * speed(&mut rng);
                let mid = cfg.frames / 2;
                let x = meeting_x(&mut rng, cfg, v, v, mid)
                    .ok_or_else(|| Error::Invalid("object speed too high for world width".into()))?;
                let top = lane_top(lane) + 2.0;
                paths.push((0..cfg.frames).map(|t| BBox { left: x + v * (t as f64 - mid as f64), top, width: w, height: h }).collect());
            }
        }
        Motion::Crossing | Motion::Follow => {
            let max_dy = offset_for_peak(cfg.object_height, cfg.peak_iou);
            for lane in 0..lanes {
                let partner = 2 * lane + 1 < n;
                // redraw timing and speeds until both partners stay in the world
                let mut plan = None;
                for _ in 0..MAX_LAYOUT_ATTEMPTS {
                    let peak = rng.random_range(peak_window.0..=peak_window.1).min(cfg.frames - 1);
                    let (va, vb) = if cfg.motion == Motion::Crossing {
                        (speed(&mut rng), -speed(&mut rng))
                    } else {
                        let slow = rng.random_range(cfg.min_speed..=cfg.max_speed.max(cfg.min_speed + 1) - 1) as f64;
                        let fast = rng.random_range(slow as u32 + 1..=cfg.max_speed.max(slow as u32 + 1)) as f64;
                        (fast, slow)
                    };
                    let flip = rng.random_bool(0.5);
                    let (va, vb) = if flip { (-va, -vb) } else { (va, vb) };
                    if let Some(x) = meeting_x(&mut rng, cfg, va, vb, peak) {
                        plan = Some((peak, va, vb, x));
                        break;
                    }
                }
                let (peak, va, vb, x) = plan.ok_or_else(|| Error::Invalid("object speed too high for world width".into()))?;
                let dy = rng.random_range(0..=max_dy) as f64;
                let top = lane_top(lane) + ((lane_height as f64 - h - dy) / 2.0).floor();
                paths.push((0..cfg.frames).map(|t| BBox { left: x + va * (t as f64 - peak as f64), top, width: w, height: h }).collect());
                if partner {
                    paths.push(
                        (0..cfg.frames)
                            .map(|t| BBox { left: x + vb * (t as f64 - peak as f64), top: top + dy, width: w, height: h })
                            .collect(),
                    );
                }
            }
        }
    }

    let signatures: Vec<Vec<f64>> = (0..n).map(|_| unit_vector(&mut rng, cfg.channels)).collect();
    let mut visibility = vec![Vec::with_capacity(cfg.frames); n];
    for t in 0..cfg.frames {
        let boxes: Vec<BBox> = paths.iter().map(|p| p[t]).collect();
        for (i, v) in compute_visibility(&boxes, &depths)?.into_iter().enumerate() {
            visibility[i].push(round2(v));
        }
    }
    let objects: Vec<SimObject> = (0..n)
        .map(|i| SimObject {
            id: i as u32 + 1,
            depth: depths[i],
            signature: signatures[i].clone(),
            boxes: paths[i].clone(),
            visibility: visibility[i].clone(),
        })
        .collect();

    let mut scenario = Scenario {
        seed,
        frames: cfg.frames,
        world_width: cfg.world_width,
        world_height: cfg.world_height,
        noise_sigma: cfg.noise_sigma,
        background,
        objects,
        detections: Vec::new(),
    };
    scenario.detections = emit_detections(&scenario, &cfg.dropout, cfg.detection_jitter, seed ^ 0x5DEECE66D)?;
    Ok(scenario)
}

/// Visible fraction of each box on a 1-pixel grid; rank 0 is in front.
///
/// A pixel belongs to a box when its centre lies inside it. Fractions are
/// pixel counts not covered by any strictly-front box over the box's count.
pub fn compute_visibility(boxes: &[BBox], depth: &[u32]) -> Result<Vec<f64>> {
    if boxes.len() != depth.len() {
        return Err(Error::Shape("one depth rank per box required".into()));
    }
    let mut seen = depth.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Invalid("depth ranks must be unique".into()));
    }
    let pixel_span = |lo: f64, hi: f64| -> (i64, i64) {
        // pixel p has centre p + 0.5; inside when lo < p + 0.5 < hi
        ((lo - 0.5).floor() as i64 + 1, (hi - 0.5).ceil() as i64 - 1)
    };
    let mut out = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        let (x0, x1) = pixel_span(b.left, b.right());
        let (y0, y1) = pixel_span(b.top, b.bottom());
        let front: Vec<&BBox> = boxes
            .iter()
            .zip(depth)
            .filter(|(o, d)| **d < depth[i] && o.intersects(b))
            .map(|(o, _)| o)
            .collect();
        let mut total = 0u64;
        let mut visible = 0u64;
        for py in y0..=y1 {
            let cy = py as f64 + 0.5;
            for px in x0..=x1 {
                let cx = px as f64 + 0.5;
                total += 1;
                let covered = front.iter().any(|f| cx > f.left && cx < f.right() && cy > f.top && cy < f.bottom());
                if !covered {
                    visible += 1;
                }
            }
        }
        out.push(if total == 0 { 1.0 } else { visible as f64 / total as f64 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(l: f64, t: f64, w: f64, h: f64) -> BBox {
        BBox::new(l, t, w, h).unwrap()
    }

    #[test]
    fn visibility_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(20.0, 0.0, 10.0, 10.0);
        assert_eq!(compute_visibility(&[a, b], &[0, 1]).unwrap(), vec![1.0, 1.0]);

        let big = bx(0.0, 0.0, 20.0, 20.0);
        let small = bx(5.0, 5.0, 4.0, 4.0);
        assert_eq!(compute_visibility(&[big, small], &[0, 1]).unwrap(), vec![1.0, 0.0]);

        let back = bx(0.0, 0.0, 10.0, 10.0);
        let front = bx(5.0, 0.0, 10.0, 10.0);
        assert_eq!(compute_visibility(&[back, front], &[1, 0]).unwrap(), vec![0.5, 1.0]);
        assert!(compute_visibility(&[back, front], &[0, 0]).is_err());
    }

    #[test]
    fn single_object_fully_visible() {
        for motion in [Motion::Parallel, Motion::Crossing, Motion::Follow] {
            let cfg = SimConfig { objects: 1, motion, ..SimConfig::default() };
            let s = generate(&cfg, 3).unwrap();
            assert!(s.objects[0].visibility.iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn crossing_reaches_peak() {
        for seed in 0..30 {
            let cfg = SimConfig { peak_iou: 0.8, ..SimConfig::default() };
            let s = generate(&cfg, seed).unwrap();
            let peak = s.max_pairwise_iou();
            assert!((0.8..=1.0).contains(&peak), "seed {seed}: {peak}");
        }
    }

    #[test]
    fn boxes_stay_in_world() {
        for motion in [Motion::Parallel, Motion::Crossing, Motion::Follow] {
            for seed in 0..10 {
                let cfg = SimConfig { objects: 3, motion, world_height: 400, ..SimConfig::default() };
                let s = generate(&cfg, seed).unwrap();
                for o in &s.objects {
                    for b in &o.boxes {
                        assert!(b.left >= 0.0 && b.top >= 0.0, "{b:?}");
                        assert!(b.right() <= s.world_width as f64 && b.bottom() <= s.world_height as f64, "{b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SimConfig::default();
        assert_eq!(generate(&cfg, 42).unwrap(), generate(&cfg, 42).unwrap());
        assert_ne!(generate(&cfg, 42).unwrap(), generate(&cfg, 43).unwrap());
    }

    #[test]
    fn infeasible_configs_rejected() {
        assert!(generate(&SimConfig { peak_iou: 1.1, ..SimConfig::default() }, 0).is_err());
        assert!(generate(&SimConfig { objects: 9, ..SimConfig::default() }, 0).is_err());
        // peak IoU 1.0 is allowed: partners coincide at the peak frame
        let s = generate(&SimConfig { peak_iou: 1.0, ..SimConfig::default() }, 0).unwrap();
        assert_eq!(s.max_pairwise_iou(), 1.0);
    }

    #[test]
    fn parallel_lanes_never_overlap() {
        let cfg = SimConfig { motion: Motion::Parallel, objects: 2, ..SimConfig::default() };
        for seed in 0..10 {
            assert_eq!(generate(&cfg, seed).unwrap().max_pairwise_iou(), 0.0);
        }
    }

    #[test]
    fn visible_area_fits_in_world() {
        let cfg = SimConfig { objects: 2, peak_iou: 0.9, ..SimConfig::default() };
        let s = generate(&cfg, 5).unwrap();
        for t in 0..s.frames {
            let total: f64 = s.objects.iter().map(|o| o.visibility[t] * o.boxes[t].area()).sum();
            assert!(total <= (s.world_width * s.world_height) as f64);
        }
    }
}
