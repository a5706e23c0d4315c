//! Runs the tracker over simulated suites: per-variant metrics, the
//! tracked-through rate past peak occlusion, and occlusion profiles.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::iou;
use crate::metrics::{clear_mot, id_counts, merge_profiles, occlusion_profile, EvalResult, OcclusionBin};
use crate::motio::ResultRecord;
use crate::sim::{generate, render_frame, FeatureFrame, Scenario, SimConfig};
use crate::tracker::{to_records, Tracker, TrackerConfig, Variant};
use crate::weights::ModelWeights;

/// Render every frame of a scenario.
pub fn render_all(scenario: &Scenario) -> Result<Vec<FeatureFrame>> {
    (0..scenario.frames).map(|t| render_frame(scenario, t, scenario.seed)).collect()
}

/// Track a whole scenario from pre-rendered frames.
pub fn track_frames(
    scenario: &Scenario,
    frames: &[FeatureFrame],
    weights: &ModelWeights,
    cfg: &TrackerConfig,
    variant: Variant,
) -> Result<Vec<ResultRecord>> {
    let mut tracker = Tracker::new(*cfg, variant, weights.clone())?;
    let mut outputs = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let out = tracker.step(t as u32 + 1, frame, &scenario.detections[t])?;
        outputs.push((t as u32 + 1, out));
    }
    Ok(to_records(&outputs))
}

pub fn track_scenario(scenario: &Scenario, weights: &ModelWeights, cfg: &TrackerConfig, variant: Variant) -> Result<Vec<ResultRecord>> {
    track_frames(scenario, &render_all(scenario)?, weights, cfg, variant)
}

/// Frames after the peak at which tracking is judged.
pub const FRAMES_PAST_PEAK: usize = 2;

/// For each object of each crossing pair: did the id that covered it just
/// before the pair started to overlap still cover it two frames past the
/// peak? Returns `(tracked, total)`.
pub fn tracked_through(scenario: &Scenario, results: &[ResultRecord], o_min: f64) -> (usize, usize) {
    let mut tracked = 0;
    let mut total = 0;
    let hyp_at = |t: usize| results.iter().filter(move |r| r.frame as usize == t + 1);
    for pair in 0..scenario.objects.len() / 2 {
        let (a, b) = (2 * pair, 2 * pair + 1);
        let (peak, _) = scenario.peak_frame(a, b);
        let judge = peak + FRAMES_PAST_PEAK;
        if judge >= scenario.frames {
            continue;
        }
        let before = (0..=peak)
            .rev()
            .find(|&t| iou(&scenario.objects[a].boxes[t], &scenario.objects[b].boxes[t]) <= o_min)
            .unwrap_or(0);
        for obj in [a, b] {
            total += 1;
            let own = |t: usize| scenario.objects[obj].boxes[t];
            let id = hyp_at(before)
                .map(|r| (iou(&r.bbox, &own(before)), r.id))
                .filter(|(o, _)| *o >= 0.5)
                .max_by(|x, y| x.0.total_cmp(&y.0).then(y.1.cmp(&x.1)))
                .map(|(_, id)| id);
            let Some(id) = id else { continue };
            if hyp_at(judge).any(|r| r.id == id && iou(&r.bbox, &own(judge)) >= 0.5) {
                tracked += 1;
            }
        }
    }
    (tracked, total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub scenarios: usize,
    pub base_seed: u64,
    pub sim: SimConfig,
    pub tracker: TrackerConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { scenarios: 100, base_seed: 1000, sim: SimConfig::default(), tracker: TrackerConfig::default() }
    }
}

/// Aggregate outcome of one variant over a suite.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantReport {
    pub name: String,
    pub variant: Variant,
    pub eval: EvalResult,
    pub tracked: usize,
    pub targets: usize,
    pub profile: Vec<OcclusionBin>,
}

impl VariantReport {
    pub fn tracked_rate(&self) -> f64 {
        if self.targets == 0 {
            0.0
        } else {
            self.tracked as f64 / self.targets as f64
        }
    }

    /// Tracked fraction over the bins from `low_bin` upward, pooled.
    pub fn pooled_fraction(&self, low_bin: usize) -> f64 {
        let (hit, n) = self.profile[low_bin..]
            .iter()
            .fold((0, 0), |(h, n), b| (h + b.tracked, n + b.occurrences));
        if n == 0 {
            0.0
        } else {
            hit as f64 / n as f64
        }
    }
}

/// Every scenario of the suite, generated once.
pub fn build_suite(cfg: &SuiteConfig) -> Result<Vec<(Scenario, Vec<FeatureFrame>)>> {
    (0..cfg.scenarios)
        .map(|i| {
            let s = generate(&cfg.sim, cfg.base_seed + i as u64)?;
            let frames = render_all(&s)?;
            Ok((s, frames))
        })
        .collect()
}

pub fn run_variant(
    suite: &[(Scenario, Vec<FeatureFrame>)],
    weights: &ModelWeights,
    cfg: &SuiteConfig,
    name: &str,
    variant: Variant,
) -> Result<VariantReport> {
    let mut parts = Vec::with_capacity(suite.len());
    let mut profiles = Vec::with_capacity(suite.len());
    let (mut idtp, mut hyp_count, mut tracked, mut targets) = (0, 0, 0, 0);
    for (scenario, frames) in suite {
        let results = track_frames(scenario, frames, weights, &cfg.tracker, variant)?;
        let gt = scenario.gt_records();
        parts.push(clear_mot(&gt, &results, 0.5)?);
        let (tp, _, h) = id_counts(&gt, &results, 0.5)?;
        idtp += tp;
        hyp_count += h;
        profiles.push(occlusion_profile(&gt, &results));
        let (k, n) = tracked_through(scenario, &results, cfg.tracker.o_min);
        tracked += k;
        targets += n;
    }
    Ok(VariantReport {
        name: name.to_string(),
        variant,
        eval: EvalResult::merge(&parts, idtp, hyp_count),
        tracked,
        targets,
        profile: merge_profiles(&profiles),
    })
}

/// The six ablation rows, then the everything-off variant.
pub fn ablation_variants() -> Vec<(String, Variant)> {
    let mut rows: Vec<(String, Variant)> = Variant::ablation_rows().iter().map(|(n, v)| (n.to_string(), *v)).collect();
    rows.push(("disabled".to_string(), Variant::DISABLED));
    rows
}

pub fn run_ablation(weights: &ModelWeights, cfg: &SuiteConfig) -> Result<Vec<VariantReport>> {
    let suite = build_suite(cfg)?;
    ablation_variants().iter().map(|(n, v)| run_variant(&suite, weights, cfg, n, *v)).collect()
}

/// Lowest occlusion bin counted as heavy occlusion.
pub const HEAVY_BIN: usize = 7;

/// Directional checks over an ablation run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationChecks {
    /// Tracked-through rate of the full model minus that of the disabled variant.
    pub tracked_gain: f64,
    pub gain_ok: bool,
    /// Full model MOTA strictly above every other ablation row.
    pub full_highest: bool,
    /// Every non-empty heavy-occlusion bin has a strictly higher tracked
    /// fraction for the full model than for the disabled variant.
    pub heavy_bins_higher: bool,
}

impl AblationChecks {
    pub fn passed(&self) -> bool {
        self.gain_ok && self.full_highest && self.heavy_bins_higher
    }
}

/// Evaluates the checks on reports produced from [`ablation_variants`].
pub fn ablation_checks(reports: &[VariantReport], min_gain: f64) -> Option<AblationChecks> {
    let find = |v: Variant| reports.iter().find(|r| r.variant == v);
    let full = find(Variant::FULL)?;
    let disabled = find(Variant::DISABLED)?;
    let rows: Vec<&VariantReport> =
        Variant::ablation_rows().iter().filter_map(|(_, v)| reports.iter().find(|r| r.variant == *v)).collect();
    let full_highest = rows.iter().filter(|r| r.variant != Variant::FULL).all(|r| full.eval.mota > r.eval.mota);
    let mut compared = 0;
    let mut heavy_bins_higher = true;
    for (a, b) in full.profile[HEAVY_BIN..].iter().zip(&disabled.profile[HEAVY_BIN..]) {
        if let (Some(fa), Some(fb)) = (a.fraction(), b.fraction()) {
            compared += 1;
            heavy_bins_higher &= fa > fb;
        }
    }
    let tracked_gain = full.tracked_rate() - disabled.tracked_rate();
    Some(AblationChecks {
        tracked_gain,
        gain_ok: tracked_gain >= min_gain,
        full_highest,
        heavy_bins_higher: heavy_bins_higher && compared > 0,
    })
}
