use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::geometry::iou;
use crate::motio::{GtRecord, ResultRecord};

pub const BINS: usize = 10;

/// Tracked statistics for one occlusion-level bin `[low, high)`; the last
/// bin also holds occlusion 1.0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OcclusionBin {
    pub low: f64,
    pub high: f64,
    pub occurrences: usize,
    pub tracked: usize,
}

impl OcclusionBin {
    /// `tracked / occurrences`, or `None` for an empty bin.
    pub fn fraction(&self) -> Option<f64> {
        (self.occurrences > 0).then(|| self.tracked as f64 / self.occurrences as f64)
    }
}

fn bin_of(visibility: f64) -> usize {
    let level = (1.0 - visibility).clamp(0.0, 1.0);
    // the small offset keeps decimal visibilities such as 0.3 in their bin
    ((level * BINS as f64 + 1e-9).floor() as usize).min(BINS - 1)
}

/// A gt box counts as tracked when any hyp box in its frame reaches IoU 0.5.
pub fn occlusion_profile(gt: &[GtRecord], hyp: &[ResultRecord]) -> Vec<OcclusionBin> {
    let mut bins: Vec<OcclusionBin> = (0..BINS)
        .map(|i| OcclusionBin { low: i as f64 / BINS as f64, high: (i + 1) as f64 / BINS as f64, ..Default::default() })
        .collect();
    let mut hyp_frames: BTreeMap<u32, Vec<&ResultRecord>> = BTreeMap::new();
    for h in hyp {
        hyp_frames.entry(h.frame).or_default().push(h);
    }
    for g in gt {
        let bin = &mut bins[bin_of(g.visibility)];
        bin.occurrences += 1;
        let hit = hyp_frames.get(&g.frame).is_some_and(|hs| hs.iter().any(|h| iou(&g.bbox, &h.bbox) >= 0.5));
        if hit {
            bin.tracked += 1;
        }
    }
    bins
}

/// Sum bins position-wise.
pub fn merge_profiles(profiles: &[Vec<OcclusionBin>]) -> Vec<OcclusionBin> {
    let mut out = occlusion_profile(&[], &[]);
    for p in profiles {
        for (o, b) in out.iter_mut().zip(p) {
            o.occurrences += b.occurrences;
            o.tracked += b.tracked;
        }
    }
    out
}

/// `bin_low,bin_high,occurrences,tracked_fraction,variant`; empty bins leave
/// the fraction blank.
pub fn profile_csv(rows: &[(String, Vec<OcclusionBin>)]) -> String {
    let mut out = String::from("bin_low,bin_high,occurrences,tracked_fraction,variant\n");
    for (variant, bins) in rows {
        for b in bins {
            let frac = b.fraction().map(|f| format!("{f:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{:.1},{:.1},{},{},{}", b.low, b.high, b.occurrences, frac, variant);
        }
    }
    out
}
