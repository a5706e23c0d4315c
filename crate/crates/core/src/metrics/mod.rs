//! CLEAR MOT, IDF1 and per-occlusion-level tracked fractions.

mod occlusion;

pub use occlusion::{merge_profiles, occlusion_profile, profile_csv, OcclusionBin, BINS};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::motio::{GtRecord, ResultRecord};
use crate::tracker::hungarian;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EvalResult {
    pub mota: f64,
    pub idf1: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    pub gt_count: usize,
    pub matches: usize,
}

impl EvalResult {
    /// Pool several sequences: counts are summed and ratios recomputed.
    /// `idtp` and `hyp_count` are the summed identity counts of [`id_counts`].
    pub fn merge(parts: &[EvalResult], idtp: usize, hyp_count: usize) -> EvalResult {
        let fp = parts.iter().map(|p| p.fp).sum();
        let fn_ = parts.iter().map(|p| p.fn_).sum();
        let ids = parts.iter().map(|p| p.ids).sum();
        let gt_count = parts.iter().map(|p| p.gt_count).sum();
        let matches = parts.iter().map(|p| p.matches).sum();
        EvalResult {
            mota: mota(fp, fn_, ids, gt_count),
            idf1: idf1_ratio(idtp, gt_count, hyp_count),
            fp,
            fn_,
            ids,
            gt_count,
            matches,
        }
    }

    pub fn csv_header() -> &'static str {
        "variant,mota,idf1,fp,fn,ids,gt_count"
    }

    pub fn csv_row(&self, variant: &str) -> String {
        format!(
            "{variant},{:.6},{:.6},{},{},{},{}",
            self.mota, self.idf1, self.fp, self.fn_, self.ids, self.gt_count
        )
    }
}

fn mota(fp: usize, fn_: usize, ids: usize, gt_count: usize) -> f64 {
    if gt_count == 0 {
        return if fp == 0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - (fn_ + fp + ids) as f64 / gt_count as f64
}

fn idf1_ratio(idtp: usize, gt_count: usize, hyp_count: usize) -> f64 {
    if gt_count + hyp_count == 0 {
        return 1.0;
    }
    2.0 * idtp as f64 / (gt_count + hyp_count) as f64
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Invalid(format!("IoU threshold must lie in (0, 1], got {t}")));
    }
    Ok(())
}

/// Gt rows flagged for evaluation (`conf != 0`).
fn considered(gt: &[GtRecord]) -> impl Iterator<Item = &GtRecord> {
    gt.iter().filter(|g| g.conf != 0.0)
}

/// Counts for CLEAR MOT.
///
/// Per frame, pairs matched in the previous frame are kept while their IoU
/// stays at or above the threshold; the remaining boxes are matched by
/// maximum cardinality, then minimum total `1 − IoU`, among pairs at or above
/// the threshold. A matched gt whose hyp id differs from its most recent
/// match counts as an identity switch.
pub fn clear_mot(gt: &[GtRecord], hyp: &[ResultRecord], iou_threshold: f64) -> Result<EvalResult> {
    check_threshold(iou_threshold)?;
    let mut gt_frames: BTreeMap<u32, Vec<&GtRecord>> = BTreeMap::new();
    for g in considered(gt) {
        gt_frames.entry(g.frame).or_default().push(g);
    }
    let mut hyp_frames: BTreeMap<u32, Vec<&ResultRecord>> = BTreeMap::new();
    for h in hyp {
        hyp_frames.entry(h.frame).or_default().push(h);
    }
    let frames: BTreeSet<u32> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();

    let mut prev: BTreeMap<i64, u32> = BTreeMap::new();
    let mut last_match: BTreeMap<i64, u32> = BTreeMap::new();
    let (mut fp, mut fn_, mut ids, mut matches, mut gt_count) = (0, 0, 0, 0, 0);
    for f in frames {
        let gs = gt_frames.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let hs = hyp_frames.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        gt_count += gs.len();
        let pairs = match_frame(gs, hs, &prev, iou_threshold);
        let mut current = BTreeMap::new();
        for &(gi, hi) in &pairs {
            let (g, h) = (gs[gi].id, hs[hi].id);
            if last_match.get(&g).is_some_and(|&old| old != h) {
                ids += 1;
            }
            last_match.insert(g, h);
            current.insert(g, h);
        }
        matches += pairs.len();
        fn_ += gs.len() - pairs.len();
        fp += hs.len() - pairs.len();
        prev = current;
    }
    let mut r = EvalResult { mota: mota(fp, fn_, ids, gt_count), idf1: 0.0, fp, fn_, ids, gt_count, matches };
    r.idf1 = idf1(gt, hyp, iou_threshold)?;
    Ok(r)
}

fn match_frame(gs: &[&GtRecord], hs: &[&ResultRecord], prev: &BTreeMap<i64, u32>, thr: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut g_used = vec![false; gs.len()];
    let mut h_used = vec![false; hs.len()];
    for (gi, g) in gs.iter().enumerate() {
        let Some(&hid) = prev.get(&g.id) else { continue };
        if let Some(hi) = hs.iter().position(|h| h.id == hid) {
            if !h_used[hi] && iou(&g.bbox, &hs[hi].bbox) >= thr {
                pairs.push((gi, hi));
                g_used[gi] = true;
                h_used[hi] = true;
            }
        }
    }
    let rg: Vec<usize> = (0..gs.len()).filter(|&i| !g_used[i]).collect();
    let rh: Vec<usize> = (0..hs.len()).filter(|&i| !h_used[i]).collect();
    if rg.is_empty() || rh.is_empty() {
        return pairs;
    }
    let n = rg.len().max(rh.len()) as f64;
    // invalid pairs cost more than any full set of valid ones, so the solver
    // maximises the number of valid pairs before minimising their cost
    let invalid = n + 1.0;
    let cost: Vec<Vec<f64>> = rg
        .iter()
        .map(|&gi| {
            rh.iter()
                .map(|&hi| {
                    let o = iou(&gs[gi].bbox, &hs[hi].bbox);
                    if o >= thr {
                        1.0 - o
                    } else {
                        invalid
                    }
                })
                .collect()
        })
        .collect();
    for (r, c) in hungarian(&cost).expect("finite rectangular cost") {
        if cost[r][c] < invalid {
            pairs.push((rg[r], rh[c]));
        }
    }
    pairs
}

/// Identity-level true positives under the best one-to-one pairing of gt and
/// hyp identities, plus the gt and hyp box totals.
pub fn id_counts(gt: &[GtRecord], hyp: &[ResultRecord], iou_threshold: f64) -> Result<(usize, usize, usize)> {
    check_threshold(iou_threshold)?;
    let gts: Vec<&GtRecord> = considered(gt).collect();
    let gt_ids: Vec<i64> = gts.iter().map(|g| g.id).collect::<BTreeSet<_>>().into_iter().collect();
    let hyp_ids: Vec<u32> = hyp.iter().map(|h| h.id).collect::<BTreeSet<_>>().into_iter().collect();
    if gt_ids.is_empty() || hyp_ids.is_empty() {
        return Ok((0, gts.len(), hyp.len()));
    }
    let gi: BTreeMap<i64, usize> = gt_ids.iter().enumerate().map(|(i, g)| (*g, i)).collect();
    let hi: BTreeMap<u32, usize> = hyp_ids.iter().enumerate().map(|(i, h)| (*h, i)).collect();
    let mut hyp_frames: BTreeMap<u32, Vec<&ResultRecord>> = BTreeMap::new();
    for h in hyp {
        hyp_frames.entry(h.frame).or_default().push(h);
    }
    let mut overlap = vec![vec![0usize; hyp_ids.len()]; gt_ids.len()];
    for g in &gts {
        for h in hyp_frames.get(&g.frame).map(Vec::as_slice).unwrap_or(&[]) {
            if iou(&g.bbox, &h.bbox) >= iou_threshold {
                overlap[gi[&g.id]][hi[&h.id]] += 1;
            }
        }
    }
    let cost: Vec<Vec<f64>> = overlap.iter().map(|r| r.iter().map(|&n| -(n as f64)).collect()).collect();
    let idtp = hungarian(&cost)?.iter().map(|&(r, c)| overlap[r][c]).sum();
    Ok((idtp, gts.len(), hyp.len()))
}

/// `2·IDTP / (2·IDTP + IDFP + IDFN)`, which equals `2·IDTP / (gt + hyp)`.
pub fn idf1(gt: &[GtRecord], hyp: &[ResultRecord], iou_threshold: f64) -> Result<f64> {
    let (idtp, g, h) = id_counts(gt, hyp, iou_threshold)?;
    Ok(idf1_ratio(idtp, g, h))
}

/// Fixed-width table of named results.
pub fn pretty_table(rows: &[(String, EvalResult)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(7).max(7);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$} {:>7} {:>7} {:>6} {:>6} {:>5} {:>7}", "variant", "MOTA", "IDF1", "FP", "FN", "IDS", "GT");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$} {:>7.2} {:>7.2} {:>6} {:>6} {:>5} {:>7}",
            name,
            100.0 * r.mota,
            100.0 * r.idf1,
            r.fp,
            r.fn_,
            r.ids,
            r.gt_count
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn b(l: f64) -> BBox {
        BBox { left: l, top: 0.0, width: 10.0, height: 10.0 }
    }

    fn g(frame: u32, id: i64, bbox: BBox) -> GtRecord {
        GtRecord { frame, id, bbox, conf: 1.0, class: 1, visibility: 1.0 }
    }

    fn h(frame: u32, id: u32, bbox: BBox) -> ResultRecord {
        ResultRecord { frame, id, bbox, conf: 1.0 }
    }

    #[test]
    fn perfect_tracking() {
        let gt = vec![g(1, 1, b(0.0)), g(1, 2, b(50.0)), g(2, 1, b(2.0)), g(2, 2, b(52.0))];
        let hyp: Vec<ResultRecord> = gt.iter().map(|x| h(x.frame, x.id as u32 + 10, x.bbox)).collect();
        let r = clear_mot(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.mota, r.fp, r.fn_, r.ids), (1.0, 0, 0, 0));
        assert_eq!(r.idf1, 1.0);
    }

    #[test]
    fn missed_frame_and_switch() {
        let gt = vec![g(1, 1, b(0.0)), g(2, 1, b(0.0))];
        let r = clear_mot(&gt, &[h(1, 1, b(0.0))], 0.5).unwrap();
        assert_eq!((r.fn_, r.mota), (1, 0.5));
        let r = clear_mot(&gt, &[h(1, 1, b(0.0)), h(2, 2, b(0.0))], 0.5).unwrap();
        assert_eq!((r.ids, r.mota), (1, 0.5));
    }

    #[test]
    fn idf1_examples() {
        let gt: Vec<GtRecord> = (1..=4).map(|f| g(f, 1, b(0.0))).collect();
        assert_eq!(idf1(&gt, &gt.iter().map(|x| h(x.frame, 1, x.bbox)).collect::<Vec<_>>(), 0.5).unwrap(), 1.0);
        assert_eq!(idf1(&gt, &[], 0.5).unwrap(), 0.0);
        let split = vec![h(1, 1, b(0.0)), h(2, 1, b(0.0)), h(3, 2, b(0.0)), h(4, 2, b(0.0))];
        assert_eq!(idf1(&gt, &split, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn hyp_beyond_gt_range_is_false_positive() {
        let r = clear_mot(&[g(1, 1, b(0.0))], &[h(1, 1, b(0.0)), h(5, 1, b(0.0))], 0.5).unwrap();
        assert_eq!((r.fp, r.fn_, r.mota), (1, 0, 0.0));
    }

    #[test]
    fn carried_pair_beats_better_newcomer() {
        // frame 2: hyp 2 overlaps gt better, but gt keeps its frame-1 partner
        let gt = vec![g(1, 1, b(0.0)), g(2, 1, b(0.0))];
        let hyp = vec![h(1, 1, b(0.0)), h(2, 1, b(2.0)), h(2, 2, b(0.0))];
        let r = clear_mot(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.ids, r.fp), (0, 1));
    }

    #[test]
    fn threshold_validated() {
        assert!(clear_mot(&[], &[], 0.0).is_err());
        assert!(idf1(&[], &[], 1.5).is_err());
    }
}
