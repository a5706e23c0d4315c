//! Exhaustive reference implementations and fuzzed inputs shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cotrack::geometry::{iou, BBox};
use cotrack::motio::{DetRecord, GtRecord, ResultRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// CLEAR counts `(fp, fn, ids, gt_count)` by enumerating every matching.
pub fn brute_clear(gt: &[GtRecord], hyp: &[ResultRecord], thr: f64) -> (usize, usize, usize, usize) {
    let gt: Vec<&GtRecord> = gt.iter().filter(|g| g.conf != 0.0).collect();
    let frames: BTreeSet<u32> = gt.iter().map(|g| g.frame).chain(hyp.iter().map(|h| h.frame)).collect();
    let mut prev: BTreeMap<i64, u32> = BTreeMap::new();
    let mut last: BTreeMap<i64, u32> = BTreeMap::new();
    let (mut fp, mut fn_, mut ids, mut count) = (0, 0, 0, 0);
    for f in frames {
        let gs: Vec<&GtRecord> = gt.iter().copied().filter(|g| g.frame == f).collect();
        let hs: Vec<&ResultRecord> = hyp.iter().filter(|h| h.frame == f).collect();
        count += gs.len();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (gi, g) in gs.iter().enumerate() {
            if let Some(&hid) = prev.get(&g.id) {
                if let Some(hi) = hs.iter().position(|h| h.id == hid) {
                    if iou(&g.bbox, &hs[hi].bbox) >= thr && !pairs.iter().any(|p| p.1 == hi) {
                        pairs.push((gi, hi));
                    }
                }
            }
        }
        let free_g: Vec<usize> = (0..gs.len()).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
        let free_h: Vec<usize> = (0..hs.len()).filter(|i| !pairs.iter().any(|p| p.1 == *i)).collect();
        let mut best: (usize, f64, Vec<(usize, usize)>) = (0, 0.0, Vec::new());
        let mut chosen = Vec::new();
        enumerate(&free_g, 0, &free_h, &mut vec![false; hs.len()], &mut chosen, &mut |m: &[(usize, usize)]| {
            if m.iter().any(|&(g, h)| iou(&gs[g].bbox, &hs[h].bbox) < thr) {
                return;
            }
            let cost: f64 = m.iter().map(|&(g, h)| 1.0 - iou(&gs[g].bbox, &hs[h].bbox)).sum();
            if m.len() > best.0 || (m.len() == best.0 && cost < best.1) {
                best = (m.len(), cost, m.to_vec());
            }
        });
        pairs.extend(best.2);
        let mut current = BTreeMap::new();
        for &(gi, hi) in &pairs {
            let (g, h) = (gs[gi].id, hs[hi].id);
            if last.get(&g).is_some_and(|&o| o != h) {
                ids += 1;
            }
            last.insert(g, h);
            current.insert(g, h);
        }
        fp += hs.len() - pairs.len();
        fn_ += gs.len() - pairs.len();
        prev = current;
    }
    (fp, fn_, ids, count)
}

/// Every partial one-to-one assignment of `gs[k..]` into unused `hs`.
fn enumerate(
    gs: &[usize],
    k: usize,
    hs: &[usize],
    used: &mut Vec<bool>,
    chosen: &mut Vec<(usize, usize)>,
    visit: &mut dyn FnMut(&[(usize, usize)]),
) {
    if k == gs.len() {
        visit(chosen);
        return;
    }
    enumerate(gs, k + 1, hs, used, chosen, visit);
    for &h in hs {
        if !used[h] {
            used[h] = true;
            chosen.push((gs[k], h));
            enumerate(gs, k + 1, hs, used, chosen, visit);
            chosen.pop();
            used[h] = false;
        }
    }
}

/// IDF1 by trying every injective pairing of gt identities with hyp identities.
pub fn brute_idf1(gt: &[GtRecord], hyp: &[ResultRecord], thr: f64) -> f64 {
    let gt: Vec<&GtRecord> = gt.iter().filter(|g| g.conf != 0.0).collect();
    if gt.is_empty() && hyp.is_empty() {
        return 1.0;
    }
    let gids: Vec<i64> = gt.iter().map(|g| g.id).collect::<BTreeSet<_>>().into_iter().collect();
    let hids: Vec<u32> = hyp.iter().map(|h| h.id).collect::<BTreeSet<_>>().into_iter().collect();
    let shared = |g: i64, h: u32| {
        gt.iter()
            .filter(|r| r.id == g)
            .filter(|r| hyp.iter().any(|x| x.id == h && x.frame == r.frame && iou(&x.bbox, &r.bbox) >= thr))
            .count()
    };
    let mut best = 0;
    let idx: Vec<usize> = (0..gids.len()).collect();
    let mut chosen = Vec::new();
    let hs: Vec<usize> = (0..hids.len()).collect();
    enumerate(&idx, 0, &hs, &mut vec![false; hids.len()], &mut chosen, &mut |m: &[(usize, usize)]| {
        best = best.max(m.iter().map(|&(g, h)| shared(gids[g], hids[h])).sum());
    });
    2.0 * best as f64 / (gt.len() + hyp.len()) as f64
}

/// A random small tracking instance: at most `frames` frames and `ids`
/// identities on each side, with hyp boxes mostly perturbed copies of gt.
pub fn fuzz_instance(seed: u64, frames: u32, ids: usize) -> (Vec<GtRecord>, Vec<ResultRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = rng.random_range(1..=frames);
    let ng = rng.random_range(1..=ids);
    let nh = rng.random_range(1..=ids);
    let mut gt = Vec::new();
    let mut paths = Vec::new();
    for id in 1..=ng as i64 {
        let x0 = rng.random_range(0.0..60.0);
        let y0 = rng.random_range(0.0..20.0);
        let vx = rng.random_range(-6.0..6.0);
        paths.push((x0, y0, vx));
        for f in 1..=nf {
            if rng.random_bool(0.8) {
                let bbox = BBox { left: x0 + vx * f as f64, top: y0, width: 20.0, height: 30.0 };
                let conf = if rng.random_bool(0.05) { 0.0 } else { 1.0 };
                gt.push(GtRecord { frame: f, id, bbox, conf, class: 1, visibility: rng.random_range(0.0..=1.0) });
            }
        }
    }
    let mut hyp = Vec::new();
    for f in 1..=nf {
        for id in 1..=nh as u32 {
            if !rng.random_bool(0.75) {
                continue;
            }
            let frame_gt: Vec<&GtRecord> = gt.iter().filter(|g| g.frame == f).collect();
            let bbox = if !frame_gt.is_empty() && rng.random_bool(0.8) {
                let g = frame_gt[rng.random_range(0..frame_gt.len())];
                g.bbox.translated(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0))
            } else {
                BBox { left: rng.random_range(-10.0..90.0), top: rng.random_range(0.0..30.0), width: 20.0, height: 30.0 }
            };
            hyp.push(ResultRecord { frame: f, id, bbox, conf: rng.random_range(0.0..1.0) });
        }
    }
    (gt, hyp)
}

fn grid(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> f64 {
    rng.random_range(lo * 100..=hi * 100) as f64 / 100.0
}

fn grid_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox { left: grid(rng, -50, 1900), top: grid(rng, -50, 1000), width: grid(rng, 1, 300), height: grid(rng, 1, 600) }
}

/// Records whose floats sit on the 0.01 grid the writers preserve.
pub fn fuzz_records(seed: u64) -> (Vec<GtRecord>, Vec<DetRecord>, Vec<ResultRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..20);
    let gt = (0..n)
        .map(|_| GtRecord {
            frame: rng.random_range(1..1000),
            id: rng.random_range(1..100),
            bbox: grid_box(&mut rng),
            conf: rng.random_range(0..=1) as f64,
            class: rng.random_range(1..13),
            visibility: grid(&mut rng, 0, 1),
        })
        .collect();
    let det = (0..n)
        .map(|_| DetRecord { frame: rng.random_range(1..1000), bbox: grid_box(&mut rng), confidence: grid(&mut rng, -5, 5) })
        .collect();
    let res = (0..n)
        .map(|_| ResultRecord {
            frame: rng.random_range(1..1000),
            id: rng.random_range(1..100),
            bbox: grid_box(&mut rng),
            conf: grid(&mut rng, 0, 1),
        })
        .collect();
    (gt, det, res)
}
