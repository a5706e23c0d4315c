//! Compares refined and unrefined position predictions for the hidden
//! object at the moment of heaviest overlap.
//!
//! `cargo run --release --example predict_position -- [scenarios]`

use cotrack::experiment::render_all;
use cotrack::geometry::iou;
use cotrack::sim::{generate, SimConfig};
use cotrack::tracker::{predict_position, TrackState, Tracker, TrackerConfig, Variant};
use cotrack::weights::ModelWeights;

fn main() -> cotrack::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100u64);
    let w = ModelWeights::pretrained();
    let (mut wins, mut ties, mut losses, mut skipped) = (0, 0, 0, 0);
    for seed in 5000..5000 + n {
        let s = generate(&SimConfig::default(), seed)?;
        let (peak, _) = s.peak_frame(0, 1);
        let back = if s.objects[0].visibility[peak] <= s.objects[1].visibility[peak] { 0 } else { 1 };
        let frames = render_all(&s)?;
        let mut t = Tracker::new(TrackerConfig::default(), Variant::FULL, w.clone())?;
        for k in 0..peak {
            t.step(k as u32 + 1, &frames[k], &s.detections[k])?;
        }
        let prev = s.objects[back].boxes[peak - 1];
        let active: Vec<_> = t.tracks().iter().filter(|k| k.state == TrackState::Active).collect();
        let Some(track) = active.iter().copied().max_by(|a, b| iou(&a.last_box, &prev).total_cmp(&iou(&b.last_box, &prev))) else {
            skipped += 1;
            continue;
        };
        let other = active.iter().copied().filter(|k| k.id != track.id).max_by(|a, b| {
            iou(&a.last_box, &track.last_box).total_cmp(&iou(&b.last_box, &track.last_box))
        });
        let truth = s.objects[back].boxes[peak];
        let on = predict_position(track, other, &frames[peak], t.config(), &w, Variant::FULL)?;
        let off = predict_position(track, other, &frames[peak], t.config(), &w, Variant::DISABLED)?;
        let (a, b) = (iou(&on.bbox, &truth), iou(&off.bbox, &truth));
        if a > b {
            wins += 1;
        } else if a < b {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    println!("refined vs unrefined at peak overlap: {wins} better, {ties} equal, {losses} worse, {skipped} without a track");
    Ok(())
}
