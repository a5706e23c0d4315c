//! Scores the full tracker and the disabled one on a few crossings with
//! CLEAR MOT, IDF1 and the occlusion profile.
//!
//! `cargo run --release --example evaluate_metrics`

use cotrack::experiment::track_scenario;
use cotrack::metrics::{clear_mot, id_counts, merge_profiles, occlusion_profile, pretty_table, EvalResult};
use cotrack::sim::{generate, SimConfig};
use cotrack::tracker::{TrackerConfig, Variant};
use cotrack::weights::ModelWeights;

fn main() -> cotrack::Result<()> {
    let weights = ModelWeights::pretrained();
    let cfg = TrackerConfig::default();
    let scenarios: Vec<_> = (0..10).map(|i| generate(&SimConfig::default(), 100 + i)).collect::<cotrack::Result<_>>()?;
    let mut rows = Vec::new();
    let mut profiles = Vec::new();
    for (name, variant) in [("full", Variant::FULL), ("disabled", Variant::DISABLED)] {
        let (mut parts, mut idtp, mut hyp_count, mut prof) = (Vec::new(), 0, 0, Vec::new());
        for s in &scenarios {
            let gt = s.gt_records();
            let res = track_scenario(s, &weights, &cfg, variant)?;
            parts.push(clear_mot(&gt, &res, 0.5)?);
            let (tp, _, hc) = id_counts(&gt, &res, 0.5)?;
            idtp += tp;
            hyp_count += hc;
            prof.push(occlusion_profile(&gt, &res));
        }
        rows.push((name.to_string(), EvalResult::merge(&parts, idtp, hyp_count)));
        profiles.push((name, merge_profiles(&prof)));
    }
    print!("{}", pretty_table(&rows));
    println!("occlusion      full  disabled");
    for i in 0..10 {
        let f = |p: &[cotrack::metrics::OcclusionBin]| p[i].fraction().map_or("   -".into(), |v| format!("{v:.2}"));
        println!("{:>3}-{:<3}% {:>9} {:>9}", i * 10, i * 10 + 10, f(&profiles[0].1), f(&profiles[1].1));
    }
    Ok(())
}
