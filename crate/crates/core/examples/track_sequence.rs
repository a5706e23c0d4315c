//! Tracks one simulated crossing with the bundled weights and prints each
//! track's lifetime.
//!
//! `cargo run --release --example track_sequence -- [seed]`

use std::collections::BTreeMap;

use cotrack::experiment::track_scenario;
use cotrack::sim::{generate, SimConfig};
use cotrack::tracker::{TrackerConfig, Variant};
use cotrack::weights::ModelWeights;

fn main() -> cotrack::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let s = generate(&SimConfig::default(), seed)?;
    let results = track_scenario(&s, &ModelWeights::pretrained(), &TrackerConfig::default(), Variant::FULL)?;
    let mut spans: BTreeMap<u32, (u32, u32, usize)> = BTreeMap::new();
    for r in &results {
        let e = spans.entry(r.id).or_insert((r.frame, r.frame, 0));
        e.1 = r.frame;
        e.2 += 1;
    }
    for (id, (first, last, n)) in spans {
        println!("track {id:>2}: frames {first:>3}..{last:<3} reported {n:>3} times");
    }
    Ok(())
}
