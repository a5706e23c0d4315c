//! Shows target and distractor attention pulling a half-covered crop back
//! toward the target identity.
//!
//! `cargo run --release --example attention_focus`

use cotrack::attention::refine;
use cotrack::geometry::OcclusionConfig;
use cotrack::memory::{cosine, extract_embedding, pool};
use cotrack::trainer::{focus_rate, half_covered_sample};
use cotrack::weights::ModelWeights;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cotrack::Result<()> {
    let model = ModelWeights::pretrained();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    println!("trial  weight  cos(target) before/after  cos(distractor) before/after");
    for i in 0..5 {
        let s = half_covered_sample(&mut rng, model.channels(), 0.1, OcclusionConfig::new(0.2)?)?;
        let (target_ref, distractor_ref) = s.references(&model.memory)?;
        let e = extract_embedding(&s.crop, &model.memory)?;
        let refined = refine(&s.crop, &e, &target_ref, Some(&distractor_ref), s.weight, &model.attention)?;
        let (p0, p1) = (pool(&s.crop), pool(&refined));
        println!(
            "{i:>5}  {:.3}   {:.3}/{:.3}                 {:.3}/{:.3}",
            s.weight,
            cosine(&p0, &s.target_signature),
            cosine(&p1, &s.target_signature),
            cosine(&p0, &s.distractor_signature),
            cosine(&p1, &s.distractor_signature)
        );
    }
    let (rate, before, after) = focus_rate(&model, 100, 5, 0.1, 0.2)?;
    println!("over 100 trials: closer to the target in {:.0}%, mean cosine {before:.3} -> {after:.3}", 100.0 * rate);
    Ok(())
}
