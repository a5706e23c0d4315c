//! Trains the memory and attention weights from scratch and reports how
//! well the embedding separates unseen identities.
//!
//! `cargo run --release --example train_embedding -- [out.json]`

use cotrack::trainer::{embed_samples, focus_rate, pretrain, rank1_retrieval, separation, IdentityPool, PretrainConfig};

fn main() -> cotrack::Result<()> {
    let cfg = PretrainConfig::default();
    let out = pretrain(&cfg)?;
    let first = out.embed_curve.first().map_or(f64::NAN, |r| r.total);
    let last = out.embed_curve.last().map_or(f64::NAN, |r| r.total);
    println!("identity loss {first:.4} -> {last:.4} over {} steps", out.embed_curve.len());

    let (rate, before, after) = focus_rate(&out.model, 100, 5, 0.1, 0.2)?;
    println!("refinement moves half-covered crops toward the target in {:.0}% of trials", rate * 100.0);
    println!("mean cosine to the target signature {before:.3} -> {after:.3}");

    let unseen = IdentityPool::new(10, cfg.channels, 555)?;
    let (gallery, _) = embed_samples(&unseen, &out.model.memory, 5, 2, 1)?;
    let (probes, aggregated) = embed_samples(&unseen, &out.model.memory, 10, 2, 2)?;
    println!("rank-1 on unseen identities {:.3}", rank1_retrieval(&gallery, &probes)?);
    let (intra, inter) = separation(&probes);
    let (intra_agg, inter_agg) = separation(&aggregated);
    println!("intra/inter distance {intra:.3}/{inter:.3}, after aggregation {intra_agg:.3}/{inter_agg:.3}");

    if let Some(path) = std::env::args().nth(1) {
        out.model.to_store().save(&path)?;
        println!("weights written to {path}");
    }
    Ok(())
}
