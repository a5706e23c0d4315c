//! Feeds noisy views of one identity through the memory and prints how the
//! aggregated reference settles.
//!
//! `cargo run --release --example memory_aggregation`

use cotrack::memory::{cosine, extract_embedding, init_state, pool, update};
use cotrack::trainer::IdentityPool;
use cotrack::weights::ModelWeights;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cotrack::Result<()> {
    let memory = ModelWeights::pretrained().memory;
    let ids = IdentityPool::new(2, memory.channels(), 77)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let other = pool(init_state(&ids.patch(1, &mut rng)?, &memory)?.state());
    let mut state = init_state(&ids.patch(0, &mut rng)?, &memory)?;
    for step in 1..=8 {
        let view = ids.patch(0, &mut rng)?;
        let single = pool(&extract_embedding(&view, &memory)?);
        state = update(&state, &extract_embedding(&view, &memory)?, &memory)?;
        let agg = pool(state.state());
        println!(
            "view {step}: single view vs aggregate {:.3}, aggregate vs other identity {:.3}",
            cosine(&single, &agg),
            cosine(&agg, &other)
        );
    }
    Ok(())
}
