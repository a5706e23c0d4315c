//! Compares tape gradients with central differences for every
//! differentiable op.
//!
//! `cargo run --release --example gradient_check -- [seeds]`

use cotrack::gradsuite::{gradient_suite, worst_per_op};

fn main() -> cotrack::Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let reports = gradient_suite(0, seeds, 1e-5)?;
    for (op, err) in worst_per_op(&reports) {
        println!("{op:<16} worst relative error {err:.2e}");
    }
    Ok(())
}
