//! Finite-difference checks of every differentiable operation used in
//! training, on small random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{refine_tape, AttentionVars, Branches};
use crate::error::Result;
use crate::memory::{init_state_tape, pool_tape, update_tape, MemoryVars, INIT_KERNELS};
use crate::tensor::grad_check;
use crate::tensor::tape::{ConvVars, Tape, Tensor, Var};

const C: usize = 3;
const H: usize = 4;
const W: usize = 4;

/// Largest relative gradient error of one operation over one seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    pub op: &'static str,
    pub seed: u64,
    pub error: f64,
}

pub const OPS: [&str; 9] =
    ["conv2d", "activations", "init_layers", "gru_update", "attention_block", "pool", "cross_entropy", "triplet", "distance"];

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

fn map(rng: &mut ChaCha8Rng, channels: usize) -> Tensor {
    uniform(rng, vec![channels, H, W], 1.0)
}

fn conv_params(rng: &mut ChaCha8Rng, out: usize, inp: usize, k: usize) -> [Tensor; 2] {
    let scale = 1.0 / ((inp * k * k) as f64).sqrt();
    [uniform(rng, vec![out, inp, k, k], scale), uniform(rng, vec![out], 0.1)]
}

fn conv_vars(v: &[Var], k: usize) -> ConvVars {
    ConvVars { kernel: v[0], bias: v[1], kernel_size: k }
}

/// Parameters for the seven memory layers, in `MemoryVars::all` order.
fn memory_params(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut out = Vec::new();
    for k in INIT_KERNELS {
        out.extend(conv_params(rng, C, C, k));
    }
    for _ in 0..3 {
        out.extend(conv_params(rng, C, 2 * C, 3));
    }
    out
}

fn memory_vars(v: &[Var]) -> MemoryVars {
    let init = [0, 1, 2, 3].map(|i| conv_vars(&v[2 * i..], INIT_KERNELS[i]));
    MemoryVars { init, update_gate: conv_vars(&v[8..], 3), reset_gate: conv_vars(&v[10..], 3), candidate: conv_vars(&v[12..], 3) }
}

fn square_sum(t: &mut Tape, x: Var) -> Var {
    let sq = t.mul(x, x);
    t.sum(sq)
}

/// Worst relative error of `op` for one seed.
pub fn check_op(op: &str, seed: u64, epsilon: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    match op {
        "conv2d" => {
            let mut params = vec![map(rng, C)];
            params.extend(conv_params(rng, C, C, 3));
            grad_check(
                |t, v| {
                    let y = t.conv(v[0], conv_vars(&v[1..], 3));
                    square_sum(t, y)
                },
                &params,
                epsilon,
            )
        }
        "activations" => grad_check(
            |t, v| {
                let a = t.sigmoid(v[0]);
                let b = t.tanh(v[0]);
                let c = t.relu(v[0]);
                let ab = t.mul(a, b);
                let abc = t.add(ab, c);
                let d = t.one_minus(abc);
                square_sum(t, d)
            },
            &[map(rng, C)],
            epsilon,
        ),
        "init_layers" => {
            let mut params = vec![map(rng, C)];
            params.extend(memory_params(rng));
            grad_check(
                |t, v| {
                    let y = init_state_tape(t, v[0], &memory_vars(&v[1..]));
                    square_sum(t, y)
                },
                &params,
                epsilon,
            )
        }
        "gru_update" => {
            let mut params = vec![uniform(rng, vec![C, H, W], 0.9), map(rng, C)];
            params.extend(memory_params(rng));
            grad_check(
                |t, v| {
                    let y = update_tape(t, v[0], v[1], &memory_vars(&v[2..]));
                    square_sum(t, y)
                },
                &params,
                epsilon,
            )
        }
        "attention_block" => {
            let mut params: Vec<Tensor> = (0..4).map(|_| map(rng, C)).collect();
            for _ in 0..3 {
                params.extend(conv_params(rng, C, C, 1));
            }
            let w = rng.random_range(0.1..1.0);
            grad_check(
                |t, v| {
                    let avars = AttentionVars { theta: conv_vars(&v[4..], 1), phi: conv_vars(&v[6..], 1), rho: conv_vars(&v[8..], 1) };
                    let y = refine_tape(t, v[0], v[1], v[2], Some(v[3]), w, &avars, Branches::BOTH);
                    square_sum(t, y)
                },
                &params,
                epsilon,
            )
        }
        "pool" => {
            let target = uniform(rng, vec![C], 1.0);
            grad_check(
                |t, v| {
                    let p = pool_tape(t, v[0]);
                    let g = t.leaf(target.clone());
                    t.distance(p, g)
                },
                &[map(rng, C)],
                epsilon,
            )
        }
        "cross_entropy" => {
            let classes = 5;
            let label = rng.random_range(0..classes);
            let params = [uniform(rng, vec![C], 1.0), uniform(rng, vec![classes, C], 1.0), uniform(rng, vec![classes], 0.5)];
            grad_check(
                |t, v| {
                    let z = t.linear(v[0], v[1], v[2]);
                    t.cross_entropy(z, label)
                },
                &params,
                epsilon,
            )
        }
        "triplet" => {
            // the margin keeps the hinge active so the loss is smooth near the sample
            let params = [uniform(rng, vec![C], 1.0), uniform(rng, vec![C], 1.0), uniform(rng, vec![C], 1.0)];
            grad_check(
                |t, v| {
                    let dp = t.distance(v[0], v[1]);
                    let dn = t.distance(v[0], v[2]);
                    let gap = t.sub(dp, dn);
                    let shifted = t.add_scalar(gap, 10.0);
                    t.relu(shifted)
                },
                &params,
                epsilon,
            )
        }
        "distance" => {
            let params = [uniform(rng, vec![C], 1.0), uniform(rng, vec![C], 1.0)];
            grad_check(
                |t, v| {
                    let s = t.scale(v[1], 0.5);
                    let u = t.l2_normalize(s);
                    t.distance(v[0], u)
                },
                &params,
                epsilon,
            )
        }
        other => Err(crate::Error::Invalid(format!("unknown op `{other}`"))),
    }
}

/// Every op over `seeds` consecutive seeds starting at `first_seed`.
pub fn gradient_suite(first_seed: u64, seeds: u64, epsilon: f64) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    for op in OPS {
        for seed in first_seed..first_seed + seeds {
            out.push(GradReport { op, seed, error: check_op(op, seed, epsilon)? });
        }
    }
    Ok(out)
}

/// Worst error per op, in [`OPS`] order.
pub fn worst_per_op(reports: &[GradReport]) -> Vec<(&'static str, f64)> {
    OPS.iter()
        .map(|op| (*op, reports.iter().filter(|r| r.op == *op).map(|r| r.error).fold(0.0, f64::max)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_one_seed() {
        for op in OPS {
            let e = check_op(op, 3, 1e-5).unwrap();
            assert!(e <= 1e-4, "{op}: {e}");
        }
    }

    #[test]
    fn unknown_op_rejected() {
        assert!(check_op("softplus", 0, 1e-5).is_err());
    }
}
