use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{round2, Scenario};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::motio::DetRecord;

/// Probability that a detector misses an object at a given visibility.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DropoutLaw {
    Never,
    /// Miss with probability `miss` whenever visibility is below `below`.
    Step { below: f64, miss: f64 },
    /// Certain miss at or under `low`, certain detection at or over `high`,
    /// linear in between.
    Ramp { low: f64, high: f64 },
}

impl Default for DropoutLaw {
    fn default() -> Self {
        DropoutLaw::Ramp { low: 0.1, high: 0.4 }
    }
}

impl DropoutLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DropoutLaw::Never => Ok(()),
            DropoutLaw::Step { below, miss } if (0.0..=1.0).contains(&miss) && below.is_finite() => Ok(()),
            DropoutLaw::Ramp { low, high } if low < high && low.is_finite() && high.is_finite() => Ok(()),
            other => Err(Error::Invalid(format!("malformed dropout law {other:?}"))),
        }
    }

    pub fn miss_probability(&self, visibility: f64) -> f64 {
        match *self {
            DropoutLaw::Never => 0.0,
            DropoutLaw::Step { below, miss } => {
                if visibility < below {
                    miss
                } else {
                    0.0
                }
            }
            DropoutLaw::Ramp { low, high } => ((high - visibility) / (high - low)).clamp(0.0, 1.0),
        }
    }
}

/// Keep or drop every ground-truth box per the law, jitter the survivors and
/// score them with their visibility. Index 0 holds frame 1.
pub fn emit_detections(scenario: &Scenario, law: &DropoutLaw, jitter: f64, seed: u64) -> Result<Vec<Vec<DetRecord>>> {
    law.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ww, wh) = (scenario.world_width as f64, scenario.world_height as f64);
    let mut out = Vec::with_capacity(scenario.frames);
    for t in 0..scenario.frames {
        let mut frame = Vec::new();
        for o in &scenario.objects {
            let vis = o.visibility[t];
            let u: f64 = rng.random();
            let noise: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            if u < law.miss_probability(vis) {
                continue;
            }
            let g = o.boxes[t];
            let width = round2((g.width + jitter * noise[2]).clamp(1.0, ww));
            let height = round2((g.height + jitter * noise[3]).clamp(1.0, wh));
            let left = round2((g.left + jitter * noise[0]).clamp(0.0, (ww - width).max(0.0)));
            let top = round2((g.top + jitter * noise[1]).clamp(0.0, (wh - height).max(0.0)));
            frame.push(DetRecord { frame: t as u32 + 1, bbox: BBox::new(left, top, width, height)?, confidence: vis });
        }
        out.push(frame);
    }
    Ok(out)
}
