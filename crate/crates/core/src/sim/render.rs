use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Scenario;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::FeatureMap;

/// Pixels per feature-grid cell along each axis.
pub const CELL_SIZE: u32 = 8;

/// Coarse feature grid covering the whole world.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFrame {
    pub map: FeatureMap,
    pub cell_size: f64,
    pub world_width: f64,
    pub world_height: f64,
}

impl FeatureFrame {
    pub fn new(map: FeatureMap, cell_size: f64, world_width: f64, world_height: f64) -> Result<Self> {
        if !(cell_size > 0.0) {
            return Err(Error::Invalid("cell size must be positive".into()));
        }
        if (map.width() as f64) * cell_size < world_width || (map.height() as f64) * cell_size < world_height {
            return Err(Error::Shape("feature grid does not cover the world".into()));
        }
        Ok(Self { map, cell_size, world_width, world_height })
    }

    pub fn world(&self) -> BBox {
        BBox { left: 0.0, top: 0.0, width: self.world_width, height: self.world_height }
    }
}

/// Composite frame `t` (0-based): each pixel shows its front-most object,
/// cells average their pixels, then Gaussian noise is added per value.
pub fn render_frame(scenario: &Scenario, t: usize, seed: u64) -> Result<FeatureFrame> {
    if t >= scenario.frames {
        return Err(Error::Invalid(format!("frame {t} outside scenario of {} frames", scenario.frames)));
    }
    let c = scenario.channels();
    let cell = CELL_SIZE as usize;
    let gw = (scenario.world_width as usize).div_ceil(cell);
    let gh = (scenario.world_height as usize).div_ceil(cell);

    // objects sorted front to back
    let mut order: Vec<usize> = (0..scenario.objects.len()).collect();
    order.sort_by_key(|&i| scenario.objects[i].depth);
    let boxes: Vec<BBox> = order.iter().map(|&i| scenario.objects[i].boxes[t]).collect();

    let mut data = vec![0.0; c * gh * gw];
    let mut counts = vec![0u32; order.len() + 1];
    for gy in 0..gh {
        for gx in 0..gw {
            counts.iter_mut().for_each(|n| *n = 0);
            let cell_box = BBox {
                left: (gx * cell) as f64,
                top: (gy * cell) as f64,
                width: cell as f64,
                height: cell as f64,
            };
            let near: Vec<usize> = (0..boxes.len()).filter(|&k| boxes[k].intersects(&cell_box)).collect();
            for py in gy * cell..(gy + 1) * cell {
                let cy = py as f64 + 0.5;
                for px in gx * cell..(gx + 1) * cell {
                    let cx = px as f64 + 0.5;
                    let owner = near
                        .iter()
                        .copied()
                        .find(|&k| {
                            let b = &boxes[k];
                            cx > b.left && cx < b.right() && cy > b.top && cy < b.bottom()
                        })
                        .unwrap_or(boxes.len());
                    counts[owner] += 1;
                }
            }
            let total = (cell * cell) as f64;
            for (owner, &n) in counts.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let frac = n as f64 / total;
                let sig = if owner == boxes.len() {
                    &scenario.background
                } else {
                    &scenario.objects[order[owner]].signature
                };
                for ch in 0..c {
                    data[(ch * gh + gy) * gw + gx] += frac * sig[ch];
                }
            }
        }
    }

    if scenario.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64 + 1);
        let normal = Normal::new(0.0, scenario.noise_sigma).map_err(|e| Error::Invalid(e.to_string()))?;
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let map = FeatureMap::new(c, gh, gw, data)?;
    FeatureFrame::new(map, CELL_SIZE as f64, scenario.world_width as f64, scenario.world_height as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimObject;

    fn scenario(objects: Vec<SimObject>, sigma: f64) -> Scenario {
        Scenario {
            seed: 0,
            frames: 1,
            world_width: 64,
            world_height: 32,
            noise_sigma: sigma,
            background: vec![0.0, 0.0, 0.5],
            objects,
            detections: vec![vec![]],
        }
    }

    fn object(id: u32, depth: u32, sig: [f64; 3], b: BBox) -> SimObject {
        SimObject { id, depth, signature: sig.to_vec(), boxes: vec![b], visibility: vec![1.0] }
    }

    #[test]
    fn single_object_cells_equal_signature() {
        let s = scenario(vec![object(1, 0, [0.6, 0.8, 0.0], BBox { left: 8.0, top: 8.0, width: 16.0, height: 16.0 })], 0.0);
        let f = render_frame(&s, 0, 1).unwrap();
        assert_eq!(f.map.shape(), (3, 4, 8));
        for (gy, gx) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            assert_eq!(f.map.column(gy, gx), vec![0.6, 0.8, 0.0]);
        }
        assert_eq!(f.map.column(0, 0), vec![0.0, 0.0, 0.5]);
    }

    #[test]
    fn front_object_wins_overlap() {
        let a = object(1, 1, [1.0, 0.0, 0.0], BBox { left: 0.0, top: 0.0, width: 24.0, height: 16.0 });
        let b = object(2, 0, [0.0, 1.0, 0.0], BBox { left: 8.0, top: 0.0, width: 24.0, height: 16.0 });
        let f = render_frame(&scenario(vec![a, b], 0.0), 0, 1).unwrap();
        assert_eq!(f.map.column(0, 0), vec![1.0, 0.0, 0.0]);
        assert_eq!(f.map.column(0, 1), vec![0.0, 1.0, 0.0]);
        assert_eq!(f.map.column(0, 2), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn partial_cells_mix_by_area() {
        let a = object(1, 0, [1.0, 0.0, 0.0], BBox { left: 4.0, top: 0.0, width: 4.0, height: 8.0 });
        let f = render_frame(&scenario(vec![a], 0.0), 0, 1).unwrap();
        assert_eq!(f.map.column(0, 0), vec![0.5, 0.0, 0.25]);
    }

    #[test]
    fn noise_is_seeded() {
        let s = scenario(vec![], 0.1);
        assert_eq!(render_frame(&s, 0, 5).unwrap(), render_frame(&s, 0, 5).unwrap());
        assert_ne!(render_frame(&s, 0, 5).unwrap(), render_frame(&s, 0, 6).unwrap());
        assert!(render_frame(&s, 1, 5).is_err());
    }
}
