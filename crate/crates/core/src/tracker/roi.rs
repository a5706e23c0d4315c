//! Bilinear crop-and-resize of feature-grid regions.

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::sim::FeatureFrame;
use crate::tensor::FeatureMap;

/// Side length of every extracted region.
pub const ROI_SIZE: usize = 8;

/// Bilinear taps `(i0, i1, w0, w1)` for `ROI_SIZE` samples across
/// `[start, start + extent)` pixels on a grid of `n` cells.
fn taps(start: f64, extent: f64, cell: f64, n: usize) -> [(usize, usize, f64, f64); ROI_SIZE] {
    std::array::from_fn(|i| {
        let px = start + (i as f64 + 0.5) * extent / ROI_SIZE as f64;
        let u = (px / cell - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = u.floor() as usize;
        let frac = u - i0 as f64;
        let i1 = (i0 + 1).min(n - 1);
        if frac == 0.0 {
            (i0, i1, 1.0, 0.0)
        } else {
            (i0, i1, 1.0 - frac, frac)
        }
    })
}

fn check(frame: &FeatureFrame, b: &BBox) -> Result<()> {
    b.validate()?;
    if !b.intersects(&frame.world()) {
        return Err(Error::Invalid(format!("box {b:?} lies outside the world")));
    }
    Ok(())
}

/// `C x 8 x 8` crop of the region under `b`, sampled at cell-centre
/// coordinates and clamped at the grid border.
pub fn roi_extract(frame: &FeatureFrame, b: &BBox) -> Result<FeatureMap> {
    check(frame, b)?;
    let mut out = vec![0.0; frame.map.channels() * ROI_SIZE * ROI_SIZE];
    crop_into(frame, b, &mut out);
    FeatureMap::new(frame.map.channels(), ROI_SIZE, ROI_SIZE, out)
}

/// [`roi_extract`] into a caller-owned buffer, without validation.
pub(crate) fn crop_into(frame: &FeatureFrame, b: &BBox, out: &mut [f64]) {
    let map = &frame.map;
    let (c, h, w) = map.shape();
    let ty = taps(b.top, b.height, frame.cell_size, h);
    let tx = taps(b.left, b.width, frame.cell_size, w);
    for ch in 0..c {
        let plane = map.plane(ch);
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (r0, r1) = (&plane[y0 * w..(y0 + 1) * w], &plane[y1 * w..(y1 + 1) * w]);
            let dst = &mut out[(ch * ROI_SIZE + oy) * ROI_SIZE..(ch * ROI_SIZE + oy + 1) * ROI_SIZE];
            for (o, &(x0, x1, wx0, wx1)) in dst.iter_mut().zip(tx.iter()) {
                let mut v = wy0 * (wx0 * r0[x0]);
                if wx1 != 0.0 {
                    v += wy0 * (wx1 * r0[x1]);
                }
                if wy1 != 0.0 {
                    v += wy1 * (wx0 * r1[x0]);
                    if wx1 != 0.0 {
                        v += wy1 * (wx1 * r1[x1]);
                    }
                }
                *o = v;
            }
        }
    }
}

/// Fraction of each cell along one axis covered by `[a, b)` pixels, from
/// the first touched cell on. Cells outside the grid are dropped.
fn coverage(a: f64, b: f64, cell: f64, n: usize) -> (usize, Vec<f64>) {
    let lo = (a / cell).floor().max(0.0) as usize;
    let hi = ((b / cell).ceil() as usize).min(n);
    if lo >= hi {
        return (lo, Vec::new());
    }
    let fracs = (lo..hi)
        .map(|k| {
            let (c0, c1) = (k as f64 * cell, (k + 1) as f64 * cell);
            (b.min(c1) - a.max(c0)).max(0.0) / cell
        })
        .collect();
    (lo, fracs)
}

/// Correlation of channel `ch` with the cell-coverage pattern of `b`, and
/// the squared norm of that pattern. A grid rendered from a uniform patch
/// under `b` is exactly `dot / norm2` times the pattern.
pub(crate) fn coverage_match(frame: &FeatureFrame, ch: usize, b: &BBox) -> (f64, f64) {
    let (_, h, w) = frame.map.shape();
    let cell = frame.cell_size;
    let (x0, wx) = coverage(b.left, b.right(), cell, w);
    let (y0, wy) = coverage(b.top, b.bottom(), cell, h);
    let plane = frame.map.plane(ch);
    let mut dot = 0.0;
    for (j, wyj) in wy.iter().enumerate() {
        let row = &plane[(y0 + j) * w + x0..(y0 + j) * w + x0 + wx.len()];
        dot += wyj * row.iter().zip(&wx).map(|(v, c)| v * c).sum::<f64>();
    }
    let sq = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>();
    (dot, sq(&wx) * sq(&wy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{cosine, pool};

    fn frame_from(map: FeatureMap) -> FeatureFrame {
        let (_, h, w) = map.shape();
        FeatureFrame::new(map, 8.0, (w * 8) as f64, (h * 8) as f64).unwrap()
    }

    fn ramp_frame() -> FeatureFrame {
        frame_from(FeatureMap::from_fn(2, 12, 16, |c, y, x| (c as f64 + 1.0) * (y as f64 * 16.0 + x as f64)))
    }

    #[test]
    fn constant_region_gives_constant_crop() {
        let f = frame_from(FeatureMap::broadcast(&[0.3, -0.7], 10, 10));
        let roi = roi_extract(&f, &BBox { left: 13.0, top: 7.5, width: 30.0, height: 22.0 }).unwrap();
        for y in 0..ROI_SIZE {
            for x in 0..ROI_SIZE {
                assert!((roi.at(0, y, x) - 0.3).abs() < 1e-15 && (roi.at(1, y, x) + 0.7).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn grid_aligned_box_copies_cells() {
        let f = ramp_frame();
        let roi = roi_extract(&f, &BBox { left: 16.0, top: 24.0, width: 64.0, height: 64.0 }).unwrap();
        for c in 0..2 {
            for y in 0..ROI_SIZE {
                for x in 0..ROI_SIZE {
                    assert_eq!(roi.at(c, y, x), f.map.at(c, y + 3, x + 2));
                }
            }
        }
    }

    #[test]
    fn outside_boxes_rejected() {
        let f = ramp_frame();
        assert!(roi_extract(&f, &BBox { left: 200.0, top: 0.0, width: 10.0, height: 10.0 }).is_err());
        assert!(roi_extract(&f, &BBox { left: -10.0, top: 0.0, width: 10.0, height: 10.0 }).is_err());
        // partially outside is clamped, not rejected
        assert!(roi_extract(&f, &BBox { left: -5.0, top: -5.0, width: 20.0, height: 20.0 }).is_ok());
    }

    #[test]
    fn half_and_half_region_lies_between() {
        let (ta, di) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let f = frame_from(FeatureMap::from_fn(3, 8, 8, |c, _, x| if x < 4 { ta[c] } else { di[c] }));
        let v = pool(&roi_extract(&f, &BBox { left: 0.0, top: 0.0, width: 64.0, height: 64.0 }).unwrap());
        let (st, sd) = (cosine(&v, &ta), cosine(&v, &di));
        assert!(st > 0.0 && st < 1.0 && sd > 0.0 && sd < 1.0);
    }

    #[test]
    fn uniform_patch_is_recovered_exactly() {
        let truth = BBox { left: 13.0, top: 7.5, width: 30.0, height: 22.0 };
        let f = frame_from(FeatureMap::from_fn(1, 10, 10, |_, y, x| {
            let cell = BBox { left: x as f64 * 8.0, top: y as f64 * 8.0, width: 8.0, height: 8.0 };
            0.7 * truth.intersection(&cell) / 64.0
        }));
        let (dot, norm2) = coverage_match(&f, 0, &truth);
        assert!((dot / norm2 - 0.7).abs() < 1e-12);
        let ncc = |b: &BBox| {
            let (d, n) = coverage_match(&f, 0, b);
            d / n.sqrt()
        };
        for (dx, dy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (3.0, 2.0)] {
            assert!(ncc(&truth.translated(dx, dy)) < ncc(&truth));
        }
    }

    #[test]
    fn coverage_drops_cells_outside_the_grid() {
        let (lo, c) = coverage(-6.0, 10.0, 8.0, 4);
        assert_eq!(lo, 0);
        assert_eq!(c, vec![1.0, 0.25]);
        let (lo, c) = coverage(20.0, 40.0, 8.0, 4);
        assert_eq!(lo, 2);
        assert_eq!(c, vec![0.5, 1.0]);
    }
}
