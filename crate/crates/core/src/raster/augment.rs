//! Online geometric augmentation applied jointly to an image and its labels.

use rand::Rng;

use super::resize::lerp;
use super::Raster;
use crate::error::{shape, Result};

/// A horizontal flip, then `quarter_turns` clockwise rotations, then a
/// central zoom by `zoom ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricTransform {
    pub flip: bool,
    pub quarter_turns: u8,
    pub zoom: f64,
}

impl GeometricTransform {
    pub const IDENTITY: Self = Self { flip: false, quarter_turns: 0, zoom: 1.0 };

    /// Draw flip (p = 0.5), rotation (uniform over 0/90/180/270°) and zoom
    /// (uniform in `[1.0, 1.2]`).
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let flip = rng.random_bool(0.5);
        let quarter_turns = rng.random_range(0..4u8);
        let zoom = rng.random_range(1.0..=1.2);
        Self { flip, quarter_turns, zoom }
    }

    /// Source coordinate (continuous) read by output pixel `(y, x)`.
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (f64, f64) {
        // output dims after rotation are (h, w) for even turns, (w, h) otherwise
        let (oh, ow) = if self.quarter_turns.is_multiple_of(2) { (h, w) } else { (w, h) };
        // undo the zoom around the centre of the output grid
        let cy = (oh as f64 - 1.0) / 2.0;
        let cx = (ow as f64 - 1.0) / 2.0;
        let zy = cy + (y as f64 - cy) / self.zoom;
        let zx = cx + (x as f64 - cx) / self.zoom;
        // undo the clockwise rotation
        let (ry, rx) = match self.quarter_turns % 4 {
            0 => (zy, zx),
            1 => ((ow as f64 - 1.0) - zx, zy),
            2 => ((oh as f64 - 1.0) - zy, (ow as f64 - 1.0) - zx),
            _ => (zx, (oh as f64 - 1.0) - zy),
        };
        // undo the flip
        let fx = if self.flip { (w as f64 - 1.0) - rx } else { rx };
        (ry, fx)
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns.is_multiple_of(2) {
            (h, w)
        } else {
            (w, h)
        }
    }

    /// Apply to a real-valued image with bilinear sampling.
    pub fn apply_image(&self, img: &Raster<f64>) -> Raster<f64> {
        let (h, w) = img.dims();
        let (oh, ow) = self.out_dims(h, w);
        Raster::from_fn(oh, ow, img.channels(), |y, x, c| {
            let (sy, sx) = self.source(y, x, h, w);
            let sy = sy.clamp(0.0, (h - 1) as f64);
            let sx = sx.clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
            let top = lerp(img.get(y0, x0, c), img.get(y0, x1, c), tx);
            let bottom = lerp(img.get(y1, x0, c), img.get(y1, x1, c), tx);
            lerp(top, bottom, ty)
        })
    }

    /// Apply to a label raster with nearest-neighbour sampling.
    pub fn apply_labels<T: Copy>(&self, labels: &Raster<T>) -> Raster<T> {
        let (h, w) = labels.dims();
        let (oh, ow) = self.out_dims(h, w);
        Raster::from_fn(oh, ow, labels.channels(), |y, x, c| {
            let (sy, sx) = self.source(y, x, h, w);
            let sy = (sy.round().max(0.0) as usize).min(h - 1);
            let sx = (sx.round().max(0.0) as usize).min(w - 1);
            labels.get(sy, sx, c)
        })
    }
}

/// Draw one transform and apply it to both the image and its labels.
pub fn geometric_augment<T: Copy, R: Rng + ?Sized>(
    image: &Raster<f64>,
    labels: &Raster<T>,
    rng: &mut R,
) -> Result<(Raster<f64>, Raster<T>)> {
    if !image.same_dims(labels) {
        return Err(shape("image and labels must share dimensions"));
    }
    let t = GeometricTransform::sample(rng);
    Ok((t.apply_image(image), t.apply_labels(labels)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn ramp() -> Raster<f64> {
        Raster::from_fn(6, 6, 2, |y, x, c| (y * 6 + x) as f64 + 100.0 * c as f64)
    }

    #[test]
    fn identity_is_identity() {
        let r = ramp();
        assert_eq!(GeometricTransform::IDENTITY.apply_image(&r), r);
        assert_eq!(GeometricTransform::IDENTITY.apply_labels(&r), r);
    }

    #[test]
    fn flip_twice_is_identity() {
        let r = ramp();
        let f = GeometricTransform { flip: true, quarter_turns: 0, zoom: 1.0 };
        let once = f.apply_image(&r);
        assert_eq!(once.get(0, 0, 0), 5.0);
        assert_eq!(f.apply_image(&once), r);
    }

    #[test]
    fn quarter_turn_rotates_clockwise() {
        let r = Raster::from_fn(2, 3, 1, |y, x, _| (y * 3 + x) as u8);
        let t = GeometricTransform { flip: false, quarter_turns: 1, zoom: 1.0 };
        let o = t.apply_labels(&r);
        assert_eq!(o.dims(), (3, 2));
        // [[0,1,2],[3,4,5]] rotated clockwise is [[3,0],[4,1],[5,2]]
        assert_eq!(o.data(), &[3, 0, 4, 1, 5, 2]);
        let four = GeometricTransform { quarter_turns: 4, ..t };
        assert_eq!(four.apply_labels(&r), r);
    }

    #[test]
    fn area_preserved_without_zoom() {
        let m = Raster::from_fn(8, 8, 1, |y, x, _| (x * 3 + y) % 5 == 0);
        for flip in [false, true] {
            for q in 0..4 {
                let t = GeometricTransform { flip, quarter_turns: q, zoom: 1.0 };
                assert_eq!(t.apply_labels(&m).count_ones(), m.count_ones());
            }
        }
    }

    #[test]
    fn seeded_augment_is_reproducible() {
        let img = ramp();
        let lab = ramp().map(|v| v > 20.0);
        let a = geometric_augment(&img, &lab, &mut seed::rng(3)).unwrap();
        let b = geometric_augment(&img, &lab, &mut seed::rng(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zoom_samples_stay_in_range() {
        let img = ramp();
        let t = GeometricTransform { flip: false, quarter_turns: 0, zoom: 1.2 };
        let o = t.apply_image(&img);
        let (lo, hi) = (0.0, 135.0);
        assert!(o.data().iter().all(|v| (lo..=hi).contains(v)));
        // the centre of the grid is a fixed point of a central zoom
        let c = t.apply_image(&Raster::from_fn(5, 5, 1, |y, x, _| (y * 5 + x) as f64));
        assert!((c.get(2, 2, 0) - 12.0).abs() < 1e-12);
    }
}
