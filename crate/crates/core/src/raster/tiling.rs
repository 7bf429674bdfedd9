//! Patch extraction, empty-patch filtering, stitching and thresholding.

use serde::{Deserialize, Serialize};

use super::{Mask, Raster};
use crate::error::{invalid, shape, Result};

/// Fraction of all-zero pixels above which a patch counts as empty.
pub const DEFAULT_EMPTY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchMode {
    /// Stride equal to the patch size.
    #[default]
    #[serde(rename = "none")]
    NonOverlap,
    /// Stride of half the patch size.
    #[serde(rename = "half")]
    HalfOverlap,
}

impl std::str::FromStr for PatchMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::NonOverlap),
            "half" => Ok(Self::HalfOverlap),
            other => Err(crate::error::config(format!("unknown overlap '{other}' (expected none|half)"))),
        }
    }
}

fn axis_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    // ceil((len - patch) / stride) + 1 positions; the last one is pulled back
    // so that it ends exactly at the edge
    let count = (len - patch).div_ceil(stride) + 1;
    (0..count).map(|i| (i * stride).min(len - patch)).collect()
}

/// Top-left origins `(row, col)` of full-size patches covering an
/// `height × width` scene.
///
/// The last row and column of patches are anchored to the scene edge, so
/// every patch has the full size and every pixel is covered; non-overlap
/// tiling yields `ceil(H/ps)·ceil(W/ps)` patches.
pub fn extract_patches(height: usize, width: usize, patch_size: usize, mode: PatchMode) -> Result<Vec<(usize, usize)>> {
    if patch_size == 0 {
        return Err(invalid("patch size must be positive"));
    }
    if patch_size > height || patch_size > width {
        return Err(invalid(format!("patch size {patch_size} exceeds scene {height}x{width}")));
    }
    let stride = match mode {
        PatchMode::NonOverlap => patch_size,
        PatchMode::HalfOverlap => (patch_size / 2).max(1),
    };
    let rows = axis_origins(height, patch_size, stride);
    let cols = axis_origins(width, patch_size, stride);
    Ok(rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect())
}

/// True when more than `threshold` of the pixels are zero in every band.
pub fn is_empty_patch<T: Copy + Default + PartialEq>(patch: &Raster<T>, threshold: f64) -> bool {
    let zero = T::default();
    let c = patch.channels();
    let empty = patch.data().chunks_exact(c).filter(|px| px.iter().all(|&v| v == zero)).count();
    empty as f64 / patch.pixels() as f64 > threshold
}

/// Probability map of a whole scene assembled from patch outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    pub map: Raster<f64>,
    /// Number of patches covering each pixel.
    pub coverage: Vec<u32>,
}

/// Stitch patch probability maps into a scene map, averaging overlaps.
///
/// The mean is accumulated incrementally in patch order, which keeps the
/// result deterministic and reproduces a constant map exactly.
pub fn stitch(patches: &[((usize, usize), Raster<f64>)], height: usize, width: usize) -> Result<SceneMap> {
    let channels = patches.first().map(|(_, p)| p.channels()).ok_or_else(|| invalid("no patches to stitch"))?;
    let mut map = Raster::filled(height, width, channels, 0.0);
    let mut coverage = vec![0u32; height * width];
    for ((r0, c0), p) in patches {
        if p.channels() != channels {
            return Err(shape("patches have different channel counts"));
        }
        if r0 + p.height() > height || c0 + p.width() > width {
            return Err(invalid(format!("patch at ({r0}, {c0}) exceeds the {height}x{width} scene")));
        }
        for y in 0..p.height() {
            for x in 0..p.width() {
                let k = (r0 + y) * width + c0 + x;
                coverage[k] += 1;
                let n = f64::from(coverage[k]);
                for ch in 0..channels {
                    let i = map.index(r0 + y, c0 + x, ch);
                    let m = map.data()[i];
                    map.data_mut()[i] = m + (p.get(y, x, ch) - m) / n;
                }
            }
        }
    }
    if let Some(k) = coverage.iter().position(|&n| n == 0) {
        return Err(invalid(format!("pixel ({}, {}) is not covered by any patch", k / width, k % width)));
    }
    Ok(SceneMap { map, coverage })
}

/// Threshold the first channel: `value >= threshold` becomes foreground.
pub fn binarize(map: &Raster<f64>, threshold: f64) -> Mask {
    Raster::from_fn(map.height(), map.width(), 1, |y, x, _| map.get(y, x, 0) >= threshold)
}

/// One mask per channel from a per-pixel argmax; ties go to the lower index.
pub fn argmax_masks(map: &Raster<f64>) -> Vec<Mask> {
    let c = map.channels();
    let winners: Vec<usize> = map
        .data()
        .chunks_exact(c)
        .map(|px| {
            let mut best = 0;
            for k in 1..c {
                if px[k] > px[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    (0..c)
        .map(|k| {
            let data = winners.iter().map(|&w| w == k).collect();
            Raster::new(map.height(), map.width(), 1, data).expect("dimensions come from the map")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_tiles_on_768() {
        let o = extract_patches(768, 768, 384, PatchMode::NonOverlap).unwrap();
        assert_eq!(o, vec![(0, 0), (0, 384), (384, 0), (384, 384)]);
    }

    #[test]
    fn nine_tiles_on_1000() {
        let o = extract_patches(1000, 1000, 384, PatchMode::NonOverlap).unwrap();
        assert_eq!(o.len(), 9);
        assert!(o.contains(&(616, 616)));
        assert!(o.contains(&(384, 616)));
    }

    #[test]
    fn half_overlap_degenerate() {
        assert_eq!(extract_patches(384, 384, 384, PatchMode::HalfOverlap).unwrap(), vec![(0, 0)]);
        let o = extract_patches(768, 768, 384, PatchMode::HalfOverlap).unwrap();
        assert_eq!(o.len(), 9);
    }

    #[test]
    fn oversized_patch_is_error() {
        assert!(extract_patches(100, 500, 384, PatchMode::NonOverlap).is_err());
    }

    #[test]
    fn empty_patch_threshold() {
        let with_zeros = |frac: f64| Raster::from_fn(10, 10, 4, |y, x, _| if ((y * 10 + x) as f64) < frac * 100.0 { 0u16 } else { 500 });
        assert!(is_empty_patch(&with_zeros(0.85), DEFAULT_EMPTY_THRESHOLD));
        assert!(!is_empty_patch(&with_zeros(0.5), DEFAULT_EMPTY_THRESHOLD));
        let one_band_zero = Raster::from_fn(10, 10, 4, |_, _, c| if c == 2 { 0u16 } else { 9 });
        assert!(!is_empty_patch(&one_band_zero, DEFAULT_EMPTY_THRESHOLD));
    }

    #[test]
    fn stitch_examples() {
        let origins = extract_patches(8, 8, 4, PatchMode::NonOverlap).unwrap();
        let patches: Vec<_> = origins.iter().map(|&o| (o, Raster::filled(4, 4, 1, 0.7))).collect();
        let s = stitch(&patches, 8, 8).unwrap();
        assert!(s.map.data().iter().all(|&v| v == 0.7));

        let a = ((0, 0), Raster::filled(4, 6, 1, 0.2));
        let b = ((0, 2), Raster::filled(4, 6, 1, 0.6));
        let s = stitch(&[a, b], 4, 8).unwrap();
        assert_eq!(s.map.get(1, 0, 0), 0.2);
        assert!((s.map.get(1, 4, 0) - 0.4).abs() < 1e-15);
        assert_eq!(s.map.get(1, 7, 0), 0.6);
        assert_eq!(s.coverage[3], 2);

        let missing = &patches[..3];
        assert!(stitch(missing, 8, 8).is_err());
    }

    #[test]
    fn binarize_is_inclusive() {
        let m = Raster::new(1, 3, 1, vec![0.5, 0.4999, 0.9]).unwrap();
        assert_eq!(binarize(&m, 0.5).data(), &[true, false, true]);
    }

    #[test]
    fn argmax_picks_max_and_breaks_ties_low() {
        let m = Raster::new(1, 2, 3, vec![0.2, 0.5, 0.3, 0.4, 0.4, 0.2]).unwrap();
        let masks = argmax_masks(&m);
        assert_eq!(masks[1].data(), &[true, false]);
        assert_eq!(masks[0].data(), &[false, true]);
        assert_eq!(masks[2].data(), &[false, false]);
    }

    proptest! {
        #[test]
        fn tile_count_formula(h in 8usize..300, w in 8usize..300, ps in 1usize..8) {
            let o = extract_patches(h, w, ps, PatchMode::NonOverlap).unwrap();
            prop_assert_eq!(o.len(), h.div_ceil(ps) * w.div_ceil(ps));
        }

        #[test]
        fn constant_round_trip(h in 4usize..40, w in 4usize..40, ps in 2usize..5, half in any::<bool>(), v in 0.0f64..1.0) {
            let mode = if half { PatchMode::HalfOverlap } else { PatchMode::NonOverlap };
            let origins = extract_patches(h, w, ps, mode).unwrap();
            let patches: Vec<_> = origins.iter().map(|&o| (o, Raster::filled(ps, ps, 1, v))).collect();
            let s = stitch(&patches, h, w).unwrap();
            prop_assert!(s.map.data().iter().all(|&x| x == v));
            prop_assert!(s.coverage.iter().all(|&n| n >= 1));
        }
    }
}
