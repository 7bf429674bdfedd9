//! Shadow removal by per-component histogram matching.
//!
//! Every 8-connected shadow component is matched, band by band, to the
//! intensities of a ring around it: the component dilated by
//! [`RING_RADIUS`] pixels, minus shadow, cloud and empty pixels. A component
//! whose ring is empty falls back to all clear pixels of the scene.
//!
//! Histograms are taken at full 16-bit resolution. Each source value maps to
//! its mid-rank quantile and then through the piecewise-linear inverse CDF of
//! the reference, so a distribution matched to itself is unchanged and a
//! constant patch maps onto a constant reference exactly.

use super::Scene;
use crate::error::{invalid, Result};
use crate::raster::{Mask, RawRaster};

/// Chebyshev radius of the neighbourhood dilation.
pub const RING_RADIUS: usize = 15;

/// Pixel indices of each 8-connected component of `mask`, in scan order.
pub fn connected_components(mask: &Mask) -> Vec<Vec<usize>> {
    let (h, w) = mask.dims();
    let data = mask.data();
    let mut seen = vec![false; h * w];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut members = Vec::new();
        while let Some(k) = stack.pop() {
            members.push(k);
            let (y, x) = (k / w, k % w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let n = ny * w + nx;
                    if data[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    components
}

/// Square dilation of a pixel set by `radius`, as sorted pixel indices.
fn dilate(members: &[usize], h: usize, w: usize, radius: usize) -> Vec<usize> {
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for &k in members {
        let (y, x) = (k / w, k % w);
        y0 = y0.min(y);
        y1 = y1.max(y);
        x0 = x0.min(x);
        x1 = x1.max(x);
    }
    let by0 = y0.saturating_sub(radius);
    let by1 = (y1 + radius).min(h - 1);
    let bx0 = x0.saturating_sub(radius);
    let bx1 = (x1 + radius).min(w - 1);
    let bw = bx1 - bx0 + 1;
    let bh = by1 - by0 + 1;
    let mut local = vec![false; bh * bw];
    for &k in members {
        local[(k / w - by0) * bw + (k % w - bx0)] = true;
    }
    // separable max filter: rows, then columns
    let mut rows = vec![false; bh * bw];
    for y in 0..bh {
        let mut last: Option<usize> = None;
        let mut next = vec![None; bw];
        for x in (0..bw).rev() {
            if local[y * bw + x] {
                last = Some(x);
            }
            next[x] = last;
        }
        let mut prev: Option<usize> = None;
        for x in 0..bw {
            if local[y * bw + x] {
                prev = Some(x);
            }
            let near_prev = prev.is_some_and(|p| x - p <= radius);
            let near_next = next[x].is_some_and(|n| n - x <= radius);
            rows[y * bw + x] = near_prev || near_next;
        }
    }
    let mut out = Vec::new();
    for y in 0..bh {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(bh - 1);
        for x in 0..bw {
            if (lo..=hi).any(|yy| rows[yy * bw + x]) {
                out.push((y + by0) * w + x + bx0);
            }
        }
    }
    out
}

/// Distinct sorted values and their mid-rank quantiles.
fn quantile_knots(values: &mut [u16]) -> Vec<(f64, f64)> {
    values.sort_unstable();
    let n = values.len() as f64;
    let mut knots = Vec::new();
    let mut i = 0;
    while i < values.len() {
        let v = values[i];
        let mut j = i;
        while j < values.len() && values[j] == v {
            j += 1;
        }
        let q = (i as f64 + 0.5 * (j - i) as f64) / n;
        knots.push((q, f64::from(v)));
        i = j;
    }
    knots
}

fn inverse_cdf(knots: &[(f64, f64)], q: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if q <= first.0 {
        return first.1;
    }
    if q >= last.0 {
        return last.1;
    }
    let j = knots.partition_point(|k| k.0 <= q);
    let (q0, v0) = knots[j - 1];
    let (q1, v1) = knots[j];
    v0 + (q - q0) / (q1 - q0) * (v1 - v0)
}

/// Monotone map sending the distribution of `source` onto `reference`,
/// as `(value, matched)` pairs for every distinct source value.
pub fn match_histogram(source: &[u16], reference: &[u16]) -> Vec<(u16, u16)> {
    assert!(!source.is_empty() && !reference.is_empty(), "histogram matching needs samples");
    let src = quantile_knots(&mut source.to_vec());
    let refk = quantile_knots(&mut reference.to_vec());
    src.iter().map(|&(q, v)| (v as u16, inverse_cdf(&refk, q).round().clamp(0.0, 65535.0) as u16)).collect()
}

/// Pixels that are zero in every band.
pub fn empty_pixels(raster: &RawRaster) -> Mask {
    let c = raster.channels();
    let data = raster.data().chunks_exact(c).map(|px| px.iter().all(|&v| v == 0)).collect();
    Mask::new(raster.height(), raster.width(), 1, data).expect("dimensions come from the raster")
}

/// Shadow-free copy of the scene raster.
pub fn remove_shadows(scene: &Scene) -> Result<RawRaster> {
    let shadow = &scene.shadow_mask;
    if shadow.is_all_false() {
        return Err(invalid(format!("scene '{}' has no shadow pixels", scene.scene_id)));
    }
    let (h, w) = shadow.dims();
    let clear = shadow.not().and_not(&scene.cloud_mask).and_not(&empty_pixels(&scene.raster));
    if clear.is_all_false() {
        return Err(invalid(format!("scene '{}' has no shadow-free, cloud-free pixels to match against", scene.scene_id)));
    }
    let clear_idx: Vec<usize> = (0..h * w).filter(|&k| clear.data()[k]).collect();
    let channels = scene.raster.channels();
    let mut out = scene.raster.clone();
    for members in connected_components(shadow) {
        let ring: Vec<usize> = dilate(&members, h, w, RING_RADIUS).into_iter().filter(|&k| clear.data()[k]).collect();
        let reference_idx = if ring.is_empty() { &clear_idx } else { &ring };
        for c in 0..channels {
            let band = |k: usize| scene.raster.data()[k * channels + c];
            let source: Vec<u16> = members.iter().map(|&k| band(k)).collect();
            let reference: Vec<u16> = reference_idx.iter().map(|&k| band(k)).collect();
            let lut = match_histogram(&source, &reference);
            for &k in &members {
                let v = band(k);
                let i = lut.partition_point(|e| e.0 < v);
                out.data_mut()[k * channels + c] = lut[i].1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use crate::sdaa::SolarGeometry;

    fn scene(raster: RawRaster, shadow: Mask, cloud: Mask) -> Scene {
        Scene::new("t".into(), raster, cloud, shadow, SolarGeometry::new(120.0, 30.0).unwrap()).unwrap()
    }

    #[test]
    fn components_use_eight_connectivity() {
        // two diagonal pixels touch, the third is separate
        let m = Raster::from_fn(5, 5, 1, |y, x, _| (y, x) == (0, 0) || (y, x) == (1, 1) || (y, x) == (4, 4));
        let cc = connected_components(&m);
        assert_eq!(cc.len(), 2);
        assert_eq!(cc[0], vec![0, 6]);
    }

    #[test]
    fn dilation_is_square() {
        let d = dilate(&[2 * 9 + 4], 9, 9, 2);
        assert_eq!(d.len(), 25);
        assert!(d.contains(&2) && d.contains(&(4 * 9 + 6)));
        assert!(!d.contains(&1) && !d.contains(&(5 * 9 + 4)));
    }

    #[test]
    fn constant_patch_maps_to_background() {
        let shadow = Raster::from_fn(20, 20, 1, |y, x, _| (5..10).contains(&y) && (5..12).contains(&x));
        let raster = Raster::from_fn(20, 20, 4, |y, x, _| if shadow.get(y, x, 0) { 3000u16 } else { 9000 });
        let out = remove_shadows(&scene(raster.clone(), shadow.clone(), Mask::empty_mask(20, 20))).unwrap();
        assert!(out.data().iter().all(|&v| v == 9000));
    }

    #[test]
    fn self_matching_is_identity() {
        let src: Vec<u16> = (0..200).map(|i| (1000 + (i * 37) % 500) as u16).collect();
        let lut = match_histogram(&src, &src);
        assert!(lut.iter().all(|(a, b)| a == b));
    }

    #[test]
    fn matched_region_already_like_neighbourhood_is_unchanged() {
        // shadow texture equals the ring texture exactly: same value multiset
        let pattern = |y: usize, x: usize| 5000 + ((y * 7 + x * 3) % 4) as u16 * 100;
        let shadow = Raster::from_fn(12, 12, 1, |y, x, _| (4..8).contains(&y) && (4..8).contains(&x));
        let raster = Raster::from_fn(12, 12, 4, |y, x, _| pattern(y, x));
        let out = remove_shadows(&scene(raster.clone(), shadow, Mask::empty_mask(12, 12))).unwrap();
        assert_eq!(out, raster);
    }

    #[test]
    fn matching_is_monotone() {
        let src: Vec<u16> = (0..100).map(|i| (i * 13 % 97) as u16 + 100).collect();
        let refv: Vec<u16> = (0..60).map(|i| (i * i % 211) as u16 + 4000).collect();
        let lut = match_histogram(&src, &refv);
        for pair in lut.windows(2) {
            assert!(pair[0].0 < pair[1].0 && pair[0].1 <= pair[1].1);
        }
    }

    #[test]
    fn non_shadow_pixels_untouched() {
        let shadow = Raster::from_fn(30, 30, 1, |y, x, _| (10..14).contains(&y) && (3..9).contains(&x));
        let cloud = Raster::from_fn(30, 30, 1, |y, x, _| (20..25).contains(&y) && (20..28).contains(&x));
        let raster = Raster::from_fn(30, 30, 4, |y, x, c| {
            if shadow.get(y, x, 0) {
                2000 + (x * 10 + c) as u16
            } else if cloud.get(y, x, 0) {
                25000
            } else {
                8000 + ((y * 31 + x * 17) % 300) as u16
            }
        });
        let out = remove_shadows(&scene(raster.clone(), shadow.clone(), cloud)).unwrap();
        for y in 0..30 {
            for x in 0..30 {
                for c in 0..4 {
                    if !shadow.get(y, x, 0) {
                        assert_eq!(out.get(y, x, c), raster.get(y, x, c));
                    } else {
                        assert!((8000..8300).contains(&out.get(y, x, c)));
                    }
                }
            }
        }
    }

    #[test]
    fn ring_fallback_uses_global_clear() {
        // shadow boxed in by cloud on all sides within the ring radius
        let n = 50;
        let shadow = Raster::from_fn(n, n, 1, |y, x, _| (20..23).contains(&y) && (20..23).contains(&x));
        let cloud = Raster::from_fn(n, n, 1, |y, x, _| {
            !shadow.get(y, x, 0) && (20usize.saturating_sub(16)..39).contains(&y) && (4..39).contains(&x)
        });
        let raster = Raster::from_fn(n, n, 4, |y, x, _| {
            if shadow.get(y, x, 0) {
                1000
            } else if cloud.get(y, x, 0) {
                30000
            } else {
                7000
            }
        });
        let out = remove_shadows(&scene(raster, shadow.clone(), cloud)).unwrap();
        assert_eq!(out.get(21, 21, 0), 7000);
    }

    #[test]
    fn errors() {
        let r = Raster::filled(6, 6, 4, 100u16);
        let none = Mask::empty_mask(6, 6);
        assert!(remove_shadows(&scene(r.clone(), none.clone(), none.clone())).is_err());
        let all = Raster::filled(6, 6, 1, true);
        assert!(remove_shadows(&scene(r, all, none)).is_err());
    }
}
