use super::Raster;
use crate::error::{invalid, Result};

/// Corner-aligned linear interpolation weights along one axis.
///
/// Output sample `i` reads `src = i·(in−1)/(out−1)` and blends `lo` and `hi`
/// with weight `frac` on `hi`.
#[derive(Debug, Clone)]
pub(crate) struct AxisWeights {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisWeights {
    pub fn new(in_len: usize, out_len: usize) -> Self {
        let mut lo = Vec::with_capacity(out_len);
        let mut hi = Vec::with_capacity(out_len);
        let mut frac = Vec::with_capacity(out_len);
        for i in 0..out_len {
            let src = if out_len == 1 || in_len == 1 { 0.0 } else { i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64 };
            let l = (src.floor() as usize).min(in_len - 1);
            let h = (l + 1).min(in_len - 1);
            lo.push(l);
            hi.push(h);
            frac.push(if h == l { 0.0 } else { src - l as f64 });
        }
        Self { lo, hi, frac }
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // exact when a == b, so constant inputs stay constant
    a + t * (b - a)
}

/// Separable, corner-aligned bilinear resize.
pub fn resize_bilinear(src: &Raster<f64>, out_h: usize, out_w: usize) -> Result<Raster<f64>> {
    if out_h == 0 || out_w == 0 {
        return Err(invalid("resize target must have positive dimensions"));
    }
    if (out_h, out_w) == src.dims() {
        return Ok(src.clone());
    }
    let c = src.channels();
    let wy = AxisWeights::new(src.height(), out_h);
    let wx = AxisWeights::new(src.width(), out_w);
    // horizontal pass
    let mut tmp = vec![0.0; src.height() * out_w * c];
    for y in 0..src.height() {
        for x in 0..out_w {
            for ch in 0..c {
                let a = src.get(y, wx.lo[x], ch);
                let b = src.get(y, wx.hi[x], ch);
                tmp[(y * out_w + x) * c + ch] = lerp(a, b, wx.frac[x]);
            }
        }
    }
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let (r0, r1, t) = (wy.lo[y], wy.hi[y], wy.frac[y]);
        for x in 0..out_w {
            for ch in 0..c {
                let a = tmp[(r0 * out_w + x) * c + ch];
                let b = tmp[(r1 * out_w + x) * c + ch];
                out.push(lerp(a, b, t));
            }
        }
    }
    Raster::new(out_h, out_w, c, out)
}

/// Corner-aligned nearest-neighbour resize, for label rasters.
pub fn resize_nearest<T: Copy>(src: &Raster<T>, out_h: usize, out_w: usize) -> Result<Raster<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(invalid("resize target must have positive dimensions"));
    }
    let wy = AxisWeights::new(src.height(), out_h);
    let wx = AxisWeights::new(src.width(), out_w);
    let pick = |w: &AxisWeights, i: usize| if w.frac[i] >= 0.5 { w.hi[i] } else { w.lo[i] };
    let c = src.channels();
    Ok(Raster::from_fn(out_h, out_w, c, |y, x, ch| src.get(pick(&wy, y), pick(&wx, x), ch)))
}
