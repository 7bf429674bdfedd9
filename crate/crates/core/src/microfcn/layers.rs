//! Layer kernels with explicit backward passes.
//!
//! Convolutions use zero "same" padding. Reductions run in a fixed order so
//! results are bit-reproducible.

use rand::Rng;

use super::tensor::Tensor;
use crate::raster::AxisWeights;

/// Four-lane dot product with a fixed summation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// `out[x] += k0·inp[x−1] + k1·inp[x] + k2·inp[x+1]`, zero outside the row.
#[inline]
fn row_conv3(out: &mut [f64], inp: &[f64], k: [f64; 3]) {
    let w = out.len();
    if w == 1 {
        out[0] += k[1] * inp[0];
        return;
    }
    out[0] += k[1] * inp[0] + k[2] * inp[1];
    for (((o, l), c), r) in out[1..w - 1].iter_mut().zip(&inp[..w - 2]).zip(&inp[1..w - 1]).zip(&inp[2..]) {
        *o += k[0] * l + k[1] * c + k[2] * r;
    }
    out[w - 1] += k[0] * inp[w - 2] + k[1] * inp[w - 1];
}

/// Square convolution with kernel 1 or 3, stride 1, same padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out][in][ky][kx]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of one [`Conv2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvGrad {
    pub fn zeros_like(conv: &Conv2d) -> Self {
        Self { weight: vec![0.0; conv.weight.len()], bias: vec![0.0; conv.bias.len()] }
    }

    pub fn add_assign(&mut self, other: &ConvGrad) {
        self.weight.iter_mut().zip(&other.weight).for_each(|(a, b)| *a += b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, s: f64) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= s);
    }
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel == 1 || kernel == 3, "kernel must be 1 or 3");
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, kernel);
        let area = (kernel * kernel) as f64;
        let limit = (6.0 / (in_channels as f64 * area + out_channels as f64 * area)).sqrt();
        conv.weight.iter_mut().for_each(|w| *w = rng.random_range(-limit..=limit));
        conv
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn taps(&self, co: usize, ci: usize) -> &[f64] {
        let kk = self.kernel * self.kernel;
        &self.weight[(co * self.in_channels + ci) * kk..][..kk]
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let (h, w) = (x.height, x.width);
        let mut out = Tensor::zeros(self.out_channels, h, w);
        for co in 0..self.out_channels {
            let o = out.plane_mut(co);
            o.fill(self.bias[co]);
            for ci in 0..self.in_channels {
                let inp = x.plane(ci);
                let k = self.taps(co, ci);
                if self.kernel == 1 {
                    axpy(k[0], inp, o);
                    continue;
                }
                for y in 0..h {
                    let orow = &mut o[y * w..(y + 1) * w];
                    for ky in 0..3 {
                        let Some(iy) = (y + ky).checked_sub(1).filter(|&iy| iy < h) else { continue };
                        row_conv3(orow, &inp[iy * w..(iy + 1) * w], [k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]]);
                    }
                }
            }
        }
        out
    }

    /// Accumulate parameter gradients into `grad`; return the input gradient
    /// when `want_input` is set.
    pub fn backward(&self, x: &Tensor, g: &Tensor, grad: &mut ConvGrad, want_input: bool) -> Option<Tensor> {
        let (h, w) = (x.height, x.width);
        let kk = self.kernel * self.kernel;
        let mut gin = want_input.then(|| Tensor::zeros(self.in_channels, h, w));
        for co in 0..self.out_channels {
            let go = g.plane(co);
            grad.bias[co] += go.iter().sum::<f64>();
            for ci in 0..self.in_channels {
                let inp = x.plane(ci);
                let gw = &mut grad.weight[(co * self.in_channels + ci) * kk..][..kk];
                let k = self.taps(co, ci);
                if self.kernel == 1 {
                    gw[0] += dot(go, inp);
                    if let Some(gi) = gin.as_mut() {
                        axpy(k[0], go, gi.plane_mut(ci));
                    }
                    continue;
                }
                for y in 0..h {
                    let grow = &go[y * w..(y + 1) * w];
                    for ky in 0..3 {
                        let Some(iy) = (y + ky).checked_sub(1).filter(|&iy| iy < h) else { continue };
                        let irow = &inp[iy * w..(iy + 1) * w];
                        if w > 1 {
                            gw[ky * 3] += dot(&grow[1..], &irow[..w - 1]);
                            gw[ky * 3 + 2] += dot(&grow[..w - 1], &irow[1..]);
                        }
                        gw[ky * 3 + 1] += dot(grow, irow);
                        if let Some(gi) = gin.as_mut() {
                            let gi_row = &mut gi.plane_mut(ci)[iy * w..(iy + 1) * w];
                            row_conv3(gi_row, grow, [k[ky * 3 + 2], k[ky * 3 + 1], k[ky * 3]]);
                        }
                    }
                }
            }
        }
        gin
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&v| v.max(0.0)).collect();
    Tensor { channels: x.channels, height: x.height, width: x.width, data }
}

/// Gradient through ReLU given its output.
pub fn relu_backward(out: &Tensor, g: &Tensor) -> Tensor {
    let data = out.data.iter().zip(&g.data).map(|(&o, &gi)| if o > 0.0 { gi } else { 0.0 }).collect();
    Tensor { channels: out.channels, height: out.height, width: out.width, data }
}

/// 2×2 max pooling with stride 2; returns the argmax index of each window.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut out = Tensor::zeros(x.channels, oh, ow);
    let mut arg = Vec::with_capacity(x.channels * oh * ow);
    for c in 0..x.channels {
        let p = x.plane(c);
        for y in 0..oh {
            for xx in 0..ow {
                let base = 2 * y * x.width + 2 * xx;
                let cands = [base, base + 1, base + x.width, base + x.width + 1];
                // first maximum wins
                let best = cands.iter().copied().fold(cands[0], |b, i| if p[i] > p[b] { i } else { b });
                out.data[(c * oh + y) * ow + xx] = p[best];
                arg.push(c * x.plane_len() + best);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(input_shape: (usize, usize, usize), arg: &[usize], g: &Tensor) -> Tensor {
    let (c, h, w) = input_shape;
    let mut gin = Tensor::zeros(c, h, w);
    for (&i, &gv) in arg.iter().zip(&g.data) {
        gin.data[i] += gv;
    }
    gin
}

/// Corner-aligned bilinear resampling of every channel to `out_h × out_w`.
pub fn upsample(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let wy = AxisWeights::new(x.height, out_h);
    let wx = AxisWeights::new(x.width, out_w);
    let mut out = Tensor::zeros(x.channels, out_h, out_w);
    for c in 0..x.channels {
        let p = x.plane(c);
        let o = out.plane_mut(c);
        for y in 0..out_h {
            let (r0, r1, fy) = (wy.lo[y] * x.width, wy.hi[y] * x.width, wy.frac[y]);
            for xx in 0..out_w {
                let (c0, c1, fx) = (wx.lo[xx], wx.hi[xx], wx.frac[xx]);
                let top = p[r0 + c0] + fx * (p[r0 + c1] - p[r0 + c0]);
                let bottom = p[r1 + c0] + fx * (p[r1 + c1] - p[r1 + c0]);
                o[y * out_w + xx] = top + fy * (bottom - top);
            }
        }
    }
    out
}

pub fn upsample_backward(input_shape: (usize, usize, usize), g: &Tensor) -> Tensor {
    let (c, h, w) = input_shape;
    let wy = AxisWeights::new(h, g.height);
    let wx = AxisWeights::new(w, g.width);
    let mut gin = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let gp = g.plane(ch);
        let gi = gin.plane_mut(ch);
        for y in 0..g.height {
            let (r0, r1, fy) = (wy.lo[y] * w, wy.hi[y] * w, wy.frac[y]);
            for xx in 0..g.width {
                let (c0, c1, fx) = (wx.lo[xx], wx.hi[xx], wx.frac[xx]);
                let v = gp[y * g.width + xx];
                gi[r0 + c0] += v * (1.0 - fy) * (1.0 - fx);
                gi[r0 + c1] += v * (1.0 - fy) * fx;
                gi[r1 + c0] += v * fy * (1.0 - fx);
                gi[r1 + c1] += v * fy * fx;
            }
        }
    }
    gin
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect();
    Tensor { channels: x.channels, height: x.height, width: x.width, data }
}

/// Gradient through the sigmoid given its output.
pub fn sigmoid_backward(out: &Tensor, g: &Tensor) -> Tensor {
    let data = out.data.iter().zip(&g.data).map(|(&y, &gi)| gi * y * (1.0 - y)).collect();
    Tensor { channels: out.channels, height: out.height, width: out.width, data }
}

/// Per-pixel softmax across channels.
pub fn softmax(x: &Tensor) -> Tensor {
    let n = x.plane_len();
    let mut out = Tensor::zeros(x.channels, x.height, x.width);
    for i in 0..n {
        let max = (0..x.channels).map(|c| x.data[c * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for c in 0..x.channels {
            let e = (x.data[c * n + i] - max).exp();
            out.data[c * n + i] = e;
            total += e;
        }
        for c in 0..x.channels {
            out.data[c * n + i] /= total;
        }
    }
    out
}

/// Gradient through the softmax given its output.
pub fn softmax_backward(out: &Tensor, g: &Tensor) -> Tensor {
    let n = out.plane_len();
    let mut gin = Tensor::zeros(out.channels, out.height, out.width);
    for i in 0..n {
        let s: f64 = (0..out.channels).map(|c| g.data[c * n + i] * out.data[c * n + i]).sum();
        for c in 0..out.channels {
            let y = out.data[c * n + i];
            gin.data[c * n + i] = y * (g.data[c * n + i] - s);
        }
    }
    gin
}
