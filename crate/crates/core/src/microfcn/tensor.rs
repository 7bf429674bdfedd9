use crate::error::{shape, Result};
use crate::raster::Raster;

/// Channel-major (`C × H × W`) activations of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape(format!(
                "{channels}x{height}x{width} tensor needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    /// From an interleaved `H × W × C` raster.
    pub fn from_raster(r: &Raster<f64>) -> Self {
        let (h, w, c) = (r.height(), r.width(), r.channels());
        let mut data = vec![0.0; c * h * w];
        for (k, px) in r.data().chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * h * w + k] = v;
            }
        }
        Self { channels: c, height: h, width: w, data }
    }

    pub fn to_raster(&self) -> Raster<f64> {
        let n = self.plane_len();
        Raster::from_fn(self.height, self.width, self.channels, |y, x, c| self.data[c * n + y * self.width + x])
    }

    /// Channel-wise concatenation.
    pub fn concat(parts: &[&Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| shape("nothing to concatenate"))?;
        if parts.iter().any(|p| (p.height, p.width) != (first.height, first.width)) {
            return Err(shape("concatenated tensors must share spatial dimensions"));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(channels * first.plane_len());
        parts.iter().for_each(|p| data.extend_from_slice(&p.data));
        Ok(Self { channels, height: first.height, width: first.width, data })
    }

    /// Inverse of [`Tensor::concat`] given the channel counts.
    pub fn split(&self, channels: &[usize]) -> Vec<Tensor> {
        let n = self.plane_len();
        let mut start = 0;
        channels
            .iter()
            .map(|&c| {
                let t =
                    Tensor { channels: c, height: self.height, width: self.width, data: self.data[start * n..(start + c) * n].to_vec() };
                start += c;
                t
            })
            .collect()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert!(self.same_shape(other), "tensor shapes differ");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_round_trip() {
        let r = Raster::from_fn(3, 4, 2, |y, x, c| (y * 10 + x) as f64 + 0.5 * c as f64);
        let t = Tensor::from_raster(&r);
        assert_eq!(t.plane(1)[5], r.get(1, 1, 1));
        assert_eq!(t.to_raster(), r);
    }

    #[test]
    fn concat_split_invert() {
        let a = Tensor::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(2, 2, 2, (5..13).map(f64::from).collect()).unwrap();
        let c = Tensor::concat(&[&a, &b]).unwrap();
        assert_eq!(c.channels, 3);
        let parts = c.split(&[1, 2]);
        assert_eq!((&parts[0], &parts[1]), (&a, &b));
    }
}
