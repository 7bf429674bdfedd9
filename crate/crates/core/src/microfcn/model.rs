use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::{
    maxpool2, maxpool2_backward, relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward, upsample, upsample_backward,
    Conv2d, ConvGrad,
};
use super::tensor::Tensor;
use crate::error::{config, shape, Result};
use crate::seed;

/// Output activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Sigmoid,
    Softmax,
}

impl FromStr for Head {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "softmax" => Ok(Self::Softmax),
            other => Err(config(format!("unknown head '{other}' (expected sigmoid|softmax)"))),
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sigmoid => "sigmoid",
            Self::Softmax => "softmax",
        })
    }
}

/// Shape of the encoder/decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub contracting_blocks: usize,
    /// Channels of the first block; doubled by each deeper block.
    pub base_width: usize,
    pub input_channels: usize,
    pub classes: usize,
    pub use_aggregation_branch: bool,
    pub head: Head,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { contracting_blocks: 3, base_width: 8, input_channels: 4, classes: 1, use_aggregation_branch: true, head: Head::Sigmoid }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.contracting_blocks < 2 {
            return Err(config("contracting_blocks must be at least 2"));
        }
        if self.contracting_blocks > 12 {
            return Err(config("contracting_blocks above 12 is not supported"));
        }
        if self.base_width == 0 || self.input_channels == 0 || self.classes == 0 {
            return Err(config("base_width, input_channels and classes must be positive"));
        }
        match self.head {
            Head::Sigmoid if self.classes != 1 => Err(config("a sigmoid head predicts exactly one class")),
            Head::Softmax if self.classes < 2 => Err(config("a softmax head needs at least two classes")),
            _ => Ok(()),
        }
    }

    pub fn expanding_blocks(&self) -> usize {
        self.contracting_blocks - 1
    }

    /// Output channels of every contracting block, shallowest first.
    pub fn widths(&self) -> Vec<usize> {
        (0..self.contracting_blocks).map(|i| self.base_width << i).collect()
    }

    /// Input height and width must be multiples of this.
    pub fn downsampling_factor(&self) -> usize {
        1 << (self.contracting_blocks - 1)
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
        let w = self.widths();
        let mut total = 0;
        for (i, &wi) in w.iter().enumerate() {
            let cin = if i == 0 { self.input_channels } else { w[i - 1] };
            total += conv(cin, wi, 3) + conv(wi, wi, 1) + conv(wi, wi, 3);
        }
        for l in 0..self.expanding_blocks() {
            total += conv(w[l + 1] + w[l], w[l], 3) + conv(w[l], w[l], 3);
        }
        if self.use_aggregation_branch {
            total += conv(w.iter().sum(), self.base_width, 1);
        }
        total + conv(self.base_width, self.classes, 1)
    }
}

/// Encoder/decoder with per-level skips and an optional aggregation branch.
///
/// Contracting block `i` (after a 2×2 max-pool when `i > 0`):
/// 3×3 → 1×1 → 3×3, ReLU after each. Expanding block: bilinear ×2
/// upsample, concatenation with the matching contracting output, then
/// 3×3 → 3×3 with ReLU. The aggregation branch upsamples the bottleneck and
/// every expanding output to full resolution, fuses their concatenation with
/// a 1×1 convolution and adds the result to the last expanding output.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    convs: Vec<Conv2d>,
}

/// Gradients for every convolution, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub convs: Vec<ConvGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self { convs: model.convs.iter().map(ConvGrad::zeros_like).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.convs.iter_mut().zip(&other.convs).for_each(|(a, b)| a.add_assign(b));
    }

    pub fn scale(&mut self, s: f64) {
        self.convs.iter_mut().for_each(|g| g.scale(s));
    }

    /// Flattened in the same order as [`Model::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.convs.iter().flat_map(|g| g.weight.iter().chain(&g.bias).copied()).collect()
    }
}

struct EncCache {
    input: Tensor,
    pool_arg: Option<Vec<usize>>,
    a: Tensor,
    b: Tensor,
    c: Tensor,
}

struct DecCache {
    up_from: (usize, usize, usize),
    cat: Tensor,
    a: Tensor,
    b: Tensor,
}

/// Activations kept by [`Model::forward_cached`] for the backward pass.
pub struct Cache {
    enc: Vec<EncCache>,
    dec: Vec<DecCache>,
    ab_cat: Option<Tensor>,
    features: Tensor,
    output: Tensor,
}

impl Cache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// True when both passes took the same ReLU branches and max-pool
    /// winners, so the network is one affine map of its input around both.
    pub fn same_pattern(&self, other: &Cache) -> bool {
        fn signs(a: &Tensor, b: &Tensor) -> bool {
            a.data.len() == b.data.len() && a.data.iter().zip(&b.data).all(|(x, y)| (*x > 0.0) == (*y > 0.0))
        }
        self.enc.len() == other.enc.len()
            && self.dec.len() == other.dec.len()
            && self
                .enc
                .iter()
                .zip(&other.enc)
                .all(|(p, q)| p.pool_arg == q.pool_arg && signs(&p.a, &q.a) && signs(&p.b, &q.b) && signs(&p.c, &q.c))
            && self.dec.iter().zip(&other.dec).all(|(p, q)| signs(&p.a, &q.a) && signs(&p.b, &q.b))
    }
}

impl Model {
    /// Xavier-initialised model; identical seeds give identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive(seed, "init"));
        let w = config.widths();
        let mut convs = Vec::new();
        for (i, &wi) in w.iter().enumerate() {
            let cin = if i == 0 { config.input_channels } else { w[i - 1] };
            convs.push(Conv2d::xavier(cin, wi, 3, &mut rng));
            convs.push(Conv2d::xavier(wi, wi, 1, &mut rng));
            convs.push(Conv2d::xavier(wi, wi, 3, &mut rng));
        }
        for j in 0..config.expanding_blocks() {
            let l = config.contracting_blocks - 2 - j;
            convs.push(Conv2d::xavier(w[l + 1] + w[l], w[l], 3, &mut rng));
            convs.push(Conv2d::xavier(w[l], w[l], 3, &mut rng));
        }
        if config.use_aggregation_branch {
            convs.push(Conv2d::xavier(w.iter().sum(), config.base_width, 1, &mut rng));
        }
        convs.push(Conv2d::xavier(config.base_width, config.classes, 1, &mut rng));
        Ok(Self { config, convs })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn convs(&self) -> &[Conv2d] {
        &self.convs
    }

    pub fn convs_mut(&mut self) -> &mut [Conv2d] {
        &mut self.convs
    }

    /// Parameters counted from the allocated tensors.
    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2d::param_count).sum()
    }

    /// Name and shape of every parameter tensor, in declaration order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let n = self.config.contracting_blocks;
        let mut names = Vec::new();
        for i in 0..n {
            for part in ["conv3a", "conv1", "conv3b"] {
                names.push(format!("contract{i}.{part}"));
            }
        }
        for j in 0..n - 1 {
            names.push(format!("expand{j}.conv3a"));
            names.push(format!("expand{j}.conv3b"));
        }
        if self.config.use_aggregation_branch {
            names.push("aggregate.conv1".into());
        }
        names.push("head.conv1".into());
        let mut layout = Vec::new();
        for (name, c) in names.into_iter().zip(&self.convs) {
            layout.push((format!("{name}.weight"), vec![c.out_channels, c.in_channels, c.kernel, c.kernel]));
            layout.push((format!("{name}.bias"), vec![c.out_channels]));
        }
        layout
    }

    /// All parameters flattened, weight then bias per convolution.
    pub fn params(&self) -> Vec<f64> {
        self.convs.iter().flat_map(|c| c.weight.iter().chain(&c.bias).copied()).collect()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(shape(format!("model has {} parameters, got {}", self.param_count(), values.len())));
        }
        let mut it = values.iter().copied();
        for c in &mut self.convs {
            c.weight.iter_mut().chain(c.bias.iter_mut()).for_each(|v| *v = it.next().expect("length checked"));
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let f = self.config.downsampling_factor();
        if x.channels != self.config.input_channels {
            return Err(shape(format!("model expects {} input channels, got {}", self.config.input_channels, x.channels)));
        }
        if x.height == 0 || x.width == 0 || !x.height.is_multiple_of(f) || !x.width.is_multiple_of(f) {
            return Err(shape(format!("input {}x{} is not divisible by the downsampling factor {f}", x.height, x.width)));
        }
        Ok(())
    }

    fn dec_index(&self, j: usize, k: usize) -> usize {
        3 * self.config.contracting_blocks + 2 * j + k
    }

    fn ab_index(&self) -> usize {
        3 * self.config.contracting_blocks + 2 * self.config.expanding_blocks()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.output)
    }

    /// Forward pass keeping the activations needed by [`Model::backward`].
    pub fn forward_cached(&self, x: &Tensor) -> Result<Cache> {
        self.check_input(x)?;
        let n = self.config.contracting_blocks;
        let mut enc: Vec<EncCache> = Vec::with_capacity(n);
        for i in 0..n {
            let (input, pool_arg) = match enc.last() {
                None => (x.clone(), None),
                Some(prev) => {
                    let (p, arg) = maxpool2(&prev.c);
                    (p, Some(arg))
                }
            };
            let a = relu(&self.convs[3 * i].forward(&input));
            let b = relu(&self.convs[3 * i + 1].forward(&a));
            let c = relu(&self.convs[3 * i + 2].forward(&b));
            enc.push(EncCache { input, pool_arg, a, b, c });
        }
        let mut dec: Vec<DecCache> = Vec::with_capacity(n - 1);
        for j in 0..n - 1 {
            let skip = &enc[n - 2 - j].c;
            let prev = dec.last().map_or(&enc[n - 1].c, |d| &d.b);
            let up = upsample(prev, skip.height, skip.width);
            let cat = Tensor::concat(&[&up, skip])?;
            let a = relu(&self.convs[self.dec_index(j, 0)].forward(&cat));
            let b = relu(&self.convs[self.dec_index(j, 1)].forward(&a));
            dec.push(DecCache { up_from: (prev.channels, prev.height, prev.width), cat, a, b });
        }
        let last = &dec[n - 2].b;
        let (ab_cat, features) = if self.config.use_aggregation_branch {
            let mut parts: Vec<Tensor> = Vec::with_capacity(n);
            parts.push(upsample(&enc[n - 1].c, x.height, x.width));
            for d in &dec[..n - 2] {
                parts.push(upsample(&d.b, x.height, x.width));
            }
            parts.push(last.clone());
            let cat = Tensor::concat(&parts.iter().collect::<Vec<_>>())?;
            let mut features = self.convs[self.ab_index()].forward(&cat);
            features.add_assign(last);
            (Some(cat), features)
        } else {
            (None, last.clone())
        };
        let logits = self.convs[self.convs.len() - 1].forward(&features);
        let output = match self.config.head {
            Head::Sigmoid => sigmoid(&logits),
            Head::Softmax => softmax(&logits),
        };
        Ok(Cache { enc, dec, ab_cat, features, output })
    }

    /// Parameter gradients and input gradient for upstream gradient `g`
    /// with respect to the output probabilities of `cache`.
    pub fn backward(&self, cache: &Cache, g: &Tensor) -> Result<(Gradients, Tensor)> {
        if !g.same_shape(&cache.output) {
            return Err(shape("upstream gradient does not match the cached forward output"));
        }
        let n = self.config.contracting_blocks;
        let mut grads = Gradients::zeros_like(self);
        let g_logits = match self.config.head {
            Head::Sigmoid => sigmoid_backward(&cache.output, g),
            Head::Softmax => softmax_backward(&cache.output, g),
        };
        let head = self.convs.len() - 1;
        let g_features =
            self.convs[head].backward(&cache.features, &g_logits, &mut grads.convs[head], true).expect("input gradient requested");

        let mut g_enc: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let mut g_dec: Vec<Option<Tensor>> = (0..n - 1).map(|_| None).collect();
        let accumulate = |slot: &mut Option<Tensor>, t: Tensor| match slot {
            Some(s) => s.add_assign(&t),
            None => *slot = Some(t),
        };
        if let Some(cat) = &cache.ab_cat {
            let k = self.ab_index();
            let g_cat = self.convs[k].backward(cat, &g_features, &mut grads.convs[k], true).expect("input gradient requested");
            let mut sizes = vec![cache.enc[n - 1].c.channels];
            sizes.extend(cache.dec.iter().map(|d| d.b.channels));
            let parts = g_cat.split(&sizes);
            let shape_of = |t: &Tensor| (t.channels, t.height, t.width);
            accumulate(&mut g_enc[n - 1], upsample_backward(shape_of(&cache.enc[n - 1].c), &parts[0]));
            for j in 0..n - 1 {
                let part = &parts[j + 1];
                let d = &cache.dec[j].b;
                let back =
                    if (d.height, d.width) == (part.height, part.width) { part.clone() } else { upsample_backward(shape_of(d), part) };
                accumulate(&mut g_dec[j], back);
            }
        }
        accumulate(&mut g_dec[n - 2], g_features);

        for j in (0..n - 1).rev() {
            let d = &cache.dec[j];
            let g_b = g_dec[j].take().expect("every expanding output feeds the loss");
            let (ka, kb) = (self.dec_index(j, 0), self.dec_index(j, 1));
            let g_a = self.convs[kb].backward(&d.a, &relu_backward(&d.b, &g_b), &mut grads.convs[kb], true).expect("requested");
            let g_cat = self.convs[ka].backward(&d.cat, &relu_backward(&d.a, &g_a), &mut grads.convs[ka], true).expect("requested");
            let parts = g_cat.split(&[d.up_from.0, d.cat.channels - d.up_from.0]);
            accumulate(&mut g_enc[n - 2 - j], parts[1].clone());
            let g_prev = upsample_backward(d.up_from, &parts[0]);
            if j == 0 {
                accumulate(&mut g_enc[n - 1], g_prev);
            } else {
                accumulate(&mut g_dec[j - 1], g_prev);
            }
        }

        let mut g_input = None;
        for i in (0..n).rev() {
            let e = &cache.enc[i];
            let g_c = g_enc[i].take().expect("every contracting output feeds the decoder");
            let g_b =
                self.convs[3 * i + 2].backward(&e.b, &relu_backward(&e.c, &g_c), &mut grads.convs[3 * i + 2], true).expect("requested");
            let g_a =
                self.convs[3 * i + 1].backward(&e.a, &relu_backward(&e.b, &g_b), &mut grads.convs[3 * i + 1], true).expect("requested");
            let g_in = self.convs[3 * i].backward(&e.input, &relu_backward(&e.a, &g_a), &mut grads.convs[3 * i], true).expect("requested");
            match &e.pool_arg {
                Some(arg) => {
                    let below = &cache.enc[i - 1].c;
                    accumulate(&mut g_enc[i - 1], maxpool2_backward((below.channels, below.height, below.width), arg, &g_in));
                }
                None => g_input = Some(g_in),
            }
        }
        Ok((grads, g_input.expect("block 0 has no pooling")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn input(c: usize, h: usize, w: usize, s: u64) -> Tensor {
        let mut rng = seed::rng(s);
        Tensor::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn param_count_formula_matches_allocation() {
        let m = Model::new(ModelConfig::default(), 0).unwrap();
        assert_eq!(m.param_count(), m.config().param_count());
        let layout: usize = m.tensor_layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert_eq!(layout, m.param_count());
        let no_ab = ModelConfig { use_aggregation_branch: false, ..ModelConfig::default() };
        assert!(no_ab.param_count() < ModelConfig::default().param_count());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::new(ModelConfig::default(), 42).unwrap();
        let b = Model::new(ModelConfig::default(), 42).unwrap();
        let c = Model::new(ModelConfig::default(), 43).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn output_shape_matches_input() {
        for (blocks, ab) in [(2, true), (3, false), (4, true)] {
            let cfg = ModelConfig { contracting_blocks: blocks, base_width: 2, use_aggregation_branch: ab, ..ModelConfig::default() };
            let m = Model::new(cfg, 1).unwrap();
            let y = m.forward(&input(4, 16, 24, 2)).unwrap();
            assert_eq!((y.channels, y.height, y.width), (1, 16, 24));
            assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn softmax_channels_sum_to_one() {
        let cfg = ModelConfig { classes: 3, head: Head::Softmax, base_width: 4, ..ModelConfig::default() };
        let m = Model::new(cfg, 5).unwrap();
        let y = m.forward(&input(4, 8, 8, 1)).unwrap();
        for i in 0..64 {
            let s: f64 = (0..3).map(|c| y.data[c * 64 + i]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let m = Model::new(ModelConfig::default(), 0).unwrap();
        assert!(m.forward(&input(4, 10, 12, 0)).is_err());
        assert!(m.forward(&input(3, 8, 8, 0)).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(ModelConfig { contracting_blocks: 1, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { classes: 3, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { head: Head::Softmax, ..ModelConfig::default() }.validate().is_err());
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let cfg = ModelConfig { contracting_blocks: 2, base_width: 2, ..ModelConfig::default() };
        let m = Model::new(cfg, 3).unwrap();
        let x = input(4, 8, 8, 3);
        let cache = m.forward_cached(&x).unwrap();
        let (g, gin) = m.backward(&cache, &Tensor::zeros(1, 8, 8)).unwrap();
        assert!(g.flatten().iter().chain(&gin.data).all(|&v| v == 0.0));
        assert!(m.backward(&cache, &Tensor::zeros(1, 4, 4)).is_err());
    }

    #[test]
    fn set_params_round_trip() {
        let mut m = Model::new(ModelConfig { base_width: 2, ..ModelConfig::default() }, 0).unwrap();
        let p: Vec<f64> = (0..m.param_count()).map(|i| i as f64 * 1e-3).collect();
        m.set_params(&p).unwrap();
        assert_eq!(m.params(), p);
        assert!(m.set_params(&p[1..]).is_err());
    }
}
