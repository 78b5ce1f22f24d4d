//! Fully convolutional score network.
//!
//! `d/2` unpadded 3x3 convolutions shrink the image by 2 pixels per layer,
//! `d/2` unpadded 3x3 transposed convolutions (stride 1) grow it back, and a
//! final zero-padded 3x3 convolution with a sigmoid produces one score per
//! input pixel. Hidden layers use ReLU. Convolutions are computed as
//! im2col followed by a matrix product.

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcnConfig {
    /// Number of hidden layers; even and at least 2.
    pub depth: usize,
    pub conv_channels: usize,
    pub deconv_channels: usize,
    pub seed: u64,
}

impl Default for FcnConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            conv_channels: 64,
            deconv_channels: 128,
            seed: 0,
        }
    }
}

impl FcnConfig {
    pub fn with_depth(depth: usize, seed: u64) -> Self {
        Self { depth, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 || self.depth % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "network depth {} must be even and at least 2",
                self.depth
            )));
        }
        if self.conv_channels == 0 || self.deconv_channels == 0 {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Smallest square input the network accepts.
    pub fn min_input(&self) -> usize {
        self.depth + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Unpadded convolution; weights `out x (in * 9)`.
    Conv,
    /// Unpadded stride-1 transposed convolution; weights `in x (out * 9)`.
    Deconv,
    /// Zero-padded convolution to one channel; weights `1 x (in * 9)`.
    Output,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(kind: LayerKind, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind,
            in_channels,
            out_channels,
            weight: vec![T::zero(); in_channels * out_channels * 9],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * 9
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcnParams<T> {
    pub config: FcnConfig,
    pub layers: Vec<Layer<T>>,
}

/// Channel-major activation volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![T::zero(); channels * height * width] }
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Gathers 3x3 patches of `x` into rows `c*9 + ky*3 + kx`, one column per
/// output pixel of an unpadded (`pad = 0`) or same-size (`pad = 1`) filter.
fn im2col<T: Scalar>(x: &Tensor<T>, pad: usize) -> (Vec<T>, usize, usize) {
    let oh = x.height + 2 * pad - 2;
    let ow = x.width + 2 * pad - 2;
    let n = oh * ow;
    let mut cols = vec![T::zero(); x.channels * 9 * n];
    for c in 0..x.channels {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 3 + ky) * 3 + kx) * n..][..n];
                for oy in 0..oh {
                    let sy = oy + ky;
                    if sy < pad || sy - pad >= x.height {
                        continue;
                    }
                    let sy = sy - pad;
                    for ox in 0..ow {
                        let sx = ox + kx;
                        if sx < pad || sx - pad >= x.width {
                            continue;
                        }
                        row[oy * ow + ox] = src[sy * x.width + sx - pad];
                    }
                }
            }
        }
    }
    (cols, oh, ow)
}

/// Adjoint of [`im2col`]: accumulates columns back into an image of
/// `channels x height x width`.
fn col2im<T: Scalar>(cols: &[T], channels: usize, height: usize, width: usize, pad: usize) -> Tensor<T> {
    let oh = height + 2 * pad - 2;
    let ow = width + 2 * pad - 2;
    let n = oh * ow;
    let mut out = Tensor::zeros(channels, height, width);
    for c in 0..channels {
        let plane = height * width;
        let dst = &mut out.data[c * plane..(c + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 3 + ky) * 3 + kx) * n..][..n];
                for oy in 0..oh {
                    let sy = oy + ky;
                    if sy < pad || sy - pad >= height {
                        continue;
                    }
                    let sy = sy - pad;
                    for ox in 0..ow {
                        let sx = ox + kx;
                        if sx < pad || sx - pad >= width {
                            continue;
                        }
                        dst[sy * width + sx - pad] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
    out
}

fn row_major(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

fn transposed(cols_of_stored: usize) -> (isize, isize) {
    (1, cols_of_stored as isize)
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Scalar> Layer<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (o, c) = (self.out_channels, self.in_channels);
        let mut y = match self.kind {
            LayerKind::Conv | LayerKind::Output => {
                let pad = usize::from(self.kind == LayerKind::Output);
                let (cols, oh, ow) = im2col(x, pad);
                let n = oh * ow;
                let mut y = Tensor::zeros(o, oh, ow);
                T::gemm(o, c * 9, n, T::one(), &self.weight, row_major(c * 9), &cols, row_major(n), T::zero(), &mut y.data);
                y
            }
            LayerKind::Deconv => {
                let n = x.plane();
                let mut cols = vec![T::zero(); o * 9 * n];
                T::gemm(o * 9, c, n, T::one(), &self.weight, transposed(o * 9), &x.data, row_major(n), T::zero(), &mut cols);
                col2im(&cols, o, x.height + 2, x.width + 2, 0)
            }
        };
        let plane = y.plane();
        for (ch, b) in self.bias.iter().enumerate() {
            for v in &mut y.data[ch * plane..(ch + 1) * plane] {
                *v += *b;
                *v = if self.kind == LayerKind::Output { sigmoid(*v) } else { v.max(T::zero()) };
            }
        }
        y
    }

    /// Given the layer input, its activated output and `dL/d(output)`, adds
    /// the parameter gradients into `grad` and returns `dL/d(input)` when
    /// `need_input` is set.
    fn backward(&self, x: &Tensor<T>, y: &Tensor<T>, dy: &Tensor<T>, grad: &mut Layer<T>, need_input: bool) -> Option<Tensor<T>> {
        let (o, c) = (self.out_channels, self.in_channels);
        // through the activation
        let mut dz = dy.clone();
        for (g, &a) in dz.data.iter_mut().zip(&y.data) {
            *g = if self.kind == LayerKind::Output {
                *g * a * (T::one() - a)
            } else if a > T::zero() {
                *g
            } else {
                T::zero()
            };
        }
        let plane = dz.plane();
        for ch in 0..o {
            let s: T = dz.data[ch * plane..(ch + 1) * plane].iter().copied().sum();
            grad.bias[ch] += s;
        }
        match self.kind {
            LayerKind::Conv | LayerKind::Output => {
                let pad = usize::from(self.kind == LayerKind::Output);
                let (cols, _, _) = im2col(x, pad);
                let (k, n) = (c * 9, plane);
                T::gemm(o, n, k, T::one(), &dz.data, row_major(n), &cols, transposed(n), T::one(), &mut grad.weight);
                need_input.then(|| {
                    let mut dcols = vec![T::zero(); k * n];
                    T::gemm(k, o, n, T::one(), &self.weight, transposed(k), &dz.data, row_major(n), T::zero(), &mut dcols);
                    col2im(&dcols, c, x.height, x.width, pad)
                })
            }
            LayerKind::Deconv => {
                let (dcols, _, _) = im2col(&dz, 0);
                let n = x.plane();
                T::gemm(c, n, o * 9, T::one(), &x.data, row_major(n), &dcols, transposed(n), T::one(), &mut grad.weight);
                need_input.then(|| {
                    let mut dx = Tensor::zeros(c, x.height, x.width);
                    T::gemm(c, o * 9, n, T::one(), &self.weight, row_major(o * 9), &dcols, row_major(n), T::zero(), &mut dx.data);
                    dx
                })
            }
        }
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// `activations[0]` is the input; `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<Tensor<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> Image<T> {
        let last = self.activations.last().expect("non-empty cache");
        Image::new(last.width, last.height, last.data.clone()).expect("finite network output")
    }
}

impl<T: Scalar> FcnParams<T> {
    /// He-uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(config: FcnConfig) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for layer in &mut params.layers {
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            for w in &mut layer.weight {
                *w = lit(rng.random_range(-bound..bound));
            }
        }
        Ok(params)
    }

    /// Same architecture with every parameter zero.
    pub fn zeros(config: FcnConfig) -> Result<Self> {
        config.validate()?;
        let half = config.depth / 2;
        let mut layers = Vec::with_capacity(config.depth + 1);
        for i in 0..half {
            let cin = if i == 0 { 1 } else { config.conv_channels };
            layers.push(Layer::zeros(LayerKind::Conv, cin, config.conv_channels));
        }
        for i in 0..half {
            let cin = if i == 0 { config.conv_channels } else { config.deconv_channels };
            layers.push(Layer::zeros(LayerKind::Deconv, cin, config.deconv_channels));
        }
        layers.push(Layer::zeros(LayerKind::Output, config.deconv_channels, 1));
        Ok(Self { config, layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter tensors in fixed order: weight then bias of each layer.
    pub fn tensors(&self) -> impl Iterator<Item = &Vec<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn cast<U: Scalar>(&self) -> FcnParams<U> {
        FcnParams {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    kind: l.kind,
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    weight: l.weight.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                    bias: l.bias.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }

    pub fn forward_with_cache(&self, img: &Image<T>) -> Result<ForwardCache<T>> {
        let (w, h) = img.dims();
        let min = self.config.min_input();
        if w < min || h < min {
            return Err(Error::InvalidArgument(format!(
                "a depth-{} network needs at least {min}x{min} pixels, got {w}x{h}",
                self.config.depth
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(Tensor { channels: 1, height: h, width: w, data: img.data().to_vec() });
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap());
            activations.push(next);
        }
        let out = activations.last().unwrap();
        if out.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite network output".into()));
        }
        Ok(ForwardCache { activations })
    }

    /// Score map with the input's dimensions and values in `(0, 1)`.
    pub fn forward(&self, img: &Image<T>) -> Result<Image<T>> {
        Ok(self.forward_with_cache(img)?.output())
    }

    /// Parameter gradients of `sum(upstream * S)` where `S` is the cached
    /// forward output.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &Image<T>) -> Result<FcnParams<T>> {
        let out = cache.activations.last().expect("non-empty cache");
        if upstream.dims() != (out.width, out.height) {
            return Err(Error::Dimension { expected: (out.width, out.height), found: upstream.dims() });
        }
        let mut grads = self.zeros_like();
        let mut dy = Tensor { channels: 1, height: out.height, width: out.width, data: upstream.data().to_vec() };
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.activations[l];
            let y = &cache.activations[l + 1];
            match layer.backward(x, y, &dy, &mut grads.layers[l], l > 0) {
                Some(dx) => dy = dx,
                None => break,
            }
        }
        if grads.tensors().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter gradient".into()));
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn narrow(depth: usize, seed: u64) -> FcnConfig {
        FcnConfig { depth, conv_channels: 3, deconv_channels: 4, seed }
    }

    fn random_image(w: usize, h: usize, seed: u64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    #[test]
    fn init_shapes_bounds_and_determinism() {
        let cfg = FcnConfig::with_depth(2, 3);
        let a = FcnParams::<f32>::init(cfg).unwrap();
        let b = FcnParams::<f32>::init(cfg).unwrap();
        assert_eq!(a, b);
        let kinds: Vec<_> = a.layers.iter().map(|l| l.kind).collect();
        assert_eq!(kinds, vec![LayerKind::Conv, LayerKind::Deconv, LayerKind::Output]);
        assert_eq!(a.layers[0].weight.len(), 64 * 9);
        assert_eq!(a.layers[1].weight.len(), 64 * 128 * 9);
        assert_eq!(a.layers[2].weight.len(), 128 * 9);
        for l in &a.layers {
            let bound = (6.0 / l.fan_in() as f64).sqrt() as f32;
            assert!(l.weight.iter().all(|w| w.is_finite() && w.abs() <= bound));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
        assert!(FcnParams::<f32>::init(FcnConfig::with_depth(3, 0)).is_err());
        assert!(FcnParams::<f32>::init(FcnConfig::with_depth(0, 0)).is_err());
    }

    #[test]
    fn telescoping_dimensions() {
        let p = FcnParams::<f64>::init(narrow(4, 1)).unwrap();
        let cache = p.forward_with_cache(&random_image(32, 32, 1)).unwrap();
        let sizes: Vec<_> = cache.activations.iter().map(|t| (t.width, t.height)).collect();
        assert_eq!(sizes, vec![(32, 32), (30, 30), (28, 28), (30, 30), (32, 32), (32, 32)]);
        let out = cache.output();
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(p.forward(&random_image(4, 9, 0)).is_err());
    }

    #[test]
    fn zero_network_outputs_half() {
        let p = FcnParams::<f32>::zeros(FcnConfig::default()).unwrap();
        let out = p.forward(&random_image(16, 12, 2).cast()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = FcnParams::<f64>::init(narrow(2, 2)).unwrap();
        let img = random_image(12, 12, 3);
        let cache = p.forward_with_cache(&img).unwrap();
        let g = p.backward(&cache, &Image::zeros(12, 12)).unwrap();
        assert!(g.tensors().flatten().all(|&v| v == 0.0));
        assert!(p.backward(&cache, &Image::zeros(11, 12)).is_err());
    }

    #[test]
    fn sigmoid_derivative_at_half() {
        let p = FcnParams::<f64>::zeros(narrow(2, 0)).unwrap();
        let img = random_image(10, 10, 4);
        let cache = p.forward_with_cache(&img).unwrap();
        let up = random_image(10, 10, 5);
        let g = p.backward(&cache, &up).unwrap();
        let total: f64 = up.data().iter().sum();
        assert!((g.layers[2].bias[0] - 0.25 * total).abs() < 1e-12);
    }

    #[test]
    fn im2col_adjoint_identity() {
        // <im2col(x), c> == <x, col2im(c)>
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for pad in [0, 1] {
            let x = Tensor { channels: 2, height: 5, width: 6, data: (0..60).map(|_| rng.random::<f64>()).collect() };
            let (cols, _, _) = im2col(&x, pad);
            let c: Vec<f64> = (0..cols.len()).map(|_| rng.random::<f64>()).collect();
            let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
            let back = col2im(&c, 2, 5, 6, pad);
            let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn deconv_matches_direct_scatter() {
        let mut p = FcnParams::<f64>::init(narrow(2, 6)).unwrap();
        let layer = &mut p.layers[1];
        layer.bias.iter_mut().enumerate().for_each(|(i, b)| *b = i as f64 * 0.1 - 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor { channels: 3, height: 4, width: 5, data: (0..60).map(|_| rng.random::<f64>() - 0.5).collect() };
        let y = layer.forward(&x);
        for o in 0..4 {
            for yy in 0..6 {
                for xx in 0..7 {
                    let mut acc = layer.bias[o];
                    for c in 0..3 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (yy as isize - ky as isize, xx as isize - kx as isize);
                                if sy < 0 || sx < 0 || sy >= 4 || sx >= 5 {
                                    continue;
                                }
                                acc += layer.weight[c * 36 + (o * 3 + ky) * 3 + kx] * x.data[c * 20 + sy as usize * 5 + sx as usize];
                            }
                        }
                    }
                    assert!((y.data[o * 42 + yy * 7 + xx] - acc.max(0.0)).abs() < 1e-12);
                }
            }
        }
    }

    /// Activation sign pattern, used to skip finite differences that cross a
    /// ReLU kink.
    fn pattern(cache: &ForwardCache<f64>) -> Vec<bool> {
        cache.activations[1..cache.activations.len() - 1]
            .iter()
            .flat_map(|t| t.data.iter().map(|&v| v > 0.0))
            .collect()
    }

    #[test]
    fn every_parameter_matches_finite_differences() {
        let img = random_image(12, 12, 7);
        let up = random_image(12, 12, 8).map(|v| v - 0.5);
        let mut p = FcnParams::<f64>::init(narrow(2, 11)).unwrap();
        for l in &mut p.layers {
            l.bias.iter_mut().enumerate().for_each(|(i, b)| *b = 0.05 * (i as f64 - 1.0));
        }
        let cache = p.forward_with_cache(&img).unwrap();
        let base = pattern(&cache);
        let g = p.backward(&cache, &up).unwrap();
        let objective = |q: &FcnParams<f64>| -> Option<f64> {
            let c = q.forward_with_cache(&img).unwrap();
            (pattern(&c) == base).then(|| c.output().data().iter().zip(up.data()).map(|(a, b)| a * b).sum())
        };
        let h = 1e-4;
        let mut checked = 0;
        for l in 0..p.layers.len() {
            for which in 0..2 {
                let len = if which == 0 { p.layers[l].weight.len() } else { p.layers[l].bias.len() };
                for i in 0..len {
                    let mut plus = p.clone();
                    let mut minus = p.clone();
                    let (vp, vm) = if which == 0 {
                        (&mut plus.layers[l].weight[i], &mut minus.layers[l].weight[i])
                    } else {
                        (&mut plus.layers[l].bias[i], &mut minus.layers[l].bias[i])
                    };
                    *vp += h;
                    *vm -= h;
                    let (Some(fp), Some(fm)) = (objective(&plus), objective(&minus)) else { continue };
                    let numeric = (fp - fm) / (2.0 * h);
                    let analytic = if which == 0 { g.layers[l].weight[i] } else { g.layers[l].bias[i] };
                    let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                    assert!(rel < 1e-3, "layer {l} {which} {i}: {analytic} vs {numeric}");
                    checked += 1;
                }
            }
        }
        assert!(checked as f64 > 0.9 * p.num_parameters() as f64, "{checked}");
    }
}
