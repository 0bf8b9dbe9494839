//! Convolution, ReLU, max-pooling and dense layers with hand-written
//! forward and backward passes.
//!
//! Convolutions are 3×3, stride 1, zero padding 1, so spatial size is
//! preserved and each 2×2 pool halves it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const KERNEL: usize = 3;
const PAD: isize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T = f32> {
    /// `[out_channels, in_channels, 3, 3]`
    pub weight: Tensor<T>,
    /// `[out_channels]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T = f32> {
    /// `[out_dim, in_dim]`
    pub weight: Tensor<T>,
    /// `[out_dim]`
    pub bias: Tensor<T>,
}

/// Kaiming-uniform bound for a ReLU layer with the given fan-in: `sqrt(6 / fan_in)`.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_channels, in_channels, KERNEL, KERNEL]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn kaiming(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let bound = kaiming_bound(in_channels * KERNEL * KERNEL);
        let mut layer = Self::zeros(in_channels, out_channels);
        for w in layer.weight.data_mut() {
            *w = T::from_f64(rng.gen_range(-bound..bound));
        }
        layer
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn kaiming(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = kaiming_bound(in_dim);
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in layer.weight.data_mut() {
            *w = T::from_f64(rng.gen_range(-bound..bound));
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

fn chw(t: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::InvalidShape(format!("{what}: expected C×H×W, got {s:?}"))),
    }
}

/// Valid output range along one axis for kernel offset `d` (in `-1..=1`).
#[inline]
fn valid_range(d: isize, n: usize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    lo..hi
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    let (cin, h, w) = chw(input, "conv2d input")?;
    if layer.weight.shape()[2..] != [KERNEL, KERNEL] {
        return Err(Error::InvalidShape(format!(
            "conv2d kernel must be 3×3, got {:?}",
            &layer.weight.shape()[2..]
        )));
    }
    if cin != layer.in_channels() {
        return Err(Error::InvalidShape(format!(
            "conv2d: input has {cin} channels, layer expects {}",
            layer.in_channels()
        )));
    }
    if h < KERNEL || w < KERNEL {
        return Err(Error::InvalidShape(format!(
            "conv2d: spatial dims {h}×{w} smaller than kernel"
        )));
    }
    let cout = layer.out_channels();
    let plane = h * w;
    let x = input.data();
    let wt = layer.weight.data();
    let mut out = vec![T::zero(); cout * plane];
    for co in 0..cout {
        let out_plane = &mut out[co * plane..(co + 1) * plane];
        out_plane.fill(layer.bias.data()[co]);
        for ci in 0..cin {
            let in_plane = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..KERNEL {
                let dy = ky as isize - PAD;
                for kx in 0..KERNEL {
                    let dx = kx as isize - PAD;
                    let k = wt[((co * cin + ci) * KERNEL + ky) * KERNEL + kx];
                    let xr = valid_range(dx, w);
                    for y in valid_range(dy, h) {
                        let sy = (y as isize + dy) as usize;
                        let src = &in_plane[sy * w..(sy + 1) * w];
                        let dst = &mut out_plane[y * w..(y + 1) * w];
                        for xo in xr.clone() {
                            let sx = (xo as isize + dx) as usize;
                            dst[xo] = dst[xo] + k * src[sx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[cout, h, w], out)
}

/// Accumulates weight/bias gradients into `grad` and, when requested,
/// writes the input gradient into `dinput` (overwriting it).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    dout: &Tensor<T>,
    grad: &mut ConvLayer<T>,
    dinput: Option<&mut Tensor<T>>,
) -> Result<()> {
    let (cin, h, w) = chw(input, "conv2d_backward input")?;
    let cout = layer.out_channels();
    dout.expect_shape(&[cout, h, w], "conv2d_backward dout")?;
    let plane = h * w;
    let x = input.data();
    let g = dout.data();
    let wt = layer.weight.data();
    {
        let gw = grad.weight.data_mut();
        for co in 0..cout {
            let g_plane = &g[co * plane..(co + 1) * plane];
            for ci in 0..cin {
                let in_plane = &x[ci * plane..(ci + 1) * plane];
                for ky in 0..KERNEL {
                    let dy = ky as isize - PAD;
                    for kx in 0..KERNEL {
                        let dx = kx as isize - PAD;
                        let xr = valid_range(dx, w);
                        let mut acc = T::zero();
                        for y in valid_range(dy, h) {
                            let sy = (y as isize + dy) as usize;
                            let src = &in_plane[sy * w..(sy + 1) * w];
                            let gr = &g_plane[y * w..(y + 1) * w];
                            for xo in xr.clone() {
                                acc = acc + gr[xo] * src[(xo as isize + dx) as usize];
                            }
                        }
                        let idx = ((co * cin + ci) * KERNEL + ky) * KERNEL + kx;
                        gw[idx] = gw[idx] + acc;
                    }
                }
            }
        }
    }
    {
        let gb = grad.bias.data_mut();
        for co in 0..cout {
            let s = g[co * plane..(co + 1) * plane].iter().fold(T::zero(), |a, &v| a + v);
            gb[co] = gb[co] + s;
        }
    }
    if let Some(dinput) = dinput {
        dinput.expect_shape(&[cin, h, w], "conv2d_backward dinput")?;
        let dx_all = dinput.data_mut();
        dx_all.fill(T::zero());
        for co in 0..cout {
            let g_plane = &g[co * plane..(co + 1) * plane];
            for ci in 0..cin {
                let dx_plane = &mut dx_all[ci * plane..(ci + 1) * plane];
                for ky in 0..KERNEL {
                    let dy = ky as isize - PAD;
                    for kx in 0..KERNEL {
                        let dx = kx as isize - PAD;
                        let k = wt[((co * cin + ci) * KERNEL + ky) * KERNEL + kx];
                        let xr = valid_range(dx, w);
                        for y in valid_range(dy, h) {
                            let sy = (y as isize + dy) as usize;
                            let gr = &g_plane[y * w..(y + 1) * w];
                            let dst = &mut dx_plane[sy * w..(sy + 1) * w];
                            for xo in xr.clone() {
                                let sx = (xo as isize + dx) as usize;
                                dst[sx] = dst[sx] + k * gr[xo];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Gates `grad` in place by the sign of the ReLU output `activation`.
pub fn relu_backward<T: Scalar>(activation: &Tensor<T>, grad: &mut Tensor<T>) -> Result<()> {
    if activation.shape() != grad.shape() {
        return Err(Error::InvalidShape(format!(
            "relu_backward: {:?} vs {:?}",
            activation.shape(),
            grad.shape()
        )));
    }
    for (g, &a) in grad.data_mut().iter_mut().zip(activation.data()) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(())
}

/// Argmax position of every 2×2 pooling window, encoded as `dy * 2 + dx`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: [usize; 3],
    offsets: Vec<u8>,
}

impl PoolIndices {
    /// `(dy, dx)` within the window for output element `i` (flat, row-major).
    pub fn window_pos(&self, i: usize) -> (usize, usize) {
        let o = self.offsets[i] as usize;
        (o / 2, o % 2)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (c, h, w) = chw(input, "maxpool input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape(format!(
            "maxpool2x2 needs even spatial dims, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut offsets = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = x[base + 2 * oy * w + 2 * ox];
                let mut best_off = 0u8;
                for (off, (dy, dx)) in [(0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = x[base + (2 * oy + dy) * w + 2 * ox + dx];
                    if v > best {
                        best = v;
                        best_off = off as u8 + 1;
                    }
                }
                out.push(best);
                offsets.push(best_off);
            }
        }
    }
    Ok((
        Tensor::new(&[c, oh, ow], out)?,
        PoolIndices {
            input_shape: [c, h, w],
            offsets,
        },
    ))
}

/// Routes each pooled gradient to the stored argmax position.
pub fn maxpool2x2_backward<T: Scalar>(dout: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    let [c, h, w] = indices.input_shape;
    dout.expect_shape(&[c, h / 2, w / 2], "maxpool_backward dout")?;
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Tensor::zeros(&[c, h, w]);
    let g = dout.data();
    let d = dx.data_mut();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let i = (ch * oh + oy) * ow + ox;
                let (dy, dxo) = indices.window_pos(i);
                d[ch * h * w + (2 * oy + dy) * w + 2 * ox + dxo] = g[i];
            }
        }
    }
    Ok(dx)
}

pub fn dense_forward<T: Scalar>(input: &Tensor<T>, layer: &DenseLayer<T>) -> Result<Tensor<T>> {
    let n = layer.in_dim();
    if input.len() != n {
        return Err(Error::InvalidShape(format!(
            "dense: input length {} but layer expects {n}",
            input.len()
        )));
    }
    let x = input.data();
    let out: Vec<T> = layer
        .weight
        .data()
        .chunks_exact(n)
        .zip(layer.bias.data())
        .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&wv, &xv)| acc + wv * xv))
        .collect();
    Tensor::new(&[layer.out_dim()], out)
}

/// Accumulates into `grad` and returns the input gradient.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &DenseLayer<T>,
    dout: &Tensor<T>,
    grad: &mut DenseLayer<T>,
) -> Result<Tensor<T>> {
    let (m, n) = (layer.out_dim(), layer.in_dim());
    if input.len() != n || dout.len() != m {
        return Err(Error::InvalidShape(format!(
            "dense_backward: input {} / dout {} vs layer {n}→{m}",
            input.len(),
            dout.len()
        )));
    }
    let x = input.data();
    let g = dout.data();
    let mut dx = vec![T::zero(); n];
    for (((&gm, w_row), gw_row), gb) in g
        .iter()
        .zip(layer.weight.data().chunks_exact(n))
        .zip(grad.weight.data_mut().chunks_exact_mut(n))
        .zip(grad.bias.data_mut())
    {
        *gb = *gb + gm;
        if gm == T::zero() {
            continue;
        }
        for ((gw, &xv), (d, &wv)) in gw_row.iter_mut().zip(x).zip(dx.iter_mut().zip(w_row)) {
            *gw = *gw + gm * xv;
            *d = *d + gm * wv;
        }
    }
    Tensor::new(input.shape(), dx)
}
