//! Network layers and their forward/backward rules.
//!
//! Feature maps are `[channels, height, width]`; dense layers flatten their
//! input. Convolutions use "same" zero padding with stride 1, pooling windows
//! are non-overlapping. A "ConvP" composite used throughout the pipeline is a
//! `Conv2D` directly followed by a `MaxPool2D`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2D {
        /// `[out_channels, in_channels, kernel, kernel]`
        weight: Tensor,
        /// `[out_channels]`
        bias: Tensor,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    MaxPool2D {
        window: usize,
        stride: usize,
    },
    Dense {
        /// `[outputs, inputs]`, row-major
        weight: Tensor,
        /// `[outputs]`
        bias: Tensor,
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Sigmoid,
    Softmax,
}

/// Parameter gradients for one layer; `None` for parameter-free layers.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

impl LayerGrads {
    pub fn empty() -> Self {
        LayerGrads {
            weight: None,
            bias: None,
        }
    }

    pub fn add_scaled(&mut self, other: &LayerGrads, scale: f64) {
        if let (Some(a), Some(b)) = (self.weight.as_mut(), other.weight.as_ref()) {
            a.add_scaled(b, scale);
        }
        if let (Some(a), Some(b)) = (self.bias.as_mut(), other.bias.as_ref()) {
            a.add_scaled(b, scale);
        }
    }
}

fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    t.fill_with(|| rng.gen_range(-limit..limit));
    t
}

impl Layer {
    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Layer {
        let fan = kernel * kernel;
        Layer::Conv2D {
            weight: glorot_uniform(
                &[out_channels, in_channels, kernel, kernel],
                in_channels * fan,
                out_channels * fan,
                rng,
            ),
            bias: Tensor::zeros(&[out_channels]),
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn max_pool(window: usize, stride: usize) -> Layer {
        Layer::MaxPool2D { window, stride }
    }

    pub fn dense(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Layer {
        Layer::Dense {
            weight: glorot_uniform(&[outputs, inputs], inputs, outputs, rng),
            bias: Tensor::zeros(&[outputs]),
            inputs,
            outputs,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2D { .. } => "Conv2D",
            Layer::MaxPool2D { .. } => "MaxPool2D",
            Layer::Dense { .. } => "Dense",
            Layer::Relu => "ReLU",
            Layer::Sigmoid => "Sigmoid",
            Layer::Softmax => "Softmax",
        }
    }

    pub fn parameters(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv2D { weight, bias, .. } | Layer::Dense { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    pub fn parameters_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv2D { weight, bias, .. } | Layer::Dense { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    pub fn zero_grads(&self) -> LayerGrads {
        match self.parameters() {
            Some((w, b)) => LayerGrads {
                weight: Some(Tensor::zeros(w.shape())),
                bias: Some(Tensor::zeros(b.shape())),
            },
            None => LayerGrads::empty(),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2D {
                weight,
                bias,
                in_channels,
                out_channels,
                kernel,
            } => conv_forward(input, weight, bias, *in_channels, *out_channels, *kernel),
            Layer::MaxPool2D { window, stride } => pool_forward(input, *window, *stride),
            Layer::Dense {
                weight,
                bias,
                inputs,
                outputs,
            } => dense_forward(input, weight, bias, *inputs, *outputs),
            Layer::Relu => Ok(map_elems(input, |v| v.max(0.0))),
            Layer::Sigmoid => Ok(map_elems(input, sigmoid)),
            Layer::Softmax => softmax_forward(input),
        }
    }

    /// Gradients given the layer's cached `input`, its `output` from the same
    /// forward pass, and the upstream gradient `gout`.
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        gout: &Tensor,
    ) -> Result<(LayerGrads, Tensor)> {
        if gout.shape() != output.shape() {
            return Err(Error::shape(
                format!("{} backward", self.kind_name()),
                output.shape(),
                gout.shape(),
            ));
        }
        match self {
            Layer::Conv2D {
                weight,
                in_channels,
                out_channels,
                kernel,
                ..
            } => conv_backward(input, gout, weight, *in_channels, *out_channels, *kernel),
            Layer::MaxPool2D { window, stride } => {
                Ok((LayerGrads::empty(), pool_backward(input, gout, *window, *stride)))
            }
            Layer::Dense {
                weight,
                inputs,
                outputs,
                ..
            } => dense_backward(input, gout, weight, *inputs, *outputs),
            Layer::Relu => {
                let mut gin = gout.clone();
                for (g, &x) in gin.data_mut().iter_mut().zip(input.data()) {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                }
                Ok((LayerGrads::empty(), gin))
            }
            Layer::Sigmoid => {
                let mut gin = gout.clone();
                for (g, &y) in gin.data_mut().iter_mut().zip(output.data()) {
                    *g *= y * (1.0 - y);
                }
                Ok((LayerGrads::empty(), gin))
            }
            Layer::Softmax => {
                // dL/dz_i = y_i * (g_i - sum_j g_j y_j)
                let dot: f64 = gout
                    .data()
                    .iter()
                    .zip(output.data())
                    .map(|(g, y)| g * y)
                    .sum();
                let mut gin = gout.clone();
                for (g, &y) in gin.data_mut().iter_mut().zip(output.data()) {
                    *g = y * (*g - dot);
                }
                Ok((LayerGrads::empty(), gin))
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn map_elems(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v = f(*v);
    }
    out
}

fn expect_chw(input: &Tensor, context: &str, channels: usize) -> Result<(usize, usize, usize)> {
    match *input.shape() {
        [c, h, w] if c == channels || channels == 0 => Ok((c, h, w)),
        _ => Err(Error::shape(context, &[channels, 0, 0], input.shape())),
    }
}

fn conv_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    ic: usize,
    oc: usize,
    k: usize,
) -> Result<Tensor> {
    let (_, h, w) = expect_chw(input, "Conv2D forward", ic)?;
    let pad = k / 2;
    let mut out = Tensor::zeros(&[oc, h, w]);
    let xin = input.data();
    let wt = weight.data();
    for o in 0..oc {
        let b = bias.data()[o];
        let out_plane = &mut out.data_mut()[o * h * w..(o + 1) * h * w];
        out_plane.iter_mut().for_each(|v| *v = b);
        for i in 0..ic {
            let in_plane = &xin[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                for kx in 0..k {
                    let dx = kx as isize - pad as isize;
                    let wv = wt[((o * ic + i) * k + ky) * k + kx];
                    let y0 = (-dy).max(0) as usize;
                    let y1 = ((h as isize - dy).min(h as isize)) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = ((w as isize - dx).min(w as isize)) as usize;
                    for y in y0..y1 {
                        let src_base = ((y as isize + dy) * w as isize) + dx;
                        let src = &in_plane[(src_base + x0 as isize) as usize
                            ..(src_base + x1 as isize) as usize];
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn conv_backward(
    input: &Tensor,
    gout: &Tensor,
    weight: &Tensor,
    ic: usize,
    oc: usize,
    k: usize,
) -> Result<(LayerGrads, Tensor)> {
    let (_, h, w) = expect_chw(input, "Conv2D backward", ic)?;
    let pad = k / 2;
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[oc]);
    let mut din = Tensor::zeros(input.shape());
    let xin = input.data();
    let wt = weight.data();
    let g = gout.data();
    for o in 0..oc {
        let g_plane = &g[o * h * w..(o + 1) * h * w];
        db.data_mut()[o] = g_plane.iter().sum();
        for i in 0..ic {
            let in_plane = &xin[i * h * w..(i + 1) * h * w];
            let din_plane = &mut din.data_mut()[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                for kx in 0..k {
                    let dx = kx as isize - pad as isize;
                    let widx = ((o * ic + i) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let y0 = (-dy).max(0) as usize;
                    let y1 = ((h as isize - dy).min(h as isize)) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = ((w as isize - dx).min(w as isize)) as usize;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src_base = (y as isize + dy) * w as isize + dx;
                        let lo = (src_base + x0 as isize) as usize;
                        let hi = (src_base + x1 as isize) as usize;
                        let src = &in_plane[lo..hi];
                        let grow = &g_plane[y * w + x0..y * w + x1];
                        for (gv, s) in grow.iter().zip(src) {
                            acc += gv * s;
                        }
                        let drow = &mut din_plane[lo..hi];
                        for (d, gv) in drow.iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                    dw.data_mut()[widx] += acc;
                }
            }
        }
    }
    Ok((
        LayerGrads {
            weight: Some(dw),
            bias: Some(db),
        },
        din,
    ))
}

fn pool_forward(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = expect_chw(input, "MaxPool2D forward", 0)?;
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let xin = input.data();
    for ch in 0..c {
        let plane = &xin[ch * h * w..(ch + 1) * h * w];
        let out_plane = &mut out.data_mut()[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for py in 0..window {
                    for px in 0..window {
                        let v = plane[(oy * stride + py) * w + ox * stride + px];
                        if v > m {
                            m = v;
                        }
                    }
                }
                out_plane[oy * ow + ox] = m;
            }
        }
    }
    Ok(out)
}

fn pool_backward(input: &Tensor, gout: &Tensor, window: usize, stride: usize) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut din = Tensor::zeros(input.shape());
    let xin = input.data();
    let g = gout.data();
    for ch in 0..c {
        let plane = &xin[ch * h * w..(ch + 1) * h * w];
        let din_plane = &mut din.data_mut()[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                // gradient routes to the first max in scan order
                let mut m = f64::NEG_INFINITY;
                let mut mi = 0;
                for py in 0..window {
                    for px in 0..window {
                        let idx = (oy * stride + py) * w + ox * stride + px;
                        if plane[idx] > m {
                            m = plane[idx];
                            mi = idx;
                        }
                    }
                }
                din_plane[mi] += g[(ch * oh + oy) * ow + ox];
            }
        }
    }
    din
}

fn dense_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    inputs: usize,
    outputs: usize,
) -> Result<Tensor> {
    if input.len() != inputs {
        return Err(Error::shape("Dense forward", &[inputs], input.shape()));
    }
    let mut out = Tensor::zeros(&[outputs]);
    let x = input.data();
    let wt = weight.data();
    for o in 0..outputs {
        let row = &wt[o * inputs..(o + 1) * inputs];
        let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        out.data_mut()[o] = dot + bias.data()[o];
    }
    Ok(out)
}

fn dense_backward(
    input: &Tensor,
    gout: &Tensor,
    weight: &Tensor,
    inputs: usize,
    outputs: usize,
) -> Result<(LayerGrads, Tensor)> {
    let x = input.data();
    let g = gout.data();
    let wt = weight.data();
    let mut dw = Tensor::zeros(weight.shape());
    let mut din = Tensor::zeros(input.shape());
    for o in 0..outputs {
        let gv = g[o];
        let dw_row = &mut dw.data_mut()[o * inputs..(o + 1) * inputs];
        for (d, &xv) in dw_row.iter_mut().zip(x) {
            *d = gv * xv;
        }
        let w_row = &wt[o * inputs..(o + 1) * inputs];
        for (d, &wv) in din.data_mut().iter_mut().zip(w_row) {
            *d += gv * wv;
        }
    }
    Ok((
        LayerGrads {
            weight: Some(dw),
            bias: Some(gout.clone()),
        },
        din,
    ))
}

fn softmax_forward(input: &Tensor) -> Result<Tensor> {
    let max = input.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = input.clone();
    let mut sum = 0.0;
    for v in out.data_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in out.data_mut() {
        *v /= sum;
    }
    Ok(out)
}
