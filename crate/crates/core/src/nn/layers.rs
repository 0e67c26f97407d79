//! Layer implementations with explicit forward/backward passes.
//!
//! Feature maps are laid out `[batch, channels, range, velocity, azimuth]`
//! with azimuth last, so the innermost convolution loops run over a
//! contiguous axis. Non-Doppler inputs carry a velocity dimension of 1.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

/// A parameter tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
            grad: vec![0.0; len],
            adam_m: vec![0.0; len],
            adam_v: vec![0.0; len],
        }
    }

    pub fn xavier(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(shape);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in p.data.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn clear_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Convolution over the (velocity, azimuth) axes; the range axis is never
/// mixed (kernel extent 1 there). Stride 1, valid padding.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel extent along velocity.
    pub k_vel: usize,
    /// Kernel extent along azimuth.
    pub k_az: usize,
    pub weight: Param,
    pub bias: Param,
    pub frozen: bool,
    cached_input: Option<Tensor>,
}

impl ConvLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        k_vel: usize,
        k_az: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * k_vel * k_az;
        let fan_out = out_channels * k_vel * k_az;
        Self {
            in_channels,
            out_channels,
            k_vel,
            k_az,
            weight: Param::xavier(
                vec![out_channels, in_channels, k_vel, k_az],
                fan_in,
                fan_out,
                rng,
            ),
            bias: Param::zeros(vec![out_channels]),
            frozen: false,
            cached_input: None,
        }
    }

    pub fn output_spatial(&self, d: [usize; 3]) -> Result<[usize; 3]> {
        if d[1] < self.k_vel || d[2] < self.k_az {
            return Err(Error::InvalidConfig(format!(
                "input spatial dims {d:?} too small for {}x{} kernel",
                self.k_vel, self.k_az
            )));
        }
        Ok([d[0], d[1] - self.k_vel + 1, d[2] - self.k_az + 1])
    }

    /// Lowers the input to a [K × b·o0·o1·o2] patch matrix (K = ic·k_vel·k_az)
    /// so the convolution becomes one matrix product.
    fn im2col(&self, input: &Tensor, dims: [usize; 5], out_dims: [usize; 3]) -> DMatrix<f64> {
        let [b, ic, d0, d1, d2] = dims;
        let [o0, o1, o2] = out_dims;
        let k = ic * self.k_vel * self.k_az;
        let cols = b * o0 * o1 * o2;
        let inp = &input.data;
        let mut col = DMatrix::<f64>::zeros(k, cols);
        let mut c = 0usize;
        for bi in 0..b {
            for x in 0..o0 {
                for oy in 0..o1 {
                    for oz in 0..o2 {
                        let mut slice = col.column_mut(c);
                        let base = slice.as_mut_slice();
                        let mut r = 0usize;
                        for cin in 0..ic {
                            let in_base = (((bi * ic + cin) * d0) + x) * (d1 * d2);
                            for ky in 0..self.k_vel {
                                let irow = in_base + (oy + ky) * d2 + oz;
                                base[r..r + self.k_az]
                                    .copy_from_slice(&inp[irow..irow + self.k_az]);
                                r += self.k_az;
                            }
                        }
                        c += 1;
                    }
                }
            }
        }
        col
    }

    /// Weight tensor viewed as an [oc × K] matrix matching the im2col rows.
    fn weight_matrix(&self) -> DMatrix<f64> {
        let k = self.in_channels * self.k_vel * self.k_az;
        DMatrix::from_fn(self.out_channels, k, |co, r| self.weight.data[co * k + r])
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let [b, ic, d0, d1, d2] = shape5(input)?;
        if ic != self.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "conv expects {} input channels, got {ic}",
                self.in_channels
            )));
        }
        let [o0, o1, o2] = self.output_spatial([d0, d1, d2])?;
        let oc = self.out_channels;
        let cells = o0 * o1 * o2;
        let col = self.im2col(input, [b, ic, d0, d1, d2], [o0, o1, o2]);
        let out_mat = self.weight_matrix() * &col;
        let mut out = Tensor::zeros(vec![b, oc, o0, o1, o2]);
        for bi in 0..b {
            for co in 0..oc {
                let base = (bi * oc + co) * cells;
                let bias = self.bias.data[co];
                for cell in 0..cells {
                    out.data[base + cell] = out_mat[(co, bi * cells + cell)] + bias;
                }
            }
        }
        if mode == Mode::Train {
            self.cached_input = Some(input.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::NumericalDivergence("conv backward without forward".into()))?;
        let [b, ic, d0, d1, d2] = shape5(input)?;
        let [_, oc, o0, o1, o2] = shape5(grad_out)?;
        let cells = o0 * o1 * o2;
        let k = ic * self.k_vel * self.k_az;

        // Upstream gradient as the [oc × b·cells] counterpart of im2col.
        let mut gout_mat = DMatrix::<f64>::zeros(oc, b * cells);
        for bi in 0..b {
            for co in 0..oc {
                let base = (bi * oc + co) * cells;
                for cell in 0..cells {
                    gout_mat[(co, bi * cells + cell)] = grad_out.data[base + cell];
                }
            }
        }

        let col = self.im2col(input, [b, ic, d0, d1, d2], [o0, o1, o2]);
        if !self.frozen {
            let dw = &gout_mat * col.transpose();
            for co in 0..oc {
                for r in 0..k {
                    self.weight.grad[co * k + r] += dw[(co, r)];
                }
                let mut bsum = 0.0;
                for c in 0..b * cells {
                    bsum += gout_mat[(co, c)];
                }
                self.bias.grad[co] += bsum;
            }
        }

        // dX: scatter Wᵀ·dOut back through the im2col gather (col2im).
        let dcol = self.weight_matrix().transpose() * gout_mat;
        let mut grad_in = Tensor::zeros(input.shape.clone());
        let gin = &mut grad_in.data;
        let mut c = 0usize;
        for bi in 0..b {
            for x in 0..o0 {
                for oy in 0..o1 {
                    for oz in 0..o2 {
                        let column = dcol.column(c);
                        let vals = column.as_slice();
                        let mut r = 0usize;
                        for cin in 0..ic {
                            let in_base = (((bi * ic + cin) * d0) + x) * (d1 * d2);
                            for ky in 0..self.k_vel {
                                let irow = in_base + (oy + ky) * d2 + oz;
                                for kz in 0..self.k_az {
                                    gin[irow + kz] += vals[r + kz];
                                }
                                r += self.k_az;
                            }
                        }
                        c += 1;
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

/// Per-channel batch normalization with affine terms and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub frozen: bool,
    cached_xhat: Option<Tensor>,
    cached_inv_std: Vec<f64>,
}

impl BatchNormLayer {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Param::zeros(vec![channels]);
        gamma.data.iter_mut().for_each(|g| *g = 1.0);
        Self {
            channels,
            gamma,
            beta: Param::zeros(vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            frozen: false,
            cached_xhat: None,
            cached_inv_std: Vec::new(),
        }
    }

    fn per_channel_len(&self, t: &Tensor) -> Result<(usize, usize)> {
        let [b, c, d0, d1, d2] = shape5(t)?;
        if c != self.channels {
            return Err(Error::DimensionMismatch(format!(
                "batch-norm expects {} channels, got {c}",
                self.channels
            )));
        }
        Ok((b, d0 * d1 * d2))
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, spatial) = self.per_channel_len(input)?;
        let n = (b * spatial) as f64;
        let mut out = Tensor::zeros(input.shape.clone());
        let mut xhat = Tensor::zeros(input.shape.clone());
        let mut inv_stds = vec![0.0; self.channels];
        for c in 0..self.channels {
            let (mean, var) = match mode {
                Mode::Train if !self.frozen => {
                    let mut sum = 0.0;
                    let mut sq = 0.0;
                    for bi in 0..b {
                        let base = (bi * self.channels + c) * spatial;
                        for &v in &input.data[base..base + spatial] {
                            sum += v;
                            sq += v * v;
                        }
                    }
                    let mean = sum / n;
                    let var = (sq / n - mean * mean).max(0.0);
                    self.running_mean[c] =
                        (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
                    self.running_var[c] =
                        (1.0 - self.momentum) * self.running_var[c] + self.momentum * var;
                    (mean, var)
                }
                _ => (self.running_mean[c], self.running_var[c]),
            };
            let inv_std = 1.0 / (var + self.eps).sqrt();
            inv_stds[c] = inv_std;
            let g = self.gamma.data[c];
            let be = self.beta.data[c];
            for bi in 0..b {
                let base = (bi * self.channels + c) * spatial;
                for i in base..base + spatial {
                    let xh = (input.data[i] - mean) * inv_std;
                    xhat.data[i] = xh;
                    out.data[i] = g * xh + be;
                }
            }
        }
        if mode == Mode::Train {
            self.cached_xhat = Some(xhat);
            self.cached_inv_std = inv_stds;
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let xhat = self
            .cached_xhat
            .as_ref()
            .ok_or_else(|| Error::NumericalDivergence("batch-norm backward without forward".into()))?;
        let (b, spatial) = self.per_channel_len(grad_out)?;
        let n = (b * spatial) as f64;
        let mut grad_in = Tensor::zeros(grad_out.shape.clone());
        for c in 0..self.channels {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for bi in 0..b {
                let base = (bi * self.channels + c) * spatial;
                for i in base..base + spatial {
                    sum_g += grad_out.data[i];
                    sum_gx += grad_out.data[i] * xhat.data[i];
                }
            }
            if !self.frozen {
                self.beta.grad[c] += sum_g;
                self.gamma.grad[c] += sum_gx;
            }
            let scale = self.gamma.data[c] * self.cached_inv_std[c] / n;
            for bi in 0..b {
                let base = (bi * self.channels + c) * spatial;
                for i in base..base + spatial {
                    grad_in.data[i] = scale
                        * (n * grad_out.data[i] - sum_g - xhat.data[i] * sum_gx);
                }
            }
        }
        Ok(grad_in)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReluLayer {
    cached_mask: Option<Vec<bool>>,
}

impl ReluLayer {
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let mut out = input.clone();
        let mut mask = vec![false; input.len()];
        for (i, v) in out.data.iter_mut().enumerate() {
            if *v > 0.0 {
                mask[i] = true;
            } else {
                *v = 0.0;
            }
        }
        if mode == Mode::Train {
            self.cached_mask = Some(mask);
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self
            .cached_mask
            .as_ref()
            .ok_or_else(|| Error::NumericalDivergence("relu backward without forward".into()))?;
        let mut grad_in = grad_out.clone();
        for (g, &m) in grad_in.data.iter_mut().zip(mask.iter()) {
            if !m {
                *g = 0.0;
            }
        }
        Ok(grad_in)
    }
}

/// Max pooling over (velocity, azimuth) with stride equal to the window.
#[derive(Debug, Clone)]
pub struct MaxPoolLayer {
    pub p_vel: usize,
    pub p_az: usize,
    cached_argmax: Option<Vec<usize>>,
    cached_in_shape: Vec<usize>,
}

impl MaxPoolLayer {
    pub fn new(p_vel: usize, p_az: usize) -> Self {
        Self {
            p_vel,
            p_az,
            cached_argmax: None,
            cached_in_shape: Vec::new(),
        }
    }

    pub fn output_spatial(&self, d: [usize; 3]) -> [usize; 3] {
        [d[0], d[1] / self.p_vel, d[2] / self.p_az]
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let [b, c, d0, d1, d2] = shape5(input)?;
        let [o0, o1, o2] = self.output_spatial([d0, d1, d2]);
        let mut out = Tensor::zeros(vec![b, c, o0, o1, o2]);
        let mut argmax = vec![0usize; out.len()];
        let mut oi = 0;
        for bi in 0..b {
            for ch in 0..c {
                for x in 0..o0 {
                    let in_base = (((bi * c + ch) * d0) + x) * d1 * d2;
                    for oy in 0..o1 {
                        for oz in 0..o2 {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0;
                            for py in 0..self.p_vel {
                                let row = in_base + (oy * self.p_vel + py) * d2 + oz * self.p_az;
                                for pz in 0..self.p_az {
                                    let v = input.data[row + pz];
                                    if v > best {
                                        best = v;
                                        best_idx = row + pz;
                                    }
                                }
                            }
                            out.data[oi] = best;
                            argmax[oi] = best_idx;
                            oi += 1;
                        }
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.cached_argmax = Some(argmax);
            self.cached_in_shape = input.shape.clone();
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let argmax = self
            .cached_argmax
            .as_ref()
            .ok_or_else(|| Error::NumericalDivergence("max-pool backward without forward".into()))?;
        let mut grad_in = Tensor::zeros(self.cached_in_shape.clone());
        for (g, &idx) in grad_out.data.iter().zip(argmax.iter()) {
            grad_in.data[idx] += g;
        }
        Ok(grad_in)
    }
}

#[derive(Debug, Clone, Default)]
pub struct FlattenLayer {
    cached_in_shape: Vec<usize>,
}

impl FlattenLayer {
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let b = input.shape[0];
        let rest: usize = input.shape[1..].iter().product();
        if mode == Mode::Train {
            self.cached_in_shape = input.shape.clone();
        }
        Tensor {
            shape: vec![b, rest],
            data: input.data.clone(),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        Tensor {
            shape: self.cached_in_shape.clone(),
            data: grad_out.data.clone(),
        }
    }
}

/// Fully-connected layer, out = x·Wᵀ + b.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
    pub frozen: bool,
    cached_input: Option<Tensor>,
}

impl DenseLayer {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::xavier(
                vec![out_features, in_features],
                in_features,
                out_features,
                rng,
            ),
            bias: Param::zeros(vec![out_features]),
            frozen: false,
            cached_input: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        if input.shape.len() != 2 || input.shape[1] != self.in_features {
            return Err(Error::DimensionMismatch(format!(
                "dense expects [B, {}], got {:?}",
                self.in_features, input.shape
            )));
        }
        let b = input.shape[0];
        let mut out = Tensor::zeros(vec![b, self.out_features]);
        for bi in 0..b {
            let xrow = &input.data[bi * self.in_features..(bi + 1) * self.in_features];
            let orow = &mut out.data[bi * self.out_features..(bi + 1) * self.out_features];
            for (o, ov) in orow.iter_mut().enumerate() {
                let wrow = &self.weight.data[o * self.in_features..(o + 1) * self.in_features];
                let mut acc = self.bias.data[o];
                for (w, x) in wrow.iter().zip(xrow.iter()) {
                    acc += w * x;
                }
                *ov = acc;
            }
        }
        if mode == Mode::Train {
            self.cached_input = Some(input.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::NumericalDivergence("dense backward without forward".into()))?;
        let b = input.shape[0];
        let mut grad_in = Tensor::zeros(input.shape.clone());
        for bi in 0..b {
            let xrow = &input.data[bi * self.in_features..(bi + 1) * self.in_features];
            let grow = &grad_out.data[bi * self.out_features..(bi + 1) * self.out_features];
            let girow = &mut grad_in.data[bi * self.in_features..(bi + 1) * self.in_features];
            for (o, &g) in grow.iter().enumerate() {
                let wrow = &self.weight.data[o * self.in_features..(o + 1) * self.in_features];
                for (gi, w) in girow.iter_mut().zip(wrow.iter()) {
                    *gi += g * w;
                }
                if !self.frozen {
                    let wgrow =
                        &mut self.weight.grad[o * self.in_features..(o + 1) * self.in_features];
                    for (wg, x) in wgrow.iter_mut().zip(xrow.iter()) {
                        *wg += g * x;
                    }
                    self.bias.grad[o] += g;
                }
            }
        }
        Ok(grad_in)
    }
}

/// One model layer.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvLayer),
    Relu(ReluLayer),
    BatchNorm(BatchNormLayer),
    MaxPool(MaxPoolLayer),
    Flatten(FlattenLayer),
    Dense(DenseLayer),
}

impl Layer {
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward(input, mode),
            Layer::Relu(l) => Ok(l.forward(input, mode)),
            Layer::BatchNorm(l) => l.forward(input, mode),
            Layer::MaxPool(l) => l.forward(input, mode),
            Layer::Flatten(l) => Ok(l.forward(input, mode)),
            Layer::Dense(l) => l.forward(input, mode),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::BatchNorm(l) => l.backward(grad_out),
            Layer::MaxPool(l) => l.backward(grad_out),
            Layer::Flatten(l) => Ok(l.backward(grad_out)),
            Layer::Dense(l) => l.backward(grad_out),
        }
    }

    pub fn is_frozen(&self) -> bool {
        match self {
            Layer::Conv(l) => l.frozen,
            Layer::BatchNorm(l) => l.frozen,
            Layer::Dense(l) => l.frozen,
            _ => false,
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        match self {
            Layer::Conv(l) => l.frozen = frozen,
            Layer::BatchNorm(l) => l.frozen = frozen,
            Layer::Dense(l) => l.frozen = frozen,
            _ => {}
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => vec![],
        }
    }
}

pub(crate) fn shape5(t: &Tensor) -> Result<[usize; 5]> {
    if t.shape.len() != 5 {
        return Err(Error::DimensionMismatch(format!(
            "expected 5-d feature map, got shape {:?}",
            t.shape
        )));
    }
    Ok([t.shape[0], t.shape[1], t.shape[2], t.shape[3], t.shape[4]])
}
