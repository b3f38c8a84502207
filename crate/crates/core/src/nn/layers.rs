//! Layer implementations.
//!
//! Every layer offers three entry points: `forward_train` (caches whatever
//! its backward pass needs and may consume randomness), `forward_eval`
//! (pure `&self`, so a frozen model can serve many threads), and `backward`
//! (exact adjoint of the cached training forward, accumulating parameter
//! gradients). Convolution keeps only its input and rebuilds the im2col
//! matrix during backward, trading a little compute for bounded memory.

use crate::error::Error;
use crate::nn::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::rng::DetRng;
use crate::Result;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

fn shape_err(context: &str, expected: Vec<usize>, got: &[usize]) -> Error {
    Error::ShapeMismatch {
        context: context.into(),
        expected,
        got: got.to_vec(),
    }
}

fn need_cache(layer: &str) -> Error {
    Error::config(format!("{layer}: backward called before forward_train"))
}

/// He-uniform initialization: uniform in ±sqrt(6/fan_in).
fn he_uniform(count: usize, fan_in: usize, rng: &mut DetRng) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..count).map(|_| rng.range(-limit, limit)).collect()
}

// ---------------------------------------------------------------- conv2d

/// Stride-1 cross-correlation with zero "same" padding (odd kernels).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    /// out_ch × in_ch × kh × kw.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cached_input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kh: usize, kw: usize, rng: &mut DetRng) -> Self {
        assert!(kh % 2 == 1 && kw % 2 == 1, "kernels must be odd for same padding");
        let fan_in = in_ch * kh * kw;
        Conv2d {
            in_ch,
            out_ch,
            kh,
            kw,
            weight: he_uniform(out_ch * fan_in, fan_in, rng),
            bias: vec![0.0; out_ch],
            grad_weight: vec![0.0; out_ch * fan_in],
            grad_bias: vec![0.0; out_ch],
            cached_input: None,
        }
    }

    /// Builds the im2col matrix: rows = in_ch·kh·kw, cols = N·H·W.
    fn im2col(&self, x: &Tensor) -> Vec<f64> {
        let (n, c, h, w) = x.dims4();
        let (kh, kw) = (self.kh, self.kw);
        let (ph, pw) = (kh / 2, kw / 2);
        let rows = c * kh * kw;
        let cols = n * h * w;
        let mut out = vec![0.0; rows * cols];
        for ci in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    let row = (ci * kh + i) * kw + j;
                    let row_base = row * cols;
                    for ni in 0..n {
                        let in_base = (ni * c + ci) * h * w;
                        let col_base = ni * h * w;
                        for y in 0..h {
                            let sy = y as isize + i as isize - ph as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let src_row = in_base + sy as usize * w;
                            let dst_row = row_base + col_base + y * w;
                            let dx = j as isize - pw as isize;
                            let x_lo = (-dx).max(0) as usize;
                            let x_hi = (w as isize - dx).min(w as isize) as usize;
                            for xx in x_lo..x_hi {
                                out[dst_row + xx] = x.data[src_row + (xx as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4();
        if c != self.in_ch {
            return Err(shape_err(
                "conv2d input channels",
                vec![n, self.in_ch, h, w],
                &x.shape,
            ));
        }
        let cols = self.im2col(x);
        let m = n * h * w;
        let rows = self.in_ch * self.kh * self.kw;
        // out_mat: out_ch × (N·H·W)
        let out_mat = matmul(&self.weight, &cols, self.out_ch, rows, m);
        let mut out = Tensor::zeros(&[n, self.out_ch, h, w]);
        let hw = h * w;
        for o in 0..self.out_ch {
            let b = self.bias[o];
            for ni in 0..n {
                let src = &out_mat[o * m + ni * hw..o * m + (ni + 1) * hw];
                let dst = &mut out.data[(ni * self.out_ch + o) * hw..(ni * self.out_ch + o + 1) * hw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + b;
                }
            }
        }
        Ok(out)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.forward(x)?;
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.cached_input.as_ref().ok_or_else(|| need_cache("conv2d"))?;
        let (n, c, h, w) = x.dims4();
        if dy.shape != [n, self.out_ch, h, w] {
            return Err(shape_err(
                "conv2d upstream gradient",
                vec![n, self.out_ch, h, w],
                &dy.shape,
            ));
        }
        let hw = h * w;
        let m = n * hw;
        let rows = self.in_ch * self.kh * self.kw;

        // Regroup dy from NCHW to out_ch × (N·H·W).
        let mut dy_mat = vec![0.0; self.out_ch * m];
        for ni in 0..n {
            for o in 0..self.out_ch {
                let src = &dy.data[(ni * self.out_ch + o) * hw..(ni * self.out_ch + o + 1) * hw];
                dy_mat[o * m + ni * hw..o * m + (ni + 1) * hw].copy_from_slice(src);
            }
        }

        let cols = self.im2col(x);
        // grad_w (out_ch × rows) = dy_mat · colsᵀ
        let gw = matmul_nt(&dy_mat, &cols, self.out_ch, m, rows);
        for (acc, g) in self.grad_weight.iter_mut().zip(&gw) {
            *acc += g;
        }
        for o in 0..self.out_ch {
            self.grad_bias[o] += dy_mat[o * m..(o + 1) * m].iter().sum::<f64>();
        }

        // dx via col2im of weightᵀ · dy_mat (rows × m).
        let dcols = matmul_tn(&self.weight, &dy_mat, self.out_ch, rows, m);
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        for ci in 0..c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ci * self.kh + i) * self.kw + j;
                    let row_base = row * m;
                    for ni in 0..n {
                        let out_base = (ni * c + ci) * hw;
                        let col_base = ni * hw;
                        for y in 0..h {
                            let sy = y as isize + i as isize - ph as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let dst_row = out_base + sy as usize * w;
                            let src_row = row_base + col_base + y * w;
                            let dxo = j as isize - pw as isize;
                            let x_lo = (-dxo).max(0) as usize;
                            let x_hi = (w as isize - dxo).min(w as isize) as usize;
                            for xx in x_lo..x_hi {
                                dx.data[dst_row + (xx as isize + dxo) as usize] +=
                                    dcols[src_row + xx];
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

// ------------------------------------------------------------ batch_norm

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    cached: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            cached: None,
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4();
        if c != self.channels {
            return Err(shape_err("batch_norm channels", vec![n, self.channels, h, w], &x.shape));
        }
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut out = Tensor::zeros(&x.shape);
        let mut x_hat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ci in 0..c {
            let mut mean = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                mean += x.data[base..base + hw].iter().sum::<f64>();
            }
            mean /= count;
            let mut var = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for &v in &x.data[base..base + hw] {
                    let d = v - mean;
                    var += d * d;
                }
            }
            var /= count; // biased batch variance
            let istd = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ci] = istd;
            self.running_mean[ci] = BN_MOMENTUM * self.running_mean[ci] + (1.0 - BN_MOMENTUM) * mean;
            self.running_var[ci] = BN_MOMENTUM * self.running_var[ci] + (1.0 - BN_MOMENTUM) * var;
            let (g, b) = (self.gamma[ci], self.beta[ci]);
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for k in base..base + hw {
                    let xh = (x.data[k] - mean) * istd;
                    x_hat[k] = xh;
                    out.data[k] = g * xh + b;
                }
            }
        }
        self.cached = Some(BnCache {
            x_hat,
            inv_std,
            shape: x.shape.clone(),
        });
        Ok(out)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4();
        if c != self.channels {
            return Err(shape_err("batch_norm channels", vec![n, self.channels, h, w], &x.shape));
        }
        let hw = h * w;
        let mut out = Tensor::zeros(&x.shape);
        for ci in 0..c {
            let istd = 1.0 / (self.running_var[ci] + BN_EPS).sqrt();
            let (g, b) = (self.gamma[ci], self.beta[ci]);
            let mean = self.running_mean[ci];
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for k in base..base + hw {
                    out.data[k] = g * (x.data[k] - mean) * istd + b;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cached.as_ref().ok_or_else(|| need_cache("batch_norm"))?;
        if dy.shape != cache.shape {
            return Err(shape_err("batch_norm upstream gradient", cache.shape.clone(), &dy.shape));
        }
        let (n, c, h, w) = dy.dims4();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut dx = Tensor::zeros(&dy.shape);
        for ci in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for k in base..base + hw {
                    sum_dy += dy.data[k];
                    sum_dy_xhat += dy.data[k] * cache.x_hat[k];
                }
            }
            self.grad_beta[ci] += sum_dy;
            self.grad_gamma[ci] += sum_dy_xhat;
            let mean_dy = sum_dy / count;
            let mean_dy_xhat = sum_dy_xhat / count;
            let scale = self.gamma[ci] * cache.inv_std[ci];
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for k in base..base + hw {
                    dx.data[k] =
                        scale * (dy.data[k] - mean_dy - cache.x_hat[k] * mean_dy_xhat);
                }
            }
        }
        Ok(dx)
    }
}

// ------------------------------------------------------------------ relu

#[derive(Debug, Clone, Default)]
pub struct Relu {
    cached_input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.cached_input = Some(x.clone());
        self.forward_eval(x)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = x.clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.cached_input.as_ref().ok_or_else(|| need_cache("relu"))?;
        if dy.shape != x.shape {
            return Err(shape_err("relu upstream gradient", x.shape.clone(), &dy.shape));
        }
        let mut dx = dy.clone();
        for (d, &xv) in dx.data.iter_mut().zip(&x.data) {
            if xv <= 0.0 {
                *d = 0.0;
            }
        }
        Ok(dx)
    }
}

// -------------------------------------------------------------- max_pool

/// Non-overlapping max pooling: window equals stride, floor division on the
/// spatial dims (trailing remainder dropped).
#[derive(Debug, Clone)]
pub struct MaxPool {
    pub ph: usize,
    pub pw: usize,
    cached: Option<(Vec<usize>, Vec<usize>, Vec<usize>)>, // argmax, in shape, out shape
}

impl MaxPool {
    pub fn new(ph: usize, pw: usize) -> Self {
        assert!(ph >= 1 && pw >= 1);
        MaxPool { ph, pw, cached: None }
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.ph, w / self.pw)
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = self.out_dims(h, w);
        if oh == 0 || ow == 0 {
            return Err(shape_err(
                "max_pool input smaller than window",
                vec![n, c, self.ph, self.pw],
                &x.shape,
            ));
        }
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; out.len()];
        let mut idx = 0;
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0;
                        for iy in 0..self.ph {
                            let y = oy * self.ph + iy;
                            for ix in 0..self.pw {
                                let xpos = ox * self.pw + ix;
                                let at = base + y * w + xpos;
                                if x.data[at] > best {
                                    best = x.data[at];
                                    best_at = at;
                                }
                            }
                        }
                        out.data[idx] = best;
                        argmax[idx] = best_at;
                        idx += 1;
                    }
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (out, argmax) = self.forward(x)?;
        self.cached = Some((argmax, x.shape.clone(), out.shape.clone()));
        Ok(out)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (argmax, in_shape, out_shape) =
            self.cached.as_ref().ok_or_else(|| need_cache("max_pool"))?;
        if dy.shape != *out_shape {
            return Err(shape_err("max_pool upstream gradient", out_shape.clone(), &dy.shape));
        }
        let mut dx = Tensor::zeros(in_shape);
        for (i, &at) in argmax.iter().enumerate() {
            dx.data[at] += dy.data[i];
        }
        Ok(dx)
    }
}

// --------------------------------------------------------------- dropout

#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    cached_mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0,1)");
        Dropout { p, cached_mask: None }
    }

    pub fn forward_train(&mut self, x: &Tensor, rng: &mut DetRng) -> Result<Tensor> {
        if self.p == 0.0 {
            self.cached_mask = Some(vec![1.0; x.len()]);
            return Ok(x.clone());
        }
        let keep_scale = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.uniform() < self.p { 0.0 } else { keep_scale })
            .collect();
        let mut out = x.clone();
        for (o, &m) in out.data.iter_mut().zip(&mask) {
            *o *= m;
        }
        self.cached_mask = Some(mask);
        Ok(out)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mask = self.cached_mask.as_ref().ok_or_else(|| need_cache("dropout"))?;
        if dy.len() != mask.len() {
            return Err(shape_err("dropout upstream gradient", vec![mask.len()], &dy.shape));
        }
        let mut dx = dy.clone();
        for (d, &m) in dx.data.iter_mut().zip(mask) {
            *d *= m;
        }
        Ok(dx)
    }
}

// ------------------------------------------------------- global_avg_pool

#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    cached_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool::default()
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.cached_shape = Some(x.shape.clone());
        self.forward_eval(x)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4();
        let hw = (h * w) as f64;
        let mut out = Tensor::zeros(&[n, c]);
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                out.data[ni * c + ci] =
                    x.data[base..base + h * w].iter().sum::<f64>() / hw;
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let shape = self.cached_shape.as_ref().ok_or_else(|| need_cache("global_avg_pool"))?;
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if dy.shape != [n, c] {
            return Err(shape_err("global_avg_pool upstream gradient", vec![n, c], &dy.shape));
        }
        let hw = h * w;
        let scale = 1.0 / hw as f64;
        let mut dx = Tensor::zeros(shape);
        for ni in 0..n {
            for ci in 0..c {
                let g = dy.data[ni * c + ci] * scale;
                let base = (ni * c + ci) * hw;
                dx.data[base..base + hw].iter_mut().for_each(|v| *v = g);
            }
        }
        Ok(dx)
    }
}

// ----------------------------------------------------- channel_attention

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Squeeze-and-excitation gate: GAP → dense bottleneck (reduction 4) →
/// ReLU → dense → logistic; the input is scaled per channel by the gate.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    pub channels: usize,
    pub hidden: usize,
    /// hidden × channels.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// channels × hidden.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub grad_w1: Vec<f64>,
    pub grad_b1: Vec<f64>,
    pub grad_w2: Vec<f64>,
    pub grad_b2: Vec<f64>,
    cached: Option<AttnCache>,
}

#[derive(Debug, Clone)]
struct AttnCache {
    input: Tensor,
    gap: Vec<f64>,    // N × C
    h_pre: Vec<f64>,  // N × hidden
    scale: Vec<f64>,  // N × C (post-sigmoid)
}

impl ChannelAttention {
    pub fn new(channels: usize, rng: &mut DetRng) -> Self {
        let hidden = (channels / 4).max(1);
        ChannelAttention {
            channels,
            hidden,
            w1: he_uniform(hidden * channels, channels, rng),
            b1: vec![0.0; hidden],
            w2: he_uniform(channels * hidden, hidden, rng),
            b2: vec![0.0; channels],
            grad_w1: vec![0.0; hidden * channels],
            grad_b1: vec![0.0; hidden],
            grad_w2: vec![0.0; channels * hidden],
            grad_b2: vec![0.0; channels],
            cached: None,
        }
    }

    /// Returns (output, gap, h_pre, scale).
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (n, c, h, w) = x.dims4();
        if c != self.channels {
            return Err(shape_err(
                "channel_attention channels",
                vec![n, self.channels, h, w],
                &x.shape,
            ));
        }
        let hw = (h * w) as f64;
        let mut gap = vec![0.0; n * c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                gap[ni * c + ci] = x.data[base..base + h * w].iter().sum::<f64>() / hw;
            }
        }
        // h_pre = gap · w1ᵀ + b1
        let mut h_pre = matmul_nt(&gap, &self.w1, n, c, self.hidden);
        for ni in 0..n {
            for k in 0..self.hidden {
                h_pre[ni * self.hidden + k] += self.b1[k];
            }
        }
        let h_act: Vec<f64> = h_pre.iter().map(|&v| v.max(0.0)).collect();
        // s_pre = h · w2ᵀ + b2
        let mut s = matmul_nt(&h_act, &self.w2, n, self.hidden, c);
        for ni in 0..n {
            for ci in 0..c {
                s[ni * c + ci] = sigmoid(s[ni * c + ci] + self.b2[ci]);
            }
        }
        let mut out = x.clone();
        let hw_i = h * w;
        for ni in 0..n {
            for ci in 0..c {
                let g = s[ni * c + ci];
                let base = (ni * c + ci) * hw_i;
                out.data[base..base + hw_i].iter_mut().for_each(|v| *v *= g);
            }
        }
        Ok((out, gap, h_pre, s))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (out, gap, h_pre, scale) = self.forward(x)?;
        self.cached = Some(AttnCache {
            input: x.clone(),
            gap,
            h_pre,
            scale,
        });
        Ok(out)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    /// Gate values for inspection: N × C in (0, 1).
    pub fn attention_scalars(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.3)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cached.as_ref().ok_or_else(|| need_cache("channel_attention"))?;
        let x = &cache.input;
        if dy.shape != x.shape {
            return Err(shape_err("channel_attention upstream gradient", x.shape.clone(), &dy.shape));
        }
        let (n, c, h, w) = x.dims4();
        let hw = h * w;

        // Direct path plus gradient into the gate.
        let mut dx = Tensor::zeros(&x.shape);
        let mut ds = vec![0.0; n * c];
        for ni in 0..n {
            for ci in 0..c {
                let g = cache.scale[ni * c + ci];
                let base = (ni * c + ci) * hw;
                let mut acc = 0.0;
                for k in 0..hw {
                    dx.data[base + k] = dy.data[base + k] * g;
                    acc += dy.data[base + k] * x.data[base + k];
                }
                ds[ni * c + ci] = acc;
            }
        }
        // Through the sigmoid.
        let mut ds_pre = ds;
        for (i, v) in ds_pre.iter_mut().enumerate() {
            let s = cache.scale[i];
            *v *= s * (1.0 - s);
        }
        let h_act: Vec<f64> = cache.h_pre.iter().map(|&v| v.max(0.0)).collect();
        // dw2 (c × hidden) = ds_preᵀ · h_act
        let dw2 = matmul_tn(&ds_pre, &h_act, n, c, self.hidden);
        for (acc, g) in self.grad_w2.iter_mut().zip(&dw2) {
            *acc += g;
        }
        for ni in 0..n {
            for ci in 0..c {
                self.grad_b2[ci] += ds_pre[ni * c + ci];
            }
        }
        // dh = ds_pre · w2 (n × hidden), gated by ReLU.
        let mut dh = matmul(&ds_pre, &self.w2, n, c, self.hidden);
        for (v, &pre) in dh.iter_mut().zip(&cache.h_pre) {
            if pre <= 0.0 {
                *v = 0.0;
            }
        }
        // dw1 (hidden × c) = dhᵀ · gap
        let dw1 = matmul_tn(&dh, &cache.gap, n, self.hidden, c);
        for (acc, g) in self.grad_w1.iter_mut().zip(&dw1) {
            *acc += g;
        }
        for ni in 0..n {
            for k in 0..self.hidden {
                self.grad_b1[k] += dh[ni * self.hidden + k];
            }
        }
        // dgap = dh · w1 (n × c), spread uniformly over the spatial dims.
        let dgap = matmul(&dh, &self.w1, n, self.hidden, c);
        let spread = 1.0 / hw as f64;
        for ni in 0..n {
            for ci in 0..c {
                let g = dgap[ni * c + ci] * spread;
                let base = (ni * c + ci) * hw;
                dx.data[base..base + hw].iter_mut().for_each(|v| *v += g);
            }
        }
        Ok(dx)
    }
}

// ----------------------------------------------------------------- dense

#[derive(Debug, Clone)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// out × in.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cached_input: Option<Tensor>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, rng: &mut DetRng) -> Self {
        Dense {
            in_features,
            out_features,
            weight: he_uniform(out_features * in_features, in_features, rng),
            bias: vec![0.0; out_features],
            grad_weight: vec![0.0; out_features * in_features],
            grad_bias: vec![0.0; out_features],
            cached_input: None,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, f) = x.dims2();
        if f != self.in_features {
            return Err(shape_err("dense input", vec![n, self.in_features], &x.shape));
        }
        let mut out = matmul_nt(&x.data, &self.weight, n, f, self.out_features);
        for ni in 0..n {
            for o in 0..self.out_features {
                out[ni * self.out_features + o] += self.bias[o];
            }
        }
        Ok(Tensor::from_vec(&[n, self.out_features], out))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.forward(x)?;
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.cached_input.as_ref().ok_or_else(|| need_cache("dense"))?;
        let (n, f) = x.dims2();
        if dy.shape != [n, self.out_features] {
            return Err(shape_err("dense upstream gradient", vec![n, self.out_features], &dy.shape));
        }
        let dw = matmul_tn(&dy.data, &x.data, n, self.out_features, f);
        for (acc, g) in self.grad_weight.iter_mut().zip(&dw) {
            *acc += g;
        }
        for ni in 0..n {
            for o in 0..self.out_features {
                self.grad_bias[o] += dy.data[ni * self.out_features + o];
            }
        }
        let dx = matmul(&dy.data, &self.weight, n, self.out_features, f);
        Ok(Tensor::from_vec(&[n, f], dx))
    }
}

// --------------------------------------------------------------- softmax

#[derive(Debug, Clone, Default)]
pub struct Softmax {
    cached_output: Option<Tensor>,
}

impl Softmax {
    pub fn new() -> Self {
        Softmax::default()
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.forward_eval(x)?;
        self.cached_output = Some(out.clone());
        Ok(out)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (n, k) = x.dims2();
        let mut out = Tensor::zeros(&[n, k]);
        for ni in 0..n {
            let row = &x.data[ni * k..(ni + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &z) in row.iter().enumerate() {
                let e = (z - max).exp();
                out.data[ni * k + j] = e;
                denom += e;
            }
            for j in 0..k {
                out.data[ni * k + j] /= denom;
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let s = self.cached_output.as_ref().ok_or_else(|| need_cache("softmax"))?;
        if dy.shape != s.shape {
            return Err(shape_err("softmax upstream gradient", s.shape.clone(), &dy.shape));
        }
        let (n, k) = s.dims2();
        let mut dx = Tensor::zeros(&[n, k]);
        for ni in 0..n {
            let mut dot = 0.0;
            for j in 0..k {
                dot += dy.data[ni * k + j] * s.data[ni * k + j];
            }
            for j in 0..k {
                dx.data[ni * k + j] = s.data[ni * k + j] * (dy.data[ni * k + j] - dot);
            }
        }
        Ok(dx)
    }
}

// ------------------------------------------------------------ Layer enum

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu(Relu),
    MaxPool(MaxPool),
    Dropout(Dropout),
    GlobalAvgPool(GlobalAvgPool),
    ChannelAttention(ChannelAttention),
    Dense(Dense),
    Softmax(Softmax),
}

impl Layer {
    pub fn forward_train(&mut self, x: &Tensor, rng: &mut DetRng) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward_train(x),
            Layer::BatchNorm(l) => l.forward_train(x),
            Layer::Relu(l) => l.forward_train(x),
            Layer::MaxPool(l) => l.forward_train(x),
            Layer::Dropout(l) => l.forward_train(x, rng),
            Layer::GlobalAvgPool(l) => l.forward_train(x),
            Layer::ChannelAttention(l) => l.forward_train(x),
            Layer::Dense(l) => l.forward_train(x),
            Layer::Softmax(l) => l.forward_train(x),
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward_eval(x),
            Layer::BatchNorm(l) => l.forward_eval(x),
            Layer::Relu(l) => l.forward_eval(x),
            Layer::MaxPool(l) => l.forward_eval(x),
            Layer::Dropout(l) => l.forward_eval(x),
            Layer::GlobalAvgPool(l) => l.forward_eval(x),
            Layer::ChannelAttention(l) => l.forward_eval(x),
            Layer::Dense(l) => l.forward_eval(x),
            Layer::Softmax(l) => l.forward_eval(x),
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::MaxPool(l) => l.backward(dy),
            Layer::Dropout(l) => l.backward(dy),
            Layer::GlobalAvgPool(l) => l.backward(dy),
            Layer::ChannelAttention(l) => l.backward(dy),
            Layer::Dense(l) => l.backward(dy),
            Layer::Softmax(l) => l.backward(dy),
        }
    }

    /// (parameter, gradient) pairs the optimizer reads, in the same fixed
    /// order as [`Layer::trainable_mut`].
    pub fn trainable(&self) -> Vec<(&Vec<f64>, &Vec<f64>)> {
        match self {
            Layer::Conv2d(l) => vec![(&l.weight, &l.grad_weight), (&l.bias, &l.grad_bias)],
            Layer::BatchNorm(l) => vec![(&l.gamma, &l.grad_gamma), (&l.beta, &l.grad_beta)],
            Layer::ChannelAttention(l) => vec![
                (&l.w1, &l.grad_w1),
                (&l.b1, &l.grad_b1),
                (&l.w2, &l.grad_w2),
                (&l.b2, &l.grad_b2),
            ],
            Layer::Dense(l) => vec![(&l.weight, &l.grad_weight), (&l.bias, &l.grad_bias)],
            _ => Vec::new(),
        }
    }

    /// (parameter, gradient) pairs the optimizer may update, in a fixed
    /// order. Batch-norm running statistics are deliberately absent.
    pub fn trainable_mut(&mut self) -> Vec<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv2d(l) => vec![
                (&mut l.weight, &mut l.grad_weight),
                (&mut l.bias, &mut l.grad_bias),
            ],
            Layer::BatchNorm(l) => vec![
                (&mut l.gamma, &mut l.grad_gamma),
                (&mut l.beta, &mut l.grad_beta),
            ],
            Layer::ChannelAttention(l) => vec![
                (&mut l.w1, &mut l.grad_w1),
                (&mut l.b1, &mut l.grad_b1),
                (&mut l.w2, &mut l.grad_w2),
                (&mut l.b2, &mut l.grad_b2),
            ],
            Layer::Dense(l) => vec![
                (&mut l.weight, &mut l.grad_weight),
                (&mut l.bias, &mut l.grad_bias),
            ],
            _ => Vec::new(),
        }
    }

    /// Every persistent vector, in checkpoint order (includes batch-norm
    /// running statistics, which are state but not trainable).
    pub fn state(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta, &l.running_mean, &l.running_var],
            Layer::ChannelAttention(l) => vec![&l.w1, &l.b1, &l.w2, &l.b2],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => {
                vec![&mut l.gamma, &mut l.beta, &mut l.running_mean, &mut l.running_var]
            }
            Layer::ChannelAttention(l) => vec![&mut l.w1, &mut l.b1, &mut l.w2, &mut l.b2],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, g) in self.trainable_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Compact structural token used in checkpoint headers.
    pub fn describe(&self) -> String {
        match self {
            Layer::Conv2d(l) => format!(
                "conv2d(in={},out={},kh={},kw={})",
                l.in_ch, l.out_ch, l.kh, l.kw
            ),
            Layer::BatchNorm(l) => format!("batch_norm(c={})", l.channels),
            Layer::Relu(_) => "relu".into(),
            Layer::MaxPool(l) => format!("max_pool(ph={},pw={})", l.ph, l.pw),
            Layer::Dropout(l) => format!("dropout(p={})", l.p),
            Layer::GlobalAvgPool(_) => "global_avg_pool".into(),
            Layer::ChannelAttention(l) => format!("channel_attention(c={})", l.channels),
            Layer::Dense(l) => format!("dense(in={},out={})", l.in_features, l.out_features),
            Layer::Softmax(_) => "softmax".into(),
        }
    }
}
