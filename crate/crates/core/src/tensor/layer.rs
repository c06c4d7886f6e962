use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::Tensor;
use crate::error::{Result, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        input: usize,
        output: usize,
    },
    /// Valid (unpadded) convolution over `[N, C, H, W]` inputs.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    /// Collapses everything after the batch dimension.
    Flatten,
    /// Non-overlapping `size x size` average pooling; trailing rows and
    /// columns that do not fill a window are dropped.
    AvgPool {
        size: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
            LayerKind::AvgPool { .. } => "avgpool",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| SimError::Shape {
            layer: self.name(),
            expected,
            got: input.to_vec(),
        };
        match *self {
            LayerKind::Dense { input: i, output } => {
                if input != [i] {
                    return Err(mismatch(vec![i]));
                }
                Ok(vec![output])
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(mismatch(vec![in_channels, kernel, kernel]));
                }
                let (h, w) = (input[1], input[2]);
                if kernel > h || kernel > w {
                    return Err(mismatch(vec![in_channels, kernel, kernel]));
                }
                Ok(vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Flatten => {
                if input.is_empty() {
                    return Err(mismatch(vec![1]));
                }
                Ok(vec![input.iter().product()])
            }
            LayerKind::AvgPool { size } => {
                if input.len() != 3 || input[1] < size || input[2] < size {
                    return Err(mismatch(vec![1, size, size]));
                }
                Ok(vec![input[0], input[1] / size, input[2] / size])
            }
        }
    }

    /// Forward FLOPs for one sample: dense `2*in*out`, conv `2*k^2*Cin*Cout*Hout*Wout`,
    /// zero for parameter-free layers.
    pub fn flops(&self, input: &[usize]) -> Result<u64> {
        let out = self.output_shape(input)?;
        Ok(match *self {
            LayerKind::Dense { input, output } => 2 * (input * output) as u64,
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => 2 * (kernel * kernel * in_channels * out_channels * out[1] * out[2]) as u64,
            _ => 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    kind: LayerKind,
    params: Vec<Tensor>,
    version: u64,
}

#[derive(Clone, Debug)]
enum Saved {
    Nothing,
    Input(Vec<f64>),
    Mask(Vec<bool>),
}

/// What a forward call leaves behind for the matching backward call.
#[derive(Clone, Debug)]
pub struct Context {
    kind: LayerKind,
    version: u64,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    saved: Saved,
}

impl Context {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

fn xavier<R: Rng + ?Sized>(n: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl Layer {
    pub fn dense<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let w = xavier(input * output, input, output, rng);
        Layer {
            kind: LayerKind::Dense { input, output },
            params: vec![
                Tensor::new(vec![output, input], w).expect("dense weight"),
                Tensor::zeros(vec![output]),
            ],
            version: 0,
        }
    }

    /// Dense layer from explicit `[out, in]` weight and `[out]` bias.
    pub fn dense_from(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (output, input) = match weight.shape() {
            [o, i] => (*o, *i),
            s => {
                return Err(SimError::Shape {
                    layer: "dense",
                    expected: vec![0, 0],
                    got: s.to_vec(),
                })
            }
        };
        if bias.shape() != [output] {
            return Err(SimError::Shape {
                layer: "dense",
                expected: vec![output],
                got: bias.shape().to_vec(),
            });
        }
        Ok(Layer {
            kind: LayerKind::Dense { input, output },
            params: vec![weight, bias],
            version: 0,
        })
    }

    /// Identity map on `dim` features (dense layer with identity weight).
    pub fn dense_identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Layer::dense_from(Tensor::new(vec![dim, dim], w).unwrap(), Tensor::zeros(vec![dim])).unwrap()
    }

    pub fn conv2d<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(SimError::Tensor("conv2d extents must be positive".into()));
        }
        let k2 = kernel * kernel;
        let w = xavier(
            out_channels * in_channels * k2,
            in_channels * k2,
            out_channels * k2,
            rng,
        );
        Ok(Layer {
            kind: LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            },
            params: vec![
                Tensor::new(vec![out_channels, in_channels, kernel, kernel], w)?,
                Tensor::zeros(vec![out_channels]),
            ],
            version: 0,
        })
    }

    pub fn relu() -> Self {
        Layer::stateless(LayerKind::Relu)
    }

    pub fn flatten() -> Self {
        Layer::stateless(LayerKind::Flatten)
    }

    pub fn avgpool(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(SimError::Tensor("avgpool size must be positive".into()));
        }
        Ok(Layer::stateless(LayerKind::AvgPool { size }))
    }

    fn stateless(kind: LayerKind) -> Self {
        Layer {
            kind,
            params: Vec::new(),
            version: 0,
        }
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access. Bumps the layer version so contexts from
    /// earlier forward calls are rejected by `backward`.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.version += 1;
        &mut self.params
    }

    /// Gradient accumulation without invalidating live contexts.
    pub(crate) fn params_for_grad(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn split_batch<'a>(&self, input: &'a Tensor) -> (usize, Vec<usize>, bool) {
        // A rank-1 input to a dense layer is an unbatched single sample.
        if matches!(self.kind, LayerKind::Dense { .. }) && input.shape().len() == 1 {
            return (1, input.shape().to_vec(), true);
        }
        (input.batch(), input.sample_shape().to_vec(), false)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Context)> {
        if input.shape().len() < 2 && !(matches!(self.kind, LayerKind::Dense { .. })) {
            return Err(SimError::Shape {
                layer: self.kind.name(),
                expected: vec![0, 0],
                got: input.shape().to_vec(),
            });
        }
        let (n, sample, unbatched) = self.split_batch(input);
        let out_sample = self.kind.output_shape(&sample)?;
        let out_len: usize = out_sample.iter().product();
        let x = input.values();
        let (values, saved) = match self.kind {
            LayerKind::Dense { input: i, output: o } => {
                let w = self.params[0].values();
                let b = self.params[1].values();
                let mut y = vec![0.0; n * o];
                for row in y.chunks_exact_mut(o) {
                    row.copy_from_slice(b);
                }
                // y[n, o] += x[n, i] . w[o, i]^T
                gemm(n, i, o, x, i, 1, w, 1, i, &mut y, o, 1, 1.0);
                (y, Saved::Input(x.to_vec()))
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let y = conv_forward(
                    x,
                    self.params[0].values(),
                    self.params[1].values(),
                    n,
                    in_channels,
                    out_channels,
                    (sample[1], sample[2]),
                    (out_sample[1], out_sample[2]),
                    kernel,
                    stride,
                );
                (y, Saved::Input(x.to_vec()))
            }
            LayerKind::Relu => {
                let mask: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
                let y = x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                (y, Saved::Mask(mask))
            }
            LayerKind::Flatten => (x.to_vec(), Saved::Nothing),
            LayerKind::AvgPool { size } => {
                let y = pool_forward(x, n, sample[0], (sample[1], sample[2]), size);
                (y, Saved::Nothing)
            }
        };
        debug_assert_eq!(values.len(), n * out_len);
        let out_shape = if unbatched {
            out_sample
        } else {
            let mut s = vec![n];
            s.extend_from_slice(&out_sample);
            s
        };
        let out = Tensor::new(out_shape.clone(), values)?.check_finite(self.kind.name())?;
        let ctx = Context {
            kind: self.kind,
            version: self.version,
            input_shape: input.shape().to_vec(),
            output_shape: out_shape,
            saved,
        };
        Ok((out, ctx))
    }

    /// Returns the input gradient and one gradient tensor per parameter.
    pub fn backward(&self, ctx: &Context, upstream: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (gx, gp) = self.backward_impl(ctx, upstream, true)?;
        Ok((gx, gp.unwrap_or_default()))
    }

    /// Input gradient only; parameter gradients are never formed.
    pub fn backward_input(&self, ctx: &Context, upstream: &Tensor) -> Result<Tensor> {
        Ok(self.backward_impl(ctx, upstream, false)?.0)
    }

    fn backward_impl(
        &self,
        ctx: &Context,
        upstream: &Tensor,
        want_params: bool,
    ) -> Result<(Tensor, Option<Vec<Tensor>>)> {
        if ctx.kind != self.kind {
            return Err(SimError::StaleContext(format!(
                "context from {} given to {}",
                ctx.kind.name(),
                self.kind.name()
            )));
        }
        if ctx.version != self.version {
            return Err(SimError::StaleContext(format!(
                "{} parameters changed since forward (version {} vs {})",
                self.kind.name(),
                ctx.version,
                self.version
            )));
        }
        if upstream.shape() != ctx.output_shape.as_slice() {
            return Err(SimError::Shape {
                layer: self.kind.name(),
                expected: ctx.output_shape.clone(),
                got: upstream.shape().to_vec(),
            });
        }
        let g = upstream.values();
        let in_len: usize = ctx.input_shape.iter().product();
        let (gx, gp) = match (self.kind, &ctx.saved) {
            (LayerKind::Dense { input: i, output: o }, Saved::Input(x)) => {
                let n = in_len / i;
                let w = self.params[0].values();
                let mut gx = vec![0.0; n * i];
                // gx[n, i] = g[n, o] . w[o, i]
                gemm(n, o, i, g, o, 1, w, i, 1, &mut gx, i, 1, 0.0);
                let gp = want_params.then(|| {
                    let mut gw = vec![0.0; o * i];
                    // gw[o, i] = g^T[o, n] . x[n, i]
                    gemm(o, n, i, g, 1, o, x, i, 1, &mut gw, i, 1, 0.0);
                    let mut gb = vec![0.0; o];
                    for row in g.chunks_exact(o) {
                        for (b, v) in gb.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    vec![
                        Tensor::new(vec![o, i], gw).unwrap(),
                        Tensor::new(vec![o], gb).unwrap(),
                    ]
                });
                (gx, gp)
            }
            (
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                },
                Saved::Input(x),
            ) => {
                let s = &ctx.input_shape;
                let o = &ctx.output_shape;
                let (gx, gw, gb) = conv_backward(
                    x,
                    self.params[0].values(),
                    g,
                    s[0],
                    in_channels,
                    out_channels,
                    (s[2], s[3]),
                    (o[2], o[3]),
                    kernel,
                    stride,
                    want_params,
                );
                let gp = want_params.then(|| {
                    vec![
                        Tensor::new(self.params[0].shape().to_vec(), gw).unwrap(),
                        Tensor::new(vec![out_channels], gb).unwrap(),
                    ]
                });
                (gx, gp)
            }
            (LayerKind::Relu, Saved::Mask(mask)) => {
                let gx = g
                    .iter()
                    .zip(mask)
                    .map(|(&v, &m)| if m { v } else { 0.0 })
                    .collect();
                (gx, want_params.then(Vec::new))
            }
            (LayerKind::Flatten, _) => (g.to_vec(), want_params.then(Vec::new)),
            (LayerKind::AvgPool { size }, _) => {
                let s = &ctx.input_shape;
                let gx = pool_backward(g, s[0], s[1], (s[2], s[3]), size);
                (gx, want_params.then(Vec::new))
            }
            _ => return Err(SimError::StaleContext("context payload mismatch".into())),
        };
        let gx = Tensor::new(ctx.input_shape.clone(), gx)?.check_finite(self.kind.name())?;
        Ok((gx, gp))
    }
}

/// `c = a . b + beta * c` for row/column-strided `m x k` and `k x n` operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
    beta: f64,
) {
    assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    assert!(c.len() >= (m - 1) * rsc + (n - 1) * csc + 1);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    cin: usize,
    cout: usize,
    (h, wd): (usize, usize),
    (ho, wo): (usize, usize),
    k: usize,
    s: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; n * cout * ho * wo];
    for ni in 0..n {
        for o in 0..cout {
            let yb = &mut y[(ni * cout + o) * ho * wo..][..ho * wo];
            yb.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..cin {
                let xb = &x[(ni * cin + c) * h * wd..][..h * wd];
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = w[((o * cin + c) * k + kh) * k + kw];
                        for oh in 0..ho {
                            let xr = &xb[(oh * s + kh) * wd + kw..];
                            let yr = &mut yb[oh * wo..][..wo];
                            for (ow, yv) in yr.iter_mut().enumerate() {
                                *yv += wv * xr[ow * s];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    n: usize,
    cin: usize,
    cout: usize,
    (h, wd): (usize, usize),
    (ho, wo): (usize, usize),
    k: usize,
    s: usize,
    want_params: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; if want_params { w.len() } else { 0 }];
    let mut gb = vec![0.0; if want_params { cout } else { 0 }];
    for ni in 0..n {
        for o in 0..cout {
            let gbuf = &g[(ni * cout + o) * ho * wo..][..ho * wo];
            if want_params {
                gb[o] += gbuf.iter().sum::<f64>();
            }
            for c in 0..cin {
                let base = (ni * cin + c) * h * wd;
                for kh in 0..k {
                    for kw in 0..k {
                        let widx = ((o * cin + c) * k + kh) * k + kw;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for oh in 0..ho {
                            let row = base + (oh * s + kh) * wd + kw;
                            let gr = &gbuf[oh * wo..][..wo];
                            for (ow, &gv) in gr.iter().enumerate() {
                                let xi = row + ow * s;
                                gx[xi] += wv * gv;
                                if want_params {
                                    acc += gv * x[xi];
                                }
                            }
                        }
                        if want_params {
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

fn pool_forward(x: &[f64], n: usize, c: usize, (h, w): (usize, usize), p: usize) -> Vec<f64> {
    let (ho, wo) = (h / p, w / p);
    let inv = 1.0 / (p * p) as f64;
    let mut y = vec![0.0; n * c * ho * wo];
    for plane in 0..n * c {
        let xb = &x[plane * h * w..][..h * w];
        let yb = &mut y[plane * ho * wo..][..ho * wo];
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = 0.0;
                for dh in 0..p {
                    for dw in 0..p {
                        acc += xb[(oh * p + dh) * w + ow * p + dw];
                    }
                }
                yb[oh * wo + ow] = acc * inv;
            }
        }
    }
    y
}

fn pool_backward(g: &[f64], n: usize, c: usize, (h, w): (usize, usize), p: usize) -> Vec<f64> {
    let (ho, wo) = (h / p, w / p);
    let inv = 1.0 / (p * p) as f64;
    let mut gx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let gb = &g[plane * ho * wo..][..ho * wo];
        let xb = &mut gx[plane * h * w..][..h * w];
        for oh in 0..ho {
            for ow in 0..wo {
                let v = gb[oh * wo + ow] * inv;
                for dh in 0..p {
                    for dw in 0..p {
                        xb[(oh * p + dh) * w + ow * p + dw] = v;
                    }
                }
            }
        }
    }
    gx
}
