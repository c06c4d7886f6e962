//! Central-difference gradient checks shared by the gradient suite and the
//! acceptance run.

use rand::Rng;
use rand_distr::StandardNormal;

use scusfl::codec::{Cr, SemanticCodec};
use scusfl::codec::CodecArch;
use scusfl::rng;
use scusfl::tensor::{finite_diff_grad, softmax_cross_entropy_batch, Layer, Tensor};

pub const EPS: f64 = 1e-5;
pub const DENOM_FLOOR: f64 = 1e-6;
pub const INSTANCES: u64 = 50;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(DENOM_FLOOR)
}

fn max_rel(a: &[f64], n: &[f64]) -> f64 {
    a.iter().zip(n).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

fn randn(shape: Vec<usize>, r: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

/// Inputs kept at least 0.05 away from zero, where ReLU has its kink.
fn randn_off_zero(shape: Vec<usize>, r: &mut impl Rng) -> Tensor {
    let mut t = randn(shape, r);
    for v in t.values_mut() {
        *v += 0.05f64.copysign(*v);
    }
    t
}

#[derive(Clone, Copy, Debug)]
pub enum Kind {
    Dense,
    Conv2d,
    Relu,
    Flatten,
    AvgPool,
}

pub const KINDS: [Kind; 5] = [Kind::Dense, Kind::Conv2d, Kind::Relu, Kind::Flatten, Kind::AvgPool];

/// Worst relative error over input and parameter gradients of one layer
/// instance, under the loss `sum(u * y)` with random `u`.
pub fn layer_instance(kind: Kind, seed: u64) -> f64 {
    let mut r = rng::stream(seed, &format!("gradcheck/{kind:?}"));
    let batch = r.gen_range(1..4);
    let (mut layer, in_shape) = match kind {
        Kind::Dense => {
            let (i, o) = (r.gen_range(1..9), r.gen_range(1..9));
            (Layer::dense(i, o, &mut r), vec![batch, i])
        }
        Kind::Conv2d => {
            let (ci, co) = (r.gen_range(1..4), r.gen_range(1..4));
            let k = r.gen_range(1..4);
            let s = r.gen_range(1..3);
            let hw = k + r.gen_range(0..4);
            (Layer::conv2d(ci, co, k, s, &mut r).unwrap(), vec![batch, ci, hw, hw])
        }
        Kind::Relu => (Layer::relu(), vec![batch, r.gen_range(1..12)]),
        Kind::Flatten => (Layer::flatten(), vec![batch, 2, 3, r.gen_range(1..4)]),
        Kind::AvgPool => {
            let s = r.gen_range(1..4);
            (Layer::avgpool(s).unwrap(), vec![batch, 2, s * r.gen_range(1..4), s * r.gen_range(1..3)])
        }
    };
    for p in layer.params_mut() {
        for v in p.values_mut() {
            *v = r.sample(StandardNormal);
        }
    }
    let x = randn_off_zero(in_shape, &mut r);
    let (y, ctx) = layer.forward(&x).unwrap();
    let u = randn(y.shape().to_vec(), &mut r);
    let (gx, gp) = layer.backward(&ctx, &u).unwrap();
    let loss = |l: &Layer, x: &Tensor| {
        let (y, _) = l.forward(x).unwrap();
        y.values().iter().zip(u.values()).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut worst = max_rel(gx.values(), finite_diff_grad(|t| loss(&layer, t), &x, EPS).values());
    for (pi, g) in gp.iter().enumerate() {
        let p0 = layer.params()[pi].clone();
        let num = finite_diff_grad(
            |t| {
                let mut l = layer.clone();
                l.params_mut()[pi] = t.clone();
                loss(&l, &x)
            },
            &p0,
            EPS,
        );
        worst = worst.max(max_rel(g.values(), num.values()));
    }
    worst
}

/// Input-gradient error of a frozen codec's encode -> channel -> decode
/// chain with a noiseless channel and fading gain `h`, equalized.
pub fn codec_instance(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "gradcheck/codec");
    let cr = Cr::standard_set()[r.gen_range(0..4)];
    let d = 24;
    let mut codec = SemanticCodec::new(d, cr, CodecArch::Mlp { hidden: r.gen_range(2..10) }, 10.0, seed).unwrap();
    codec.freeze();
    let h: f64 = r.gen_range(0.2..2.0);
    let chan = move |_: usize, s: &[f64]| Ok(s.iter().map(|v| (h * v) / h).collect::<Vec<f64>>());
    let x = randn(vec![r.gen_range(1..4), d], &mut r);
    let (enc, dec) = codec.roundtrip(&x, chan).unwrap();
    let u = randn(dec.features.shape().to_vec(), &mut r);
    let g = codec.codec_backward(&enc.context, &dec.context, &u).unwrap();
    let num = finite_diff_grad(
        |t| {
            let (_, d) = codec.roundtrip(t, chan).unwrap();
            d.features.values().iter().zip(u.values()).map(|(a, b)| a * b).sum()
        },
        &x,
        EPS,
    );
    max_rel(g.values(), num.values())
}

/// Logit gradient of the batched softmax cross-entropy.
pub fn loss_instance(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "gradcheck/loss");
    let (n, c) = (r.gen_range(1..5), r.gen_range(2..8));
    let x = randn(vec![n, c], &mut r);
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
    let (_, g) = softmax_cross_entropy_batch(&x, &labels).unwrap();
    let num = finite_diff_grad(|t| softmax_cross_entropy_batch(t, &labels).unwrap().0, &x, EPS);
    max_rel(g.values(), num.values())
}
