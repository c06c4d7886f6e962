//! Layer-stack presets, their U-shaped head/body/tail partition, and
//! segment-level forward/backward/optimizer plumbing.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::rng;
use crate::tensor::{adam_step, AdamConfig, AdamState, Context, Layer, Tensor};

/// Every compression ratio denominator in use (3, 6, 8, 12) divides this.
pub const FEATURE_DIM_QUANTUM: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tinycnn,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub preset: Preset,
    /// Per-sample input shape: `[C, H, W]` for tinycnn, `[F]` for mlp.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    /// Width of the head output (the uplink feature vector).
    pub feature_dim: usize,
    /// Width of the body's dense blocks.
    pub hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            preset: Preset::Tinycnn,
            input_shape: vec![3, 32, 32],
            num_classes: 10,
            feature_dim: 1536,
            hidden: 64,
        }
    }
}

impl ArchConfig {
    pub fn tinycnn(input_shape: Vec<usize>, num_classes: usize) -> Self {
        ArchConfig {
            input_shape,
            num_classes,
            ..ArchConfig::default()
        }
    }

    pub fn mlp(input_len: usize, num_classes: usize) -> Self {
        ArchConfig {
            preset: Preset::Mlp,
            input_shape: vec![input_len],
            num_classes,
            feature_dim: 24,
            hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.feature_dim % FEATURE_DIM_QUANTUM != 0 {
            return Err(SimError::config(
                "arch.feature_dim",
                format!(
                    "{} is not a positive multiple of {FEATURE_DIM_QUANTUM}",
                    self.feature_dim
                ),
            ));
        }
        if self.num_classes < 2 {
            return Err(SimError::config("arch.num_classes", "need at least 2 classes"));
        }
        if self.hidden == 0 {
            return Err(SimError::config("arch.hidden", "must be positive"));
        }
        match self.preset {
            Preset::Tinycnn => {
                self.tinycnn_channels()?;
            }
            Preset::Mlp => {
                if self.input_shape.len() != 1 || self.input_shape[0] == 0 {
                    return Err(SimError::config(
                        "arch.input_shape",
                        "mlp expects a single positive input length",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Conv output channels so that conv(k=2, s=2) -> avgpool(2) -> flatten
    /// emits exactly `feature_dim` values.
    fn tinycnn_channels(&self) -> Result<usize> {
        let s = &self.input_shape;
        if s.len() != 3 || s.iter().any(|&e| e == 0) {
            return Err(SimError::config(
                "arch.input_shape",
                "tinycnn expects [channels, height, width]",
            ));
        }
        if s[1] < 4 || s[2] < 4 {
            return Err(SimError::config("arch.input_shape", "spatial extents must be >= 4"));
        }
        let spatial = ((s[1] - 2) / 2 + 1) / 2 * (((s[2] - 2) / 2 + 1) / 2);
        if self.feature_dim % spatial != 0 {
            return Err(SimError::config(
                "arch.feature_dim",
                format!(
                    "{} is not divisible by the pooled spatial size {spatial}",
                    self.feature_dim
                ),
            ));
        }
        Ok(self.feature_dim / spatial)
    }

    /// Shallow head, deep body, single dense tail.
    pub fn default_split(&self) -> SplitSpec {
        match self.preset {
            Preset::Tinycnn => SplitSpec::UShaped { cut1: 4, cut2: 8 },
            Preset::Mlp => SplitSpec::UShaped { cut1: 2, cut2: 6 },
        }
    }
}

/// Builds the full layer list. Layer `i` is initialized from the stream
/// `model/layer/{i}`, so weights do not depend on how the model is later cut.
pub fn build_model(arch: &ArchConfig, seed: u64) -> Result<Vec<Layer>> {
    arch.validate()?;
    let r = |i: usize| rng::stream(seed, &format!("model/layer/{i}"));
    let (d, h, c) = (arch.feature_dim, arch.hidden, arch.num_classes);
    let layers = match arch.preset {
        Preset::Tinycnn => {
            let ch = arch.tinycnn_channels()?;
            vec![
                Layer::conv2d(arch.input_shape[0], ch, 2, 2, &mut r(0))?,
                Layer::relu(),
                Layer::avgpool(2)?,
                Layer::flatten(),
                Layer::dense(d, h, &mut r(4)),
                Layer::relu(),
                Layer::dense(h, h, &mut r(6)),
                Layer::relu(),
                Layer::dense(h, c, &mut r(8)),
            ]
        }
        Preset::Mlp => vec![
            Layer::dense(arch.input_shape[0], d, &mut r(0)),
            Layer::relu(),
            Layer::dense(d, h, &mut r(2)),
            Layer::relu(),
            Layer::dense(h, h, &mut r(4)),
            Layer::relu(),
            Layer::dense(h, c, &mut r(6)),
        ],
    };
    Ok(layers)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitSpec {
    /// Whole model in one place (FL, centralized, local).
    Unsplit,
    /// Head = `[0, cut1)`, body = `[cut1, cut2)`, tail = `[cut2, total)`.
    UShaped { cut1: usize, cut2: usize },
}

impl SplitSpec {
    pub fn validate(&self, total_layers: usize) -> Result<()> {
        match *self {
            SplitSpec::Unsplit => Ok(()),
            SplitSpec::UShaped { cut1, cut2 } => {
                if cut1 == 0 {
                    return Err(SimError::config("arch.cut1", "head must be non-empty"));
                }
                if cut1 >= cut2 {
                    return Err(SimError::config(
                        "arch.cut2",
                        format!("body must be non-empty (cut1 = {cut1}, cut2 = {cut2})"),
                    ));
                }
                if cut2 >= total_layers {
                    return Err(SimError::config(
                        "arch.cut2",
                        format!("tail must be non-empty ({cut2} >= {total_layers} layers)"),
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentRole {
    Head,
    Body,
    Tail,
    Full,
}

/// An ordered run of layers plus one Adam state per parameter tensor.
#[derive(Clone, Debug)]
pub struct ModelSegment {
    role: SegmentRole,
    layers: Vec<Layer>,
    optim: Vec<Vec<AdamState>>,
}

/// Per-layer contexts of one segment forward call.
#[derive(Clone, Debug)]
pub struct SegmentContext {
    contexts: Vec<Context>,
}

pub fn partition(
    layers: Vec<Layer>,
    spec: SplitSpec,
    adam: AdamConfig,
) -> Result<(ModelSegment, ModelSegment, ModelSegment)> {
    spec.validate(layers.len())?;
    let SplitSpec::UShaped { cut1, cut2 } = spec else {
        return Err(SimError::config("arch", "cannot partition an unsplit model"));
    };
    let mut layers = layers;
    let tail = layers.split_off(cut2);
    let body = layers.split_off(cut1);
    Ok((
        ModelSegment::new(SegmentRole::Head, layers, adam),
        ModelSegment::new(SegmentRole::Body, body, adam),
        ModelSegment::new(SegmentRole::Tail, tail, adam),
    ))
}

impl ModelSegment {
    /// No split-validity checks; an empty layer list is the identity map.
    pub fn new(role: SegmentRole, layers: Vec<Layer>, adam: AdamConfig) -> Self {
        let optim = layers
            .iter()
            .map(|l| l.params().iter().map(|p| AdamState::new(p.len(), adam)).collect())
            .collect();
        ModelSegment {
            role,
            layers,
            optim,
        }
    }

    pub fn role(&self) -> SegmentRole {
        self.role
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    /// Joins `self` followed by `next` into one segment with fresh optimizer state.
    pub fn concat(self, next: ModelSegment, role: SegmentRole, adam: AdamConfig) -> Self {
        let mut layers = self.layers;
        layers.extend(next.layers);
        ModelSegment::new(role, layers, adam)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, SegmentContext)> {
        let mut contexts = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, ctx) = layer.forward(&x)?;
            contexts.push(ctx);
            x = y;
        }
        Ok((x, SegmentContext { contexts }))
    }

    fn check_ctx(&self, ctx: &SegmentContext) -> Result<()> {
        if ctx.contexts.len() != self.layers.len() {
            return Err(SimError::StaleContext(format!(
                "{} contexts for a {}-layer segment",
                ctx.contexts.len(),
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Backpropagates through the segment, adding parameter gradients into
    /// the layers' gradient buffers. Returns the input gradient.
    pub fn backward(&mut self, ctx: &SegmentContext, upstream: &Tensor) -> Result<Tensor> {
        self.check_ctx(ctx)?;
        let mut g = upstream.clone();
        for (layer, c) in self.layers.iter_mut().zip(&ctx.contexts).rev() {
            let (gx, gp) = layer.backward(c, &g)?;
            for (p, d) in layer.params_for_grad().iter_mut().zip(&gp) {
                p.accumulate_grad(d.values())?;
            }
            g = gx;
        }
        Ok(g)
    }

    /// Input gradient only; no parameter gradient is formed or stored.
    pub fn backward_input(&self, ctx: &SegmentContext, upstream: &Tensor) -> Result<Tensor> {
        self.check_ctx(ctx)?;
        let mut g = upstream.clone();
        for (layer, c) in self.layers.iter().zip(&ctx.contexts).rev() {
            g = layer.backward_input(c, &g)?;
        }
        Ok(g)
    }

    /// Applies Adam to every parameter holding a gradient, then clears it.
    pub fn step(&mut self) -> Result<()> {
        for (layer, states) in self.layers.iter_mut().zip(self.optim.iter_mut()) {
            if layer.params().iter().all(|p| p.grad().is_none()) {
                continue;
            }
            for (p, s) in layer.params_mut().iter_mut().zip(states.iter_mut()) {
                if let Some(g) = p.take_grad() {
                    adam_step(p, &g, s)?;
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for p in layer.params_for_grad() {
                p.take_grad();
            }
        }
    }

    /// Flattened gradient buffers (zeros where none is held), in parameter order.
    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.layers.iter().flat_map(|l| l.params()) {
            match p.grad() {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, p.len())),
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.layers.iter().flat_map(|l| l.params()) {
            out.extend_from_slice(p.values());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(SimError::Aggregation(format!(
                "{} values for a segment with {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            if layer.params().is_empty() {
                continue;
            }
            for p in layer.params_mut() {
                let n = p.len();
                p.values_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// SHA-256 over the little-endian bytes of every parameter, hex encoded.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in self.layers.iter().flat_map(|l| l.params()) {
            for v in p.values() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut s = input.to_vec();
        for l in &self.layers {
            s = l.kind().output_shape(&s)?;
        }
        Ok(s)
    }

    /// Forward FLOPs for one sample of per-sample shape `input`.
    pub fn flop_count(&self, input: &[usize]) -> Result<u64> {
        let mut s = input.to_vec();
        let mut total = 0;
        for l in &self.layers {
            total += l.kind().flops(&s)?;
            s = l.kind().output_shape(&s)?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::LayerKind;

    fn adam() -> AdamConfig {
        AdamConfig::default()
    }

    #[test]
    fn tinycnn_layout() {
        let arch = ArchConfig::default();
        let layers = build_model(&arch, 1).unwrap();
        let kinds: Vec<&str> = layers.iter().map(|l| l.kind().name()).collect();
        assert_eq!(
            kinds,
            ["conv2d", "relu", "avgpool", "flatten", "dense", "relu", "dense", "relu", "dense"]
        );
        let (head, body, tail) = partition(layers, arch.default_split(), adam()).unwrap();
        assert_eq!(head.output_shape(&[3, 32, 32]).unwrap(), vec![1536]);
        assert_eq!(body.output_shape(&[1536]).unwrap(), vec![64]);
        assert_eq!(tail.output_shape(&[64]).unwrap(), vec![10]);
        let total = head.param_count() + body.param_count() + tail.param_count();
        assert!((90_000..130_000).contains(&total), "{total}");
    }

    #[test]
    fn mlp_layout() {
        let arch = ArchConfig::mlp(48, 2);
        let layers = build_model(&arch, 1).unwrap();
        assert!(layers.iter().all(|l| matches!(l.kind(), LayerKind::Dense { .. } | LayerKind::Relu)));
        let (head, _, tail) = partition(layers, arch.default_split(), adam()).unwrap();
        assert_eq!(head.output_shape(&[48]).unwrap(), vec![24]);
        assert_eq!(tail.layers().len(), 1);
    }

    #[test]
    fn feature_dim_must_be_multiple_of_24() {
        let arch = ArchConfig {
            feature_dim: 1000,
            ..ArchConfig::default()
        };
        let err = build_model(&arch, 0).unwrap_err();
        assert!(matches!(err, SimError::Config { ref key, .. } if key == "arch.feature_dim"));
    }

    #[test]
    fn same_seed_same_weights() {
        let arch = ArchConfig::default();
        let a = build_model(&arch, 9).unwrap();
        let b = build_model(&arch, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_model(&arch, 10).unwrap());
    }

    #[test]
    fn partition_sizes_and_concatenation() {
        let mut r = rng::stream(0, "p");
        let layers = vec![
            Layer::dense(3, 4, &mut r),
            Layer::relu(),
            Layer::dense(4, 4, &mut r),
            Layer::relu(),
            Layer::dense(4, 2, &mut r),
        ];
        let (h, b, t) = partition(layers.clone(), SplitSpec::UShaped { cut1: 2, cut2: 4 }, adam()).unwrap();
        assert_eq!((h.layers().len(), b.layers().len(), t.layers().len()), (2, 2, 1));
        let joined: Vec<Layer> = [h, b, t].into_iter().flat_map(ModelSegment::into_layers).collect();
        assert_eq!(joined, layers);
    }

    #[test]
    fn invalid_cuts_rejected() {
        let layers = build_model(&ArchConfig::mlp(8, 2), 0).unwrap();
        for (c1, c2) in [(0, 3), (3, 3), (4, 2), (2, 7), (2, 9)] {
            let spec = SplitSpec::UShaped { cut1: c1, cut2: c2 };
            assert!(partition(layers.clone(), spec, adam()).is_err(), "{c1},{c2}");
        }
        assert!(partition(layers, SplitSpec::Unsplit, adam()).is_err());
    }

    #[test]
    fn empty_segment_is_identity() {
        let mut seg = ModelSegment::new(SegmentRole::Body, Vec::new(), adam());
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (y, ctx) = seg.forward(&x).unwrap();
        assert_eq!(y, x);
        assert_eq!(seg.backward(&ctx, &x).unwrap(), x);
        assert!(seg.flat_grads().is_empty());
    }

    #[test]
    fn tinycnn_head_flops_by_hand() {
        let arch = ArchConfig::default();
        let (head, body, tail) =
            partition(build_model(&arch, 0).unwrap(), arch.default_split(), adam()).unwrap();
        let conv = 2 * 2 * 2 * 3 * 24 * 16 * 16;
        assert_eq!(head.flop_count(&[3, 32, 32]).unwrap(), conv);
        let body_flops = 2 * 1536 * 64 + 2 * 64 * 64;
        assert_eq!(body.flop_count(&[1536]).unwrap(), body_flops);
        assert_eq!(tail.flop_count(&[64]).unwrap(), 2 * 64 * 10);
    }

    #[test]
    fn step_updates_and_clears_grads() {
        let arch = ArchConfig::mlp(6, 2);
        let mut seg = ModelSegment::new(SegmentRole::Full, build_model(&arch, 0).unwrap(), adam());
        let before = seg.param_hash();
        let x = Tensor::new(vec![1, 6], vec![0.5; 6]).unwrap();
        let (y, ctx) = seg.forward(&x).unwrap();
        seg.backward(&ctx, &y).unwrap();
        assert!(seg.flat_grads().iter().any(|&g| g != 0.0));
        seg.step().unwrap();
        assert_ne!(seg.param_hash(), before);
        assert!(seg.flat_grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn flat_params_round_trip() {
        let arch = ArchConfig::mlp(6, 3);
        let mut seg = ModelSegment::new(SegmentRole::Full, build_model(&arch, 0).unwrap(), adam());
        let mut p = seg.flat_params();
        p.iter_mut().for_each(|v| *v *= 2.0);
        seg.set_flat_params(&p).unwrap();
        assert_eq!(seg.flat_params(), p);
        assert!(seg.set_flat_params(&p[1..]).is_err());
    }
}
