//! Semantic communication module: per-compression-ratio encoder/decoder
//! pairs that map head features to unit-power analog symbols and back.
//!
//! A codec is pretrained as an autoencoder through a simulated AWGN channel,
//! then frozen. During split training the frozen codec only passes gradients
//! through (decoder, then a straight-through channel, then encoder); its
//! parameters never change and no codec gradient is ever transmitted.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::channel::{self, ChannelModel, ChannelRealization};
use crate::error::{Result, SimError};
use crate::model::{ModelSegment, SegmentContext, SegmentRole};
use crate::rng;
use crate::tensor::{AdamConfig, Layer, Tensor};

/// PSNR reported for an exact reconstruction.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Compression ratio: transmitted symbols per feature element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cr {
    num: u32,
    den: u32,
}

impl Cr {
    pub const ONE: Cr = Cr { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(SimError::Codec(format!("invalid compression ratio {num}/{den}")));
        }
        let g = gcd(num, den);
        Ok(Cr {
            num: num / g,
            den: den / g,
        })
    }

    /// The four ratios of the evaluation protocol, mildest first.
    pub fn standard_set() -> [Cr; 4] {
        [
            Cr { num: 1, den: 3 },
            Cr { num: 1, den: 6 },
            Cr { num: 1, den: 8 },
            Cr { num: 1, den: 12 },
        ]
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    /// `d * cr`, which must be an integer.
    pub fn latent_dim(&self, d: usize) -> Result<usize> {
        let scaled = d * self.num as usize;
        if scaled % self.den as usize != 0 {
            return Err(SimError::Codec(format!(
                "feature dimension {d} times {self} is not an integer"
            )));
        }
        Ok(scaled / self.den as usize)
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl PartialOrd for Cr {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cr {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.num as u64 * other.den as u64).cmp(&(other.num as u64 * self.den as u64))
    }
}

impl fmt::Display for Cr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Cr {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SimError::Codec(format!("cannot parse compression ratio `{s}`"));
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => Cr::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            ),
            None => Cr::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

impl Serialize for Cr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `s = sqrt(k) x / ||x||`, so `mean(s^2) = 1`. Also returns the scale
/// `||x|| / sqrt(k)` that undoes the normalization on the receiving side.
/// A zero vector maps to all-ones symbols with scale 0.
pub fn power_normalize(x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if x.is_empty() || !norm.is_finite() {
        return Err(SimError::Codec(format!("cannot power-normalize a vector of norm {norm}")));
    }
    if norm == 0.0 {
        return Ok((vec![1.0; x.len()], 0.0));
    }
    let k = x.len() as f64;
    let g = k.sqrt() / norm;
    Ok((x.iter().map(|v| v * g).collect(), norm / k.sqrt()))
}

/// `10 log10(peak^2 / MSE)` with `peak = max |original|`. Capped at
/// [`PSNR_CAP_DB`] (which also covers MSE = 0) and floored at its negative.
pub fn psnr(original: &Tensor, reconstructed: &Tensor) -> Result<f64> {
    if original.shape() != reconstructed.shape() {
        return Err(SimError::Shape {
            layer: "psnr",
            expected: original.shape().to_vec(),
            got: reconstructed.shape().to_vec(),
        });
    }
    Ok(psnr_slices(original.values(), reconstructed.values()))
}

pub(crate) fn psnr_slices(original: &[f64], reconstructed: &[f64]) -> f64 {
    let peak = original.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mse = original
        .iter()
        .zip(reconstructed)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / original.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).clamp(-PSNR_CAP_DB, PSNR_CAP_DB)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodecArch {
    /// Identity encoder and decoder; only valid at `cr = 1`.
    Identity,
    /// `dense(d->h) relu dense(h->k)` / `dense(k->h) relu dense(h->d)`.
    Mlp { hidden: usize },
}

impl fmt::Display for CodecArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecArch::Identity => write!(f, "identity"),
            CodecArch::Mlp { hidden } => write!(f, "mlp:hidden={hidden}"),
        }
    }
}

impl FromStr for CodecArch {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "identity" {
            return Ok(CodecArch::Identity);
        }
        s.strip_prefix("mlp:hidden=")
            .and_then(|h| h.parse().ok())
            .filter(|&h| h > 0)
            .map(|hidden| CodecArch::Mlp { hidden })
            .ok_or_else(|| SimError::Codec(format!("unknown codec architecture `{s}`")))
    }
}

#[derive(Clone, Debug)]
pub struct SemanticCodec {
    cr: Cr,
    d: usize,
    k: usize,
    arch: CodecArch,
    encoder: ModelSegment,
    decoder: ModelSegment,
    frozen: bool,
    train_snr_db: f64,
}

/// Encoder output for a batch: `[N, k]` unit-power symbol rows, one
/// de-normalization scale per row, and the encoder's backward context.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub symbols: Tensor,
    pub scales: Vec<f64>,
    pub context: SegmentContext,
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub features: Tensor,
    pub context: SegmentContext,
}

fn as_batch(t: &Tensor, width: usize, what: &'static str) -> Result<Tensor> {
    match t.shape() {
        [w] if *w == width => t.clone().reshape(vec![1, width]),
        [_, w] if *w == width => Ok(t.clone()),
        s => Err(SimError::Shape {
            layer: what,
            expected: vec![width],
            got: s.to_vec(),
        }),
    }
}

impl SemanticCodec {
    /// Unfrozen codec with freshly initialized weights from the streams
    /// `codec/{cr}/{encoder|decoder}/{layer}`.
    pub fn new(d: usize, cr: Cr, arch: CodecArch, train_snr_db: f64, seed: u64) -> Result<Self> {
        let k = cr.latent_dim(d)?;
        let adam = AdamConfig::default();
        let stream = |part: &str, i: usize| rng::stream(seed, &format!("codec/{cr}/{part}/{i}"));
        let (enc, dec) = match arch {
            CodecArch::Identity => {
                if k != d {
                    return Err(SimError::Codec("identity codec requires cr = 1".into()));
                }
                (vec![Layer::dense_identity(d)], vec![Layer::dense_identity(d)])
            }
            CodecArch::Mlp { hidden } => (
                vec![
                    Layer::dense(d, hidden, &mut stream("encoder", 0)),
                    Layer::relu(),
                    Layer::dense(hidden, k, &mut stream("encoder", 2)),
                ],
                vec![
                    Layer::dense(k, hidden, &mut stream("decoder", 0)),
                    Layer::relu(),
                    Layer::dense(hidden, d, &mut stream("decoder", 2)),
                ],
            ),
        };
        Ok(SemanticCodec {
            cr,
            d,
            k,
            arch,
            encoder: ModelSegment::new(SegmentRole::Full, enc, adam),
            decoder: ModelSegment::new(SegmentRole::Full, dec, adam),
            frozen: false,
            train_snr_db,
        })
    }

    /// Frozen identity codec at `cr = 1`.
    pub fn identity(d: usize) -> Self {
        let mut c = SemanticCodec::new(d, Cr::ONE, CodecArch::Identity, f64::INFINITY, 0)
            .expect("identity codec");
        c.frozen = true;
        c
    }

    pub fn cr(&self) -> Cr {
        self.cr
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn latent_dim(&self) -> usize {
        self.k
    }

    pub fn arch(&self) -> CodecArch {
        self.arch
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn train_snr_db(&self) -> f64 {
        self.train_snr_db
    }

    pub fn encoder_flops(&self) -> u64 {
        self.encoder.flop_count(&[self.d]).unwrap_or(0)
    }

    pub fn decoder_flops(&self) -> u64 {
        self.decoder.flop_count(&[self.k]).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    fn param_block(&self) -> Vec<f64> {
        let mut p = self.encoder.flat_params();
        p.extend(self.decoder.flat_params());
        p
    }

    fn block_digest(params: &[f64]) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in params {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    /// SHA-256 of the encoder then decoder parameters, hex encoded.
    pub fn param_hash(&self) -> String {
        hex::encode(Self::block_digest(&self.param_block()))
    }

    /// Features `[N, d]` (or a single `[d]`) to power-normalized symbols `[N, k]`.
    pub fn sc_encode(&self, features: &Tensor) -> Result<Encoded> {
        let x = as_batch(features, self.d, "sc_encode")?;
        let (z, context) = self.encoder.forward(&x)?;
        let n = z.batch();
        let mut symbols = Vec::with_capacity(n * self.k);
        let mut scales = Vec::with_capacity(n);
        for i in 0..n {
            let (s, scale) = power_normalize(z.sample(i))?;
            symbols.extend(s);
            scales.push(scale);
        }
        Ok(Encoded {
            symbols: Tensor::new(vec![n, self.k], symbols)?,
            scales,
            context,
        })
    }

    /// Received symbols `[N, k]` and their row scales back to features `[N, d]`.
    pub fn sc_decode(&self, received: &Tensor, scales: &[f64]) -> Result<Decoded> {
        let y = as_batch(received, self.k, "sc_decode")?;
        if scales.len() != y.batch() {
            return Err(SimError::Codec(format!(
                "{} scales for {} symbol rows",
                scales.len(),
                y.batch()
            )));
        }
        let mut u = y;
        let k = self.k;
        for (row, s) in u.values_mut().chunks_exact_mut(k).zip(scales) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        let (features, context) = self.decoder.forward(&u)?;
        Ok(Decoded { features, context })
    }

    /// Gradient with respect to the encoder input, given the gradient with
    /// respect to the decoder output. The channel and the power
    /// normalization are crossed straight-through. Parameters are untouched.
    pub fn codec_backward(
        &self,
        encoded: &SegmentContext,
        decoded: &SegmentContext,
        grad_recon: &Tensor,
    ) -> Result<Tensor> {
        if !self.frozen {
            return Err(SimError::Codec(
                "codec_backward requires a frozen codec".into(),
            ));
        }
        let g = self.decoder.backward_input(decoded, grad_recon)?;
        self.encoder.backward_input(encoded, &g)
    }

    /// Encode, pass every row through `channel`, decode.
    pub fn roundtrip<F>(&self, features: &Tensor, mut channel: F) -> Result<(Encoded, Decoded)>
    where
        F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
    {
        let enc = self.sc_encode(features)?;
        let n = enc.symbols.batch();
        let mut rx = Vec::with_capacity(n * self.k);
        for i in 0..n {
            rx.extend(channel(i, enc.symbols.sample(i))?);
        }
        let rx = Tensor::new(vec![n, self.k], rx)?;
        let dec = self.sc_decode(&rx, &enc.scales)?;
        Ok((enc, dec))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.param_block();
        let arch = self.arch.to_string();
        let mut out = Vec::with_capacity(64 + arch.len() + params.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.cr.num.to_le_bytes());
        out.extend_from_slice(&self.cr.den.to_le_bytes());
        out.extend_from_slice(&(self.d as u64).to_le_bytes());
        out.extend_from_slice(&self.train_snr_db.to_le_bytes());
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        out.extend_from_slice(arch.as_bytes());
        out.extend_from_slice(&Self::block_digest(&params));
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for v in &params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a checkpoint, verifies the parameter hash, and returns the
    /// codec frozen.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(r.err("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err(&format!("unsupported checkpoint version {version}")));
        }
        let (num, den) = (r.u32()?, r.u32()?);
        let cr = Cr::new(num, den).map_err(|e| r.err(&e.to_string()))?;
        let d = r.u64()? as usize;
        let snr = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let arch_len = r.u32()? as usize;
        let arch_str = std::str::from_utf8(r.take(arch_len)?).map_err(|_| r.err("arch not utf-8"))?;
        let arch: CodecArch = arch_str.parse()?;
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let count = r.u64()? as usize;
        let block = r.take(count.checked_mul(8).ok_or_else(|| r.err("parameter count overflow"))?)?;
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after parameter block"));
        }
        let params: Vec<f64> = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if Self::block_digest(&params) != digest {
            return Err(SimError::Codec("checkpoint parameter hash mismatch".into()));
        }
        let mut codec = SemanticCodec::new(d, cr, arch, snr, 0)?;
        if codec.param_count() != count {
            return Err(SimError::Codec(format!(
                "checkpoint holds {count} parameters, architecture needs {}",
                codec.param_count()
            )));
        }
        let split = codec.encoder.param_count();
        codec.encoder.set_flat_params(&params[..split])?;
        codec.decoder.set_flat_params(&params[split..])?;
        codec.frozen = true;
        Ok(codec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| SimError::Checkpoint {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| SimError::Checkpoint {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        SemanticCodec::from_bytes(&bytes).map_err(|e| SimError::Checkpoint {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SCMCODEC";
const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn err(&self, msg: &str) -> SimError {
        SimError::Format {
            offset: self.pos as u64,
            msg: msg.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub train_snr_db: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Hidden width on both sides; defaults to the latent size `k`.
    pub hidden: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            train_snr_db: 10.0,
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            hidden: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub codec: SemanticCodec,
    /// Mean reconstruction MSE of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains an encoder/decoder pair on equal-length feature vectors to
/// minimize the reconstruction MSE through normalize -> AWGN -> equalize ->
/// decode, then freezes it.
pub fn pretrain_codec(features: &[Vec<f64>], cr: Cr, cfg: &PretrainConfig, seed: u64) -> Result<Pretrained> {
    let Some(first) = features.first() else {
        return Err(SimError::Codec("empty pretraining feature set".into()));
    };
    let (m, d) = (features.len(), first.len());
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(SimError::Codec("pretraining features must share one positive length".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(SimError::config("codec", "epochs and batch_size must be positive"));
    }
    let k = cr.latent_dim(d)?;
    let hidden = cfg.hidden.unwrap_or(k);
    let mut codec = SemanticCodec::new(d, cr, CodecArch::Mlp { hidden }, cfg.train_snr_db, seed)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    codec.encoder = ModelSegment::new(SegmentRole::Full, codec.encoder.into_layers(), adam);
    codec.decoder = ModelSegment::new(SegmentRole::Full, codec.decoder.into_layers(), adam);

    let mut shuffle = rng::stream(seed, &format!("codec/{cr}/shuffle"));
    let mut noise = rng::stream(seed, &format!("codec/{cr}/noise"));
    let link = ChannelRealization {
        model: ChannelModel::Awgn,
        snr_db: cfg.train_snr_db,
        h: 1.0,
        noise_seed: 0,
    };
    let mut order: Vec<usize> = (0..m).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut xs = Vec::with_capacity(batch.len() * d);
            for &i in batch {
                xs.extend_from_slice(&features[i]);
            }
            let x = Tensor::new(vec![batch.len(), d], xs)?;
            let (enc, dec) = codec.roundtrip(&x, |_, s| {
                let y = channel::transmit_with(s, &link, &mut noise)?;
                Ok(channel::equalize(&y, &link))
            })?;
            let n = x.len() as f64;
            let mut grad = Vec::with_capacity(x.len());
            let mut sq = 0.0;
            for (a, b) in dec.features.values().iter().zip(x.values()) {
                sq += (a - b).powi(2);
                grad.push(2.0 * (a - b) / n);
            }
            total += sq / n * batch.len() as f64;
            let grad = Tensor::new(x.shape().to_vec(), grad)?;
            let g_latent = codec.decoder.backward(&dec.context, &grad)?;
            codec.encoder.backward(&enc.context, &g_latent)?;
            codec.decoder.step()?;
            codec.encoder.step()?;
        }
        epoch_losses.push(total / m as f64);
    }
    codec.frozen = true;
    Ok(Pretrained { codec, epoch_losses })
}

/// Frozen codecs keyed by compression ratio, shared by all clients.
#[derive(Clone, Debug, Default)]
pub struct CodecSet {
    codecs: BTreeMap<Cr, SemanticCodec>,
}

impl CodecSet {
    pub fn new() -> Self {
        CodecSet::default()
    }

    pub fn insert(&mut self, codec: SemanticCodec) -> Result<()> {
        if !codec.is_frozen() {
            return Err(SimError::Codec("only frozen codecs can be deployed".into()));
        }
        self.codecs.insert(codec.cr(), codec);
        Ok(())
    }

    pub fn get(&self, cr: Cr) -> Result<&SemanticCodec> {
        self.codecs
            .get(&cr)
            .ok_or_else(|| SimError::Codec(format!("no pretrained codec for cr = {cr}")))
    }

    pub fn contains(&self, cr: Cr) -> bool {
        self.codecs.contains_key(&cr)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SemanticCodec> {
        self.codecs.values()
    }

    pub fn is_empty(&self) -> bool {
        self.codecs.is_empty()
    }

    /// Hash over every codec's parameter hash, in ratio order.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in self.codecs.values() {
            h.update(c.cr().to_string());
            h.update(c.param_hash());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cr_parse_and_order() {
        let set = Cr::standard_set();
        assert_eq!(set.map(|c| c.to_string()), ["1/3", "1/6", "1/8", "1/12"]);
        assert!(set.windows(2).all(|w| w[0] > w[1]));
        assert_eq!("2/6".parse::<Cr>().unwrap(), "1/3".parse().unwrap());
        assert_eq!("1".parse::<Cr>().unwrap(), Cr::ONE);
        assert!("3/2".parse::<Cr>().is_err());
        assert!("x".parse::<Cr>().is_err());
    }

    #[test]
    fn latent_sizes() {
        let third: Cr = "1/3".parse().unwrap();
        let twelfth: Cr = "1/12".parse().unwrap();
        assert_eq!(twelfth.latent_dim(3072).unwrap(), 256);
        assert_eq!(third.latent_dim(1536).unwrap(), 512);
        for cr in Cr::standard_set() {
            assert!(cr.latent_dim(24).is_ok());
        }
        assert!(twelfth.latent_dim(30).is_err());
    }

    #[test]
    fn power_normalize_examples() {
        let (s, scale) = power_normalize(&[3.0, 4.0]).unwrap();
        assert!((s[0] - 0.848_528_137).abs() < 1e-6);
        assert!((s[1] - 1.131_370_849).abs() < 1e-6);
        assert!((channel::mean_square(&s) - 1.0).abs() < 1e-12);
        assert!((scale - 5.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(power_normalize(&[2.0, 2.0]).unwrap().0, vec![1.0, 1.0]);
        assert_eq!(power_normalize(&[0.0, 0.0]).unwrap(), (vec![1.0, 1.0], 0.0));
        assert!(power_normalize(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Tensor::vector(vec![1.0, 0.0, -0.5, 0.2]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let orig = Tensor::vector(vec![1.0, 0.0]);
        let off = |e: f64| Tensor::vector(vec![1.0 + e, e]);
        assert!((psnr(&orig, &off(0.1)).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&orig, &off(1.0)).unwrap().abs() < 1e-9);
        assert!(psnr(&orig, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn identity_codec_round_trip() {
        let c = SemanticCodec::identity(24);
        let x = Tensor::new(vec![2, 24], (0..48).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let enc = c.sc_encode(&x).unwrap();
        for i in 0..2 {
            let (s, _) = power_normalize(x.sample(i)).unwrap();
            assert_eq!(enc.symbols.sample(i), s.as_slice());
        }
        let dec = c.sc_decode(&enc.symbols, &enc.scales).unwrap();
        for (a, b) in dec.features.values().iter().zip(x.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = Tensor::new(vec![2, 24], (0..48).map(|i| i as f64 - 3.0).collect()).unwrap();
        assert_eq!(c.codec_backward(&enc.context, &dec.context, &g).unwrap(), g);
    }

    #[test]
    fn dimension_mismatch() {
        let c = SemanticCodec::identity(24);
        assert!(c.sc_encode(&Tensor::zeros(vec![1, 12])).is_err());
        assert!(c.sc_decode(&Tensor::zeros(vec![1, 12]), &[1.0]).is_err());
        assert!(c.sc_decode(&Tensor::zeros(vec![2, 24]), &[1.0]).is_err());
    }

    #[test]
    fn unfrozen_backward_rejected() {
        let c = SemanticCodec::new(24, "1/3".parse().unwrap(), CodecArch::Mlp { hidden: 8 }, 10.0, 1).unwrap();
        let x = Tensor::new(vec![1, 24], vec![0.5; 24]).unwrap();
        let (enc, dec) = c.roundtrip(&x, |_, s| Ok(s.to_vec())).unwrap();
        assert!(c.codec_backward(&enc.context, &dec.context, &dec.features).is_err());
    }

    #[test]
    fn deterministic_decode() {
        let mut c = SemanticCodec::new(48, "1/6".parse().unwrap(), CodecArch::Mlp { hidden: 16 }, 10.0, 4).unwrap();
        c.freeze();
        let x = Tensor::new(vec![3, 48], (0..144).map(|i| (i as f64).cos()).collect()).unwrap();
        let a = c.roundtrip(&x, |_, s| Ok(s.to_vec())).unwrap().1.features;
        let b = c.roundtrip(&x, |_, s| Ok(s.to_vec())).unwrap().1.features;
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_and_tamper() {
        let mut c = SemanticCodec::new(48, "1/8".parse().unwrap(), CodecArch::Mlp { hidden: 12 }, 7.5, 2).unwrap();
        c.freeze();
        let bytes = c.to_bytes();
        let back = SemanticCodec::from_bytes(&bytes).unwrap();
        assert_eq!(back.param_hash(), c.param_hash());
        assert_eq!(back.cr(), c.cr());
        assert_eq!(back.train_snr_db(), 7.5);
        assert!(back.is_frozen());

        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 1;
        assert!(matches!(SemanticCodec::from_bytes(&bad), Err(SimError::Codec(_))));
        assert!(SemanticCodec::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(SemanticCodec::from_bytes(&bad_magic).is_err());
    }

    #[test]
    fn pretraining_rejects_empty_input() {
        assert!(pretrain_codec(&[], Cr::ONE, &PretrainConfig::default(), 0).is_err());
        let ragged = vec![vec![1.0; 24], vec![1.0; 12]];
        assert!(pretrain_codec(&ragged, Cr::ONE, &PretrainConfig::default(), 0).is_err());
    }
}
