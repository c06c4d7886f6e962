//! Run configuration, parsed from TOML. Every field has a default so a
//! config file only needs the keys it changes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, SnrSchedule};
use crate::codec::{Cr, PretrainConfig};
use crate::error::{Result, SimError};
use crate::model::{ArchConfig, SplitSpec};
use crate::nsm::{NsmPolicy, NsmRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Centralized,
    Local,
    Fl,
    Sfl,
    Usfl,
    Scusfl,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Centralized,
        Regime::Local,
        Regime::Fl,
        Regime::Sfl,
        Regime::Usfl,
        Regime::Scusfl,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Centralized => "centralized",
            Regime::Local => "local",
            Regime::Fl => "fl",
            Regime::Sfl => "sfl",
            Regime::Usfl => "usfl",
            Regime::Scusfl => "scusfl",
        }
    }

    /// Head/body/tail placement with the body on the server.
    pub fn is_u_shaped(&self) -> bool {
        matches!(self, Regime::Usfl | Regime::Scusfl)
    }

    /// Any regime that exchanges activations with the server.
    pub fn is_split(&self) -> bool {
        matches!(self, Regime::Sfl | Regime::Usfl | Regime::Scusfl)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| SimError::config("regime", format!("unknown regime `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Cifar10,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Iid,
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// CIFAR-10 directory; the CLI falls back to `SIMCTL_DATA_DIR`.
    pub dir: Option<PathBuf>,
    pub train_size: usize,
    pub test_size: usize,
    /// Class-mean distance for synthetic data.
    pub separation: f64,
    pub partition: Partition,
    pub dirichlet_alpha: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Cifar10,
            dir: None,
            train_size: 2000,
            test_size: 1000,
            separation: 10.0,
            partition: Partition::Iid,
            dirichlet_alpha: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub model: ChannelModel,
    /// A constant in dB (`inf` means noiseless) or `[[round, db], ...]`.
    pub snr_db: SnrSchedule,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            model: ChannelModel::Awgn,
            snr_db: SnrSchedule::Constant(10.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NsmMode {
    Adaptive,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NsmConfig {
    pub mode: NsmMode,
    /// Ratio used in fixed mode.
    pub cr: Cr,
    /// Adaptive table; empty selects the built-in thresholds.
    pub table: Vec<NsmRule>,
    pub fallback: Option<Cr>,
}

impl Default for NsmConfig {
    fn default() -> Self {
        NsmConfig {
            mode: NsmMode::Adaptive,
            cr: Cr::standard_set()[0],
            table: Vec::new(),
            fallback: None,
        }
    }
}

impl NsmConfig {
    pub fn fixed(cr: Cr) -> Self {
        NsmConfig {
            mode: NsmMode::Fixed,
            cr,
            ..NsmConfig::default()
        }
    }

    pub fn policy(&self) -> Result<NsmPolicy> {
        match self.mode {
            NsmMode::Fixed => Ok(NsmPolicy::fixed(self.cr)),
            NsmMode::Adaptive if self.table.is_empty() && self.fallback.is_none() => {
                Ok(NsmPolicy::default())
            }
            NsmMode::Adaptive => {
                let fallback = self
                    .fallback
                    .ok_or_else(|| SimError::config("nsm.fallback", "required with a custom table"))?;
                NsmPolicy::new(self.table.clone(), fallback)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecSource {
    /// Warm up a copy of the model, then pretrain one codec per ratio.
    Pretrain,
    /// Identity encoder/decoder; requires a fixed policy at cr = 1.
    Identity,
    /// Load `codec_{num}_{den}.bin` files from `codec.dir`.
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub source: CodecSource,
    pub dir: Option<PathBuf>,
    pub warmup_epochs: usize,
    /// Cap on the number of training samples whose features feed pretraining.
    pub max_samples: usize,
    pub pretrain: PretrainConfig,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            source: CodecSource::Pretrain,
            dir: None,
            warmup_epochs: 1,
            max_samples: 2000,
            pretrain: PretrainConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    /// `bandwidth_hz` is the total, split equally among clients.
    Shared,
    /// Every client gets `bandwidth_hz`.
    PerClient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    pub bandwidth_hz: f64,
    pub bandwidth_mode: BandwidthMode,
    pub device_flops: f64,
    pub server_flops: f64,
    pub bytes_per_symbol: u64,
    /// Forward plus backward cost as a multiple of forward FLOPs.
    pub training_flop_multiplier: f64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            bandwidth_hz: 1e6,
            bandwidth_mode: BandwidthMode::Shared,
            device_flops: 1e10,
            server_flops: 1e12,
            bytes_per_symbol: 4,
            training_flop_multiplier: 3.0,
        }
    }
}

impl LatencyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latency.bandwidth_hz", self.bandwidth_hz),
            ("latency.device_flops", self.device_flops),
            ("latency.server_flops", self.server_flops),
            ("latency.training_flop_multiplier", self.training_flop_multiplier),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::config(key, format!("must be positive and finite, got {v}")));
            }
        }
        if self.bytes_per_symbol == 0 {
            return Err(SimError::config("latency.bytes_per_symbol", "must be positive"));
        }
        Ok(())
    }

    pub fn client_bandwidth(&self, num_clients: usize) -> f64 {
        match self.bandwidth_mode {
            BandwidthMode::Shared => self.bandwidth_hz / num_clients as f64,
            BandwidthMode::PerClient => self.bandwidth_hz,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub cut1: usize,
    pub cut2: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub regime: Regime,
    pub num_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Seconds; rounds at or under it count as successful.
    pub deadline_s: f64,
    /// Run clients on the rayon pool. Results do not depend on it.
    pub parallel: bool,
    pub arch: ArchConfig,
    /// Overrides the preset's default cut points.
    pub split: Option<SplitConfig>,
    pub data: DataConfig,
    pub channel: ChannelConfig,
    pub nsm: NsmConfig,
    pub codec: CodecConfig,
    pub latency: LatencyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            regime: Regime::Scusfl,
            num_clients: 4,
            rounds: 200,
            local_epochs: 3,
            batch_size: 64,
            lr: 1e-4,
            seed: 0,
            deadline_s: f64::INFINITY,
            parallel: true,
            arch: ArchConfig::default(),
            split: None,
            data: DataConfig::default(),
            channel: ChannelConfig::default(),
            nsm: NsmConfig::default(),
            codec: CodecConfig::default(),
            latency: LatencyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| SimError::config(toml_key(s, &e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn split_spec(&self) -> SplitSpec {
        match self.split {
            Some(s) => SplitSpec::UShaped {
                cut1: s.cut1,
                cut2: s.cut2,
            },
            None => self.arch.default_split(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_clients", self.num_clients),
            ("rounds", self.rounds),
            ("local_epochs", self.local_epochs),
            ("batch_size", self.batch_size),
            ("data.train_size", self.data.train_size),
            ("data.test_size", self.data.test_size),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(SimError::config(key, "must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SimError::config("lr", format!("must be positive, got {}", self.lr)));
        }
        if self.deadline_s.is_nan() || self.deadline_s < 0.0 {
            return Err(SimError::config("deadline_s", "must be >= 0"));
        }
        if self.regime == Regime::Centralized && self.num_clients != 1 {
            return Err(SimError::config("num_clients", "centralized training uses exactly 1 client"));
        }
        if self.num_clients > self.data.train_size {
            return Err(SimError::config("num_clients", "more clients than training samples"));
        }
        if self.data.partition == Partition::Dirichlet && !(self.data.dirichlet_alpha > 0.0) {
            return Err(SimError::config("data.dirichlet_alpha", "must be positive"));
        }
        if self.data.separation.is_nan() || self.data.separation < 0.0 {
            return Err(SimError::config("data.separation", "must be >= 0"));
        }
        self.arch.validate()?;
        let layers = crate::model::build_model(&self.arch, 0)?.len();
        self.split_spec()
            .validate(layers)
            .map_err(|e| SimError::config("split", e.to_string()))?;
        self.channel.snr_db.validate()?;
        let policy = self.nsm.policy()?;
        for cr in policy.ratios() {
            cr.latent_dim(self.arch.feature_dim)
                .map_err(|e| SimError::config("nsm", e.to_string()))?;
        }
        if self.regime == Regime::Scusfl {
            match self.codec.source {
                CodecSource::Identity if policy.ratios() != [Cr::ONE] => {
                    return Err(SimError::config(
                        "codec.source",
                        "the identity codec needs a fixed policy with cr = 1",
                    ));
                }
                CodecSource::Checkpoint if self.codec.dir.is_none() => {
                    return Err(SimError::config("codec.dir", "required for checkpoint codecs"));
                }
                _ => {}
            }
        }
        let p = &self.codec.pretrain;
        if p.epochs == 0 || p.batch_size == 0 || !(p.lr > 0.0) {
            return Err(SimError::config("codec.pretrain", "epochs, batch_size and lr must be positive"));
        }
        if p.train_snr_db.is_nan() {
            return Err(SimError::config("codec.pretrain.train_snr_db", "must be a number"));
        }
        self.latency.validate()
    }
}

/// Dotted key path (`table.key`) of the line a TOML error points at.
fn toml_key(src: &str, e: &toml::de::Error) -> String {
    let Some(span) = e.span() else {
        return "<root>".to_string();
    };
    let before = &src[..span.start.min(src.len())];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = src[line_start..].lines().next().unwrap_or("");
    let key = line.split('=').next().unwrap_or("").trim();
    let table = before[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim());
    match (table, key.is_empty() || key.starts_with('[')) {
        (_, true) => table.unwrap_or("<root>").to_string(),
        (Some(t), false) => format!("{t}.{key}"),
        (None, false) => key.to_string(),
    }
}
