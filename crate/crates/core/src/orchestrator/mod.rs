//! Communication rounds for every regime: per-batch routing between client
//! and server segments, FedAvg, byte accounting and round latency.

pub mod config;
pub mod latency;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::channel::{self, ChannelRealization, ChannelTrace, Direction};
use crate::codec::{pretrain_codec, CodecSet, Cr, SemanticCodec};
use crate::data::{shard_dirichlet, shard_iid, Dataset};
use crate::error::{Result, SimError};
use crate::metrics::{evaluate, EvalPath, EvalResult, RoundRecord};
use crate::model::{build_model, partition, ModelSegment, SegmentRole};
use crate::nsm::{self, NsmPolicy};
use crate::rng::{self, Stream};
use crate::tensor::{softmax_cross_entropy_batch, AdamConfig, Tensor};

pub use config::{
    BandwidthMode, ChannelConfig, CodecConfig, CodecSource, DataConfig, DataSource, LatencyConfig,
    NsmConfig, NsmMode, Partition, Regime, RunConfig, SplitConfig,
};
pub use latency::{round_latency, task_success, ClientLoad, Traffic};

/// Bytes per uploaded label in SFL.
pub const LABEL_BYTES: u64 = 1;

/// A payload crossing into server scope.
#[derive(Clone, Copy, Debug)]
pub enum Uplink<'a> {
    Features(&'a Tensor),
    Symbols(&'a Tensor),
    Labels(&'a [usize]),
    Gradient(&'a Tensor),
    Weights(&'a [f64]),
}

impl Uplink<'_> {
    pub fn kind(&self) -> &'static str {
        match self {
            Uplink::Features(_) => "features",
            Uplink::Symbols(_) => "symbols",
            Uplink::Labels(_) => "labels",
            Uplink::Gradient(_) => "gradient",
            Uplink::Weights(_) => "weights",
        }
    }
}

/// Observes every message the server receives. Called from client worker
/// threads, hence `Sync`.
pub trait ServerProbe: Sync {
    fn observe(&self, client: usize, msg: &Uplink<'_>);
}

pub struct NoProbe;

impl ServerProbe for NoProbe {
    fn observe(&self, _: usize, _: &Uplink<'_>) {}
}

pub struct ClientState {
    pub id: usize,
    pub head: ModelSegment,
    /// Client-resident body; only in regimes without a server body.
    pub body: Option<ModelSegment>,
    /// Empty in SFL, where the classifier lives on the server.
    pub tail: ModelSegment,
    pub shard: Vec<usize>,
    shuffle: Stream,
}

pub struct ServerState {
    regime: Regime,
    /// One body per client (body + classifier in SFL); empty otherwise.
    pub replicas: Vec<ModelSegment>,
    pub codecs: CodecSet,
}

impl ServerState {
    /// Entry point for anything a client sends. Labels are refused in the
    /// U-shaped regimes.
    pub fn receive(regime: Regime, probe: &dyn ServerProbe, client: usize, msg: Uplink<'_>) -> Result<()> {
        probe.observe(client, &msg);
        if regime.is_u_shaped() && matches!(msg, Uplink::Labels(_)) {
            return Err(SimError::LabelLeak { client });
        }
        Ok(())
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }
}

/// Sample-count-weighted mean, computed as `w_0 + sum_i (c_i / C)(w_i - w_0)`
/// so identical sets (and a single set) come back bit-for-bit.
pub fn fedavg(sets: &[Vec<f64>], counts: &[usize]) -> Result<Vec<f64>> {
    let Some(first) = sets.first() else {
        return Err(SimError::Aggregation("no weight sets".into()));
    };
    if sets.len() != counts.len() {
        return Err(SimError::Aggregation(format!(
            "{} weight sets but {} counts",
            sets.len(),
            counts.len()
        )));
    }
    if let Some(bad) = sets.iter().position(|s| s.len() != first.len()) {
        return Err(SimError::Aggregation(format!(
            "set {bad} has {} values, expected {}",
            sets[bad].len(),
            first.len()
        )));
    }
    if counts.contains(&0) {
        return Err(SimError::Aggregation("sample counts must be positive".into()));
    }
    let total: usize = counts.iter().sum();
    let mut out = first.clone();
    for (s, &c) in sets.iter().zip(counts).skip(1) {
        let w = c as f64 / total as f64;
        for ((o, v), base) in out.iter_mut().zip(s).zip(first) {
            *o += w * (v - base);
        }
    }
    Ok(out)
}

fn aggregate(segments: &mut [&mut ModelSegment], counts: &[usize]) -> Result<()> {
    let sets: Vec<Vec<f64>> = segments.iter().map(|s| s.flat_params()).collect();
    let avg = fedavg(&sets, counts)?;
    for s in segments.iter_mut() {
        s.set_flat_params(&avg)?;
    }
    Ok(())
}

/// Per-sample forward FLOPs of each segment, fixed for a run.
#[derive(Clone, Copy, Debug, Default)]
struct SegmentFlops {
    head: f64,
    body: f64,
    tail: f64,
}

#[derive(Debug, Default)]
struct ClientOutcome {
    loss_sum: f64,
    samples: usize,
    traffic: Traffic,
    device_flops: f64,
    server_flops: f64,
    crs: Vec<Cr>,
}

/// Uplink codec path of one client for one round (block fading: one
/// realization, one ratio).
struct SemanticLink<'a> {
    codec: &'a SemanticCodec,
    real: ChannelRealization,
    noise: Stream,
}

/// Training statistics of one round, before evaluation.
#[derive(Clone, Debug)]
pub struct RoundStats {
    pub train_loss: f64,
    pub traffic: Traffic,
    pub latency_s: f64,
    /// Batches sent at each ratio.
    pub cr_counts: BTreeMap<Cr, u64>,
}

pub struct Simulation<'a> {
    cfg: RunConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    clients: Vec<ClientState>,
    server: ServerState,
    trace: ChannelTrace,
    policy: NsmPolicy,
    flops: SegmentFlops,
}

impl<'a> Simulation<'a> {
    /// Every regime starts from the same initialization for a given seed.
    pub fn new(cfg: RunConfig, train: &'a Dataset, test: &'a Dataset, codecs: CodecSet) -> Result<Self> {
        cfg.validate()?;
        if train.sample_shape() != cfg.arch.input_shape.as_slice()
            || test.sample_shape() != train.sample_shape()
        {
            return Err(SimError::config(
                "arch.input_shape",
                format!(
                    "model expects {:?}, data has {:?}",
                    cfg.arch.input_shape,
                    train.sample_shape()
                ),
            ));
        }
        if train.num_classes() != cfg.arch.num_classes {
            return Err(SimError::config("arch.num_classes", "does not match the dataset"));
        }
        let policy = cfg.nsm.policy()?;
        if cfg.regime == Regime::Scusfl {
            for cr in policy.ratios() {
                let c = codecs.get(cr)?;
                if c.feature_dim() != cfg.arch.feature_dim {
                    return Err(SimError::Codec(format!(
                        "codec for cr = {cr} expects d = {}, model emits {}",
                        c.feature_dim(),
                        cfg.arch.feature_dim
                    )));
                }
            }
        }
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        let (head, body, tail) = partition(build_model(&cfg.arch, cfg.seed)?, cfg.split_spec(), adam)?;
        let flops = SegmentFlops {
            head: head.flop_count(&cfg.arch.input_shape)? as f64,
            body: body.flop_count(&[cfg.arch.feature_dim])? as f64,
            tail: tail.flop_count(&body.output_shape(&[cfg.arch.feature_dim])?)? as f64,
        };
        let shards = match cfg.data.partition {
            Partition::Iid => shard_iid(train.len(), cfg.num_clients, cfg.seed)?,
            Partition::Dirichlet => shard_dirichlet(
                train.labels(),
                train.num_classes(),
                cfg.num_clients,
                cfg.data.dirichlet_alpha,
                cfg.seed,
            )?,
        };
        let regime = cfg.regime;
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| ClientState {
                id,
                head: head.clone(),
                body: (!regime.is_split()).then(|| body.clone()),
                tail: if regime == Regime::Sfl {
                    ModelSegment::new(SegmentRole::Tail, Vec::new(), adam)
                } else {
                    tail.clone()
                },
                shard,
                shuffle: rng::stream(cfg.seed, &format!("client/{id}/shuffle")),
            })
            .collect();
        let replica = match regime {
            Regime::Sfl => Some(body.clone().concat(tail.clone(), SegmentRole::Body, adam)),
            Regime::Usfl | Regime::Scusfl => Some(body.clone()),
            _ => None,
        };
        let replicas = replica.map_or_else(Vec::new, |r| vec![r; cfg.num_clients]);
        let trace = ChannelTrace::generate(
            cfg.channel.model,
            &cfg.channel.snr_db,
            cfg.num_clients,
            cfg.rounds,
            cfg.seed,
        );
        Ok(Simulation {
            server: ServerState {
                regime,
                replicas,
                codecs,
            },
            cfg,
            train,
            test,
            clients,
            trace,
            policy,
            flops,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn trace(&self) -> &ChannelTrace {
        &self.trace
    }

    /// Head, body and tail of client `c`'s current model (the shared model
    /// after aggregation).
    pub fn model_of(&self, c: usize) -> (&ModelSegment, &ModelSegment, &ModelSegment) {
        let cl = &self.clients[c];
        let body = cl.body.as_ref().unwrap_or_else(|| &self.server.replicas[c]);
        (&cl.head, body, &cl.tail)
    }

    /// Trains one round and aggregates; no evaluation.
    pub fn train_round(&mut self, round: usize, probe: &dyn ServerProbe) -> Result<RoundStats> {
        if round >= self.cfg.rounds {
            return Err(SimError::MissingTrace { client: 0, round });
        }
        let cfg = &self.cfg;
        let train = self.train;
        let trace = &self.trace;
        let policy = &self.policy;
        let codecs = &self.server.codecs;
        let flops = self.flops;
        let regime = cfg.regime;
        let n = self.clients.len();

        let mut replicas: Vec<Option<&mut ModelSegment>> = if regime.is_split() {
            self.server.replicas.iter_mut().map(Some).collect()
        } else {
            (0..n).map(|_| None).collect()
        };
        let job = |(client, replica): (&mut ClientState, &mut Option<&mut ModelSegment>)| {
            train_client(client, replica.as_deref_mut(), cfg, train, trace, policy, codecs, flops, round, probe)
        };
        let outcomes: Vec<Result<ClientOutcome>> = if cfg.parallel {
            self.clients.par_iter_mut().zip(replicas.par_iter_mut()).map(job).collect()
        } else {
            self.clients.iter_mut().zip(replicas.iter_mut()).map(job).collect()
        };
        drop(replicas);
        let mut outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

        self.aggregate(&mut outcomes, probe)?;

        let mut traffic = Traffic::default();
        let mut cr_counts = BTreeMap::new();
        let (mut loss, mut samples) = (0.0, 0usize);
        let mut loads = Vec::with_capacity(n);
        for (c, o) in outcomes.iter().enumerate() {
            traffic.add(&o.traffic);
            loss += o.loss_sum;
            samples += o.samples;
            for cr in &o.crs {
                *cr_counts.entry(*cr).or_insert(0) += 1;
            }
            loads.push(ClientLoad {
                device_flops: o.device_flops,
                server_flops: o.server_flops,
                traffic: o.traffic,
                uplink: *self.trace.get(c, round, Direction::Uplink)?,
                downlink: *self.trace.get(c, round, Direction::Downlink)?,
            });
        }
        Ok(RoundStats {
            train_loss: loss / samples as f64,
            traffic,
            latency_s: round_latency(&loads, &self.cfg.latency),
            cr_counts,
        })
    }

    fn aggregate(&mut self, outcomes: &mut [ClientOutcome], probe: &dyn ServerProbe) -> Result<()> {
        let regime = self.cfg.regime;
        let bps = self.cfg.latency.bytes_per_symbol;
        let counts: Vec<usize> = self.clients.iter().map(|c| c.shard.len()).collect();
        match regime {
            Regime::Centralized | Regime::Local => return Ok(()),
            Regime::Fl => {
                for (c, o) in self.clients.iter().zip(outcomes.iter_mut()) {
                    let mut w = c.head.flat_params();
                    w.extend(c.body.as_ref().map(ModelSegment::flat_params).unwrap_or_default());
                    w.extend(c.tail.flat_params());
                    ServerState::receive(regime, probe, c.id, Uplink::Weights(&w))?;
                    o.traffic.uplink += w.len() as u64 * bps;
                    o.traffic.downlink += w.len() as u64 * bps;
                }
                let mut bodies: Vec<&mut ModelSegment> =
                    self.clients.iter_mut().filter_map(|c| c.body.as_mut()).collect();
                aggregate(&mut bodies, &counts)?;
            }
            Regime::Sfl | Regime::Usfl | Regime::Scusfl => {
                for (c, o) in self.clients.iter().zip(outcomes.iter_mut()) {
                    let mut w = c.head.flat_params();
                    w.extend(c.tail.flat_params());
                    ServerState::receive(regime, probe, c.id, Uplink::Weights(&w))?;
                    o.traffic.sync_up += w.len() as u64 * bps;
                    o.traffic.sync_down += w.len() as u64 * bps;
                }
                let mut bodies: Vec<&mut ModelSegment> = self.server.replicas.iter_mut().collect();
                aggregate(&mut bodies, &counts)?;
            }
        }
        let mut heads: Vec<&mut ModelSegment> = self.clients.iter_mut().map(|c| &mut c.head).collect();
        aggregate(&mut heads, &counts)?;
        let mut tails: Vec<&mut ModelSegment> = self.clients.iter_mut().map(|c| &mut c.tail).collect();
        aggregate(&mut tails, &counts)
    }

    /// Test-set metrics of the current model(s). Local training averages
    /// over the per-client models.
    pub fn evaluate(&self, round: usize) -> Result<EvalResult> {
        let cfg = &self.cfg;
        let path = match cfg.regime {
            Regime::Scusfl => EvalPath::Semantic {
                codecs: &self.server.codecs,
                policy: &self.policy,
                model: cfg.channel.model,
                snr_db: cfg.channel.snr_db.snr_at(round),
                seed: rng::stream_id(cfg.seed, &format!("eval/round/{round}")),
            },
            Regime::Sfl | Regime::Usfl => EvalPath::Lossless,
            _ => EvalPath::Direct,
        };
        if cfg.regime != Regime::Local {
            let (h, b, t) = self.model_of(0);
            return evaluate(h, b, t, self.test, &path);
        }
        let mut acc = EvalResult::default();
        for c in 0..self.clients.len() {
            let (h, b, t) = self.model_of(c);
            let r = evaluate(h, b, t, self.test, &path)?;
            acc.accuracy += r.accuracy;
            acc.task_loss += r.task_loss;
        }
        acc.accuracy /= self.clients.len() as f64;
        acc.task_loss /= self.clients.len() as f64;
        Ok(acc)
    }

    pub fn run_round(&mut self, round: usize, probe: &dyn ServerProbe) -> Result<RoundRecord> {
        let stats = self.train_round(round, probe)?;
        let eval = self.evaluate(round)?;
        Ok(RoundRecord::new(round, self.cfg.regime, &stats, &eval, self.cfg.deadline_s))
    }

    pub fn run(&mut self, probe: &dyn ServerProbe) -> Result<Vec<RoundRecord>> {
        (0..self.cfg.rounds).map(|r| self.run_round(r, probe)).collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn train_client(
    client: &mut ClientState,
    mut replica: Option<&mut ModelSegment>,
    cfg: &RunConfig,
    train: &Dataset,
    trace: &ChannelTrace,
    policy: &NsmPolicy,
    codecs: &CodecSet,
    flops: SegmentFlops,
    round: usize,
    probe: &dyn ServerProbe,
) -> Result<ClientOutcome> {
    let regime = cfg.regime;
    let bps = cfg.latency.bytes_per_symbol;
    let mut out = ClientOutcome::default();
    let mut link = if regime == Regime::Scusfl {
        let real = *trace.get(client.id, round, Direction::Uplink)?;
        let cr = policy.select_cr(nsm::observe(trace, client.id, round)?);
        Some(SemanticLink {
            codec: codecs.get(cr)?,
            real,
            noise: real.noise_stream(),
        })
    } else {
        None
    };
    let mut order = client.shard.clone();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut client.shuffle);
        for batch in order.chunks(cfg.batch_size) {
            let x = train.inputs_batch(batch)?;
            let labels = train.labels_batch(batch);
            let loss = match (regime, replica.as_deref_mut()) {
                (Regime::Usfl | Regime::Scusfl, Some(r)) => {
                    u_shaped_batch(client, r, link.as_mut(), &x, &labels, bps, regime, probe, &mut out)?
                }
                (Regime::Sfl, Some(r)) => sfl_batch(client, r, &x, &labels, bps, probe, &mut out)?,
                _ => local_batch(client, &x, &labels)?,
            };
            if let Some(l) = &link {
                out.crs.push(l.codec.cr());
            }
            out.loss_sum += loss * batch.len() as f64;
            out.samples += batch.len();
        }
    }
    let work = out.samples as f64 * cfg.latency.training_flop_multiplier;
    let (enc, dec) = link
        .as_ref()
        .map_or((0.0, 0.0), |l| (l.codec.encoder_flops() as f64, l.codec.decoder_flops() as f64));
    let f = flops;
    (out.device_flops, out.server_flops) = match regime {
        Regime::Centralized => (0.0, (f.head + f.body + f.tail) * work),
        Regime::Local | Regime::Fl => ((f.head + f.body + f.tail) * work, 0.0),
        Regime::Sfl => (f.head * work, (f.body + f.tail) * work),
        Regime::Usfl | Regime::Scusfl => ((f.head + enc + f.tail) * work, (f.body + dec) * work),
    };
    Ok(out)
}

fn local_batch(client: &mut ClientState, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let body = client
        .body
        .as_mut()
        .ok_or_else(|| SimError::config("regime", "client has no local body"))?;
    let (f, hctx) = client.head.forward(x)?;
    let (z, bctx) = body.forward(&f)?;
    let (logits, tctx) = client.tail.forward(&z)?;
    let (loss, g) = softmax_cross_entropy_batch(&logits, labels)?;
    let gz = client.tail.backward(&tctx, &g)?;
    let gf = body.backward(&bctx, &gz)?;
    client.head.backward(&hctx, &gf)?;
    client.head.step()?;
    body.step()?;
    client.tail.step()?;
    Ok(loss)
}

#[allow(clippy::too_many_arguments)]
fn u_shaped_batch(
    client: &mut ClientState,
    body: &mut ModelSegment,
    link: Option<&mut SemanticLink<'_>>,
    x: &Tensor,
    labels: &[usize],
    bps: u64,
    regime: Regime,
    probe: &dyn ServerProbe,
    out: &mut ClientOutcome,
) -> Result<f64> {
    let id = client.id;
    let (f, hctx) = client.head.forward(x)?;
    let n = f.batch();
    let mut codec_ctx = None;
    let f_hat = match link {
        Some(l) => {
            let enc = l.codec.sc_encode(&f)?;
            let k = l.codec.latent_dim();
            let mut rx = Vec::with_capacity(n * k);
            for i in 0..n {
                let y = channel::transmit_with(enc.symbols.sample(i), &l.real, &mut l.noise)?;
                rx.extend(channel::equalize(&y, &l.real));
            }
            let rx = Tensor::new(vec![n, k], rx)?;
            ServerState::receive(regime, probe, id, Uplink::Symbols(&rx))?;
            out.traffic.uplink += rx.len() as u64 * bps;
            let dec = l.codec.sc_decode(&rx, &enc.scales)?;
            codec_ctx = Some((l.codec, enc.context, dec.context));
            dec.features
        }
        None => {
            ServerState::receive(regime, probe, id, Uplink::Features(&f))?;
            out.traffic.uplink += f.len() as u64 * bps;
            f
        }
    };
    let (z, bctx) = body.forward(&f_hat)?;
    out.traffic.downlink += z.len() as u64 * bps;
    let (logits, tctx) = client.tail.forward(&z)?;
    let (loss, g) = softmax_cross_entropy_batch(&logits, labels)?;
    let gz = client.tail.backward(&tctx, &g)?;
    ServerState::receive(regime, probe, id, Uplink::Gradient(&gz))?;
    out.traffic.uplink_grad += gz.len() as u64 * bps;
    let g_hat = body.backward(&bctx, &gz)?;
    out.traffic.downlink_grad += g_hat.len() as u64 * bps;
    let gf = match codec_ctx {
        Some((codec, e, d)) => codec.codec_backward(&e, &d, &g_hat)?,
        None => g_hat,
    };
    client.head.backward(&hctx, &gf)?;
    client.head.step()?;
    body.step()?;
    client.tail.step()?;
    Ok(loss)
}

fn sfl_batch(
    client: &mut ClientState,
    server_model: &mut ModelSegment,
    x: &Tensor,
    labels: &[usize],
    bps: u64,
    probe: &dyn ServerProbe,
    out: &mut ClientOutcome,
) -> Result<f64> {
    let id = client.id;
    let (f, hctx) = client.head.forward(x)?;
    ServerState::receive(Regime::Sfl, probe, id, Uplink::Features(&f))?;
    ServerState::receive(Regime::Sfl, probe, id, Uplink::Labels(labels))?;
    out.traffic.uplink += f.len() as u64 * bps + labels.len() as u64 * LABEL_BYTES;
    let (logits, sctx) = server_model.forward(&f)?;
    let (loss, g) = softmax_cross_entropy_batch(&logits, labels)?;
    let gf = server_model.backward(&sctx, &g)?;
    out.traffic.downlink_grad += gf.len() as u64 * bps;
    client.head.backward(&hctx, &gf)?;
    client.head.step()?;
    server_model.step()?;
    Ok(loss)
}

/// Head features of the first `max` training samples.
pub fn head_features(head: &ModelSegment, data: &Dataset, max: usize) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..data.len().min(max)).collect();
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(256) {
        let (f, _) = head.forward(&data.inputs_batch(chunk)?)?;
        out.extend((0..f.batch()).map(|i| f.sample(i).to_vec()));
    }
    Ok(out)
}

/// Centrally trains a copy of the run's model for `epochs` epochs without
/// evaluation and returns its segments.
pub fn train_centralized(
    base: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    epochs: usize,
    seed: u64,
) -> Result<(ModelSegment, ModelSegment, ModelSegment)> {
    let cfg = RunConfig {
        regime: Regime::Centralized,
        num_clients: 1,
        rounds: epochs.max(1),
        local_epochs: 1,
        seed,
        ..base.clone()
    };
    let mut sim = Simulation::new(cfg, train, test, CodecSet::new())?;
    for r in 0..epochs {
        sim.train_round(r, &NoProbe)?;
    }
    let c = sim.clients.swap_remove(0);
    Ok((c.head, c.body.expect("centralized body"), c.tail))
}

pub fn codec_file_name(cr: Cr) -> String {
    format!("codec_{}_{}.bin", cr.num(), cr.den())
}

/// Frozen codecs for every ratio the policy can select, built as the
/// config asks: pretrained on warm-up features, identity, or loaded.
pub fn prepare_codecs(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<CodecSet> {
    let mut set = CodecSet::new();
    if cfg.regime != Regime::Scusfl {
        return Ok(set);
    }
    let ratios = cfg.nsm.policy()?.ratios();
    match cfg.codec.source {
        CodecSource::Identity => set.insert(SemanticCodec::identity(cfg.arch.feature_dim))?,
        CodecSource::Checkpoint => {
            let dir = cfg.codec.dir.as_deref().expect("validated");
            for cr in ratios {
                set.insert(load_codec(dir, cr)?)?;
            }
        }
        CodecSource::Pretrain => {
            let warm_seed = rng::stream_id(cfg.seed, "codec/warmup");
            let (head, _, _) = train_centralized(cfg, train, test, cfg.codec.warmup_epochs, warm_seed)?;
            let feats = head_features(&head, train, cfg.codec.max_samples)?;
            for cr in ratios {
                set.insert(pretrain_codec(&feats, cr, &cfg.codec.pretrain, cfg.seed)?.codec)?;
            }
        }
    }
    Ok(set)
}

pub fn load_codec(dir: &Path, cr: Cr) -> Result<SemanticCodec> {
    let c = SemanticCodec::load(&dir.join(codec_file_name(cr)))?;
    if c.cr() != cr {
        return Err(SimError::Checkpoint {
            path: dir.join(codec_file_name(cr)),
            msg: format!("holds cr = {}, expected {cr}", c.cr()),
        });
    }
    Ok(c)
}
