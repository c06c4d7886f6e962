//! Round records, test-set evaluation, CSV/JSON output, and the experiment
//! drivers behind the command-line tool.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{self, sample_realization, ChannelModel};
use crate::codec::{pretrain_codec, psnr_slices, CodecSet, Cr, PSNR_CAP_DB};
use crate::data::{load_cifar10_dir, synth_split, Dataset};
use crate::error::{Result, SimError};
use crate::model::ModelSegment;
use crate::nsm::NsmPolicy;
use crate::orchestrator::{
    head_features, prepare_codecs, task_success, train_centralized, DataSource, NoProbe, NsmConfig, Regime,
    RoundStats, RunConfig, ServerProbe, Simulation,
};
use crate::rng;
use crate::tensor::{softmax_cross_entropy_batch, Tensor};

const EVAL_CHUNK: usize = 256;

/// One CSV row. Field order is the column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub regime: Regime,
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// Split regimes only.
    pub mean_psnr_db: Option<f64>,
    pub test_task_loss: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    /// May be `inf` when a link has zero rate.
    pub latency_s: f64,
    /// `cr:batches` pairs separated by `;`, empty outside SC-USFL.
    pub cr_histogram: String,
    pub success: bool,
    pub uplink_grad_bytes: u64,
    pub downlink_grad_bytes: u64,
    pub model_sync_bytes: u64,
}

pub const CSV_HEADER: &str = "round,regime,train_loss,test_accuracy,mean_psnr_db,test_task_loss,\
uplink_bytes,downlink_bytes,latency_s,cr_histogram,success,uplink_grad_bytes,downlink_grad_bytes,\
model_sync_bytes";

pub fn format_histogram(counts: &BTreeMap<Cr, u64>) -> String {
    let mut s = String::new();
    for (cr, n) in counts.iter().rev() {
        if !s.is_empty() {
            s.push(';');
        }
        let _ = write!(s, "{cr}:{n}");
    }
    s
}

impl RoundRecord {
    pub fn new(round: usize, regime: Regime, stats: &RoundStats, eval: &EvalResult, deadline_s: f64) -> Self {
        let t = &stats.traffic;
        RoundRecord {
            round,
            regime,
            train_loss: stats.train_loss,
            test_accuracy: eval.accuracy,
            mean_psnr_db: eval.mean_psnr_db,
            test_task_loss: eval.task_loss,
            uplink_bytes: t.uplink,
            downlink_bytes: t.downlink,
            latency_s: stats.latency_s,
            cr_histogram: format_histogram(&stats.cr_counts),
            success: stats.latency_s <= deadline_s,
            uplink_grad_bytes: t.uplink_grad,
            downlink_grad_bytes: t.downlink_grad,
            model_sync_bytes: t.sync_up + t.sync_down,
        }
    }
}

pub fn records_to_csv(records: &[RoundRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| SimError::Io(e.into_error()))
}

pub fn read_records(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(SimError::from)).collect()
}

/// Totals over a run; byte totals equal the CSV column sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub regime: Regime,
    pub rounds: usize,
    pub seed: u64,
    pub final_test_accuracy: f64,
    pub final_train_loss: f64,
    pub final_test_task_loss: f64,
    pub total_uplink_bytes: u64,
    pub total_downlink_bytes: u64,
    pub total_uplink_grad_bytes: u64,
    pub total_downlink_grad_bytes: u64,
    pub total_model_sync_bytes: u64,
    pub mean_latency_s: f64,
    /// `null` when the deadline is infinite.
    pub deadline_s: Option<f64>,
    pub task_success_probability: f64,
    /// Codec parameter hash at the end of the run (SC-USFL only).
    pub codec_hash: Option<String>,
}

impl Summary {
    pub fn from_records(cfg: &RunConfig, records: &[RoundRecord], codec_hash: Option<String>) -> Self {
        let last = records.last();
        let lat: Vec<f64> = records.iter().map(|r| r.latency_s).collect();
        Summary {
            regime: cfg.regime,
            rounds: records.len(),
            seed: cfg.seed,
            final_test_accuracy: last.map_or(0.0, |r| r.test_accuracy),
            final_train_loss: last.map_or(0.0, |r| r.train_loss),
            final_test_task_loss: last.map_or(0.0, |r| r.test_task_loss),
            total_uplink_bytes: records.iter().map(|r| r.uplink_bytes).sum(),
            total_downlink_bytes: records.iter().map(|r| r.downlink_bytes).sum(),
            total_uplink_grad_bytes: records.iter().map(|r| r.uplink_grad_bytes).sum(),
            total_downlink_grad_bytes: records.iter().map(|r| r.downlink_grad_bytes).sum(),
            total_model_sync_bytes: records.iter().map(|r| r.model_sync_bytes).sum(),
            mean_latency_s: lat.iter().sum::<f64>() / lat.len().max(1) as f64,
            deadline_s: cfg.deadline_s.is_finite().then_some(cfg.deadline_s),
            task_success_probability: task_success(&lat, cfg.deadline_s),
            codec_hash,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub task_loss: f64,
    pub mean_psnr_db: Option<f64>,
}

/// How head features reach the body during evaluation.
#[derive(Clone, Copy, Debug)]
pub enum EvalPath<'a> {
    /// Unsplit model; no PSNR.
    Direct,
    /// Split with lossless transfer; PSNR is the cap.
    Lossless,
    /// Codec plus channel, one realization per test sample drawn from the
    /// stream `seed`, ratio chosen by `policy` from the sample's SNR.
    Semantic {
        codecs: &'a CodecSet,
        policy: &'a NsmPolicy,
        model: ChannelModel,
        snr_db: f64,
        seed: u64,
    },
}

/// Accuracy, mean cross-entropy and mean per-sample feature PSNR on `test`.
pub fn evaluate(
    head: &ModelSegment,
    body: &ModelSegment,
    tail: &ModelSegment,
    test: &Dataset,
    path: &EvalPath<'_>,
) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(SimError::Tensor("empty test set".into()));
    }
    let mut real_rng = match path {
        EvalPath::Semantic { seed, .. } => Some(rng::from_id(*seed)),
        _ => None,
    };
    let (mut correct, mut loss_sum, mut psnr_sum) = (0usize, 0.0, 0.0);
    let idx: Vec<usize> = (0..test.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (f, _) = head.forward(&test.inputs_batch(chunk)?)?;
        let f_hat = match (path, real_rng.as_mut()) {
            (EvalPath::Semantic { codecs, policy, model, snr_db, .. }, Some(r)) => {
                let reals: Vec<_> = (0..chunk.len()).map(|_| sample_realization(*model, *snr_db, r)).collect();
                let f_hat = semantic_pass(&f, &reals, codecs, policy)?;
                for i in 0..f.batch() {
                    psnr_sum += psnr_slices(f.sample(i), f_hat.sample(i));
                }
                f_hat
            }
            _ => f,
        };
        let (z, _) = body.forward(&f_hat)?;
        let (logits, _) = tail.forward(&z)?;
        let labels = test.labels_batch(chunk);
        let (loss, _) = softmax_cross_entropy_batch(&logits, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        let c = logits.sample_len();
        for (i, &l) in labels.iter().enumerate() {
            let row = &logits.values()[i * c..(i + 1) * c];
            let arg = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, v)| if *v > row[best] { j } else { best });
            correct += usize::from(arg == l);
        }
    }
    let n = test.len() as f64;
    Ok(EvalResult {
        accuracy: correct as f64 / n,
        task_loss: loss_sum / n,
        mean_psnr_db: match path {
            EvalPath::Direct => None,
            EvalPath::Lossless => Some(PSNR_CAP_DB),
            EvalPath::Semantic { .. } => Some(psnr_sum / n),
        },
    })
}

/// Encode, transmit each row over its own realization, equalize, decode.
fn semantic_pass(
    f: &Tensor,
    reals: &[channel::ChannelRealization],
    codecs: &CodecSet,
    policy: &NsmPolicy,
) -> Result<Tensor> {
    let d = f.sample_len();
    let mut groups: BTreeMap<Cr, Vec<usize>> = BTreeMap::new();
    for (i, r) in reals.iter().enumerate() {
        groups.entry(policy.select_cr(r.effective_snr_db())).or_default().push(i);
    }
    let mut out = vec![0.0; f.len()];
    for (cr, rows) in groups {
        let codec = codecs.get(cr)?;
        let mut x = Vec::with_capacity(rows.len() * d);
        for &i in &rows {
            x.extend_from_slice(f.sample(i));
        }
        let x = Tensor::new(vec![rows.len(), d], x)?;
        let (_, dec) = codec.roundtrip(&x, |j, s| {
            let real = &reals[rows[j]];
            Ok(channel::equalize(&channel::transmit(s, real)?, real))
        })?;
        for (j, &i) in rows.iter().enumerate() {
            out[i * d..(i + 1) * d].copy_from_slice(dec.features.sample(j));
        }
    }
    Tensor::new(f.shape().to_vec(), out)
}

/// Train/test data for a config: synthetic, or CIFAR-10 from `data.dir`
/// (or `data_dir` when the config leaves it unset).
pub fn load_data(cfg: &RunConfig, data_dir: Option<&Path>) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    match d.source {
        DataSource::Synthetic => synth_split(
            d.train_size,
            d.test_size,
            cfg.arch.num_classes,
            &cfg.arch.input_shape,
            d.separation,
            rng::stream_id(cfg.seed, "data/synthetic"),
        ),
        DataSource::Cifar10 => {
            let dir = d.dir.as_deref().or(data_dir).ok_or_else(|| {
                SimError::config("data.dir", "CIFAR-10 needs a data directory (or SIMCTL_DATA_DIR)")
            })?;
            load_cifar10_dir(dir, d.train_size, d.test_size)
        }
    }
}

pub struct ExperimentOutput {
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
}

/// Prepares codecs, runs every round, and returns records plus summary.
pub fn run_in_memory(cfg: &RunConfig, train: &Dataset, test: &Dataset, probe: &dyn ServerProbe) -> Result<ExperimentOutput> {
    let codecs = prepare_codecs(cfg, train, test)?;
    let mut sim = Simulation::new(cfg.clone(), train, test, codecs)?;
    let records = sim.run(probe)?;
    let hash = (cfg.regime == Regime::Scusfl).then(|| sim.server().codecs.param_hash());
    let summary = Summary::from_records(cfg, &records, hash);
    Ok(ExperimentOutput { records, summary })
}

/// Writes `rounds.csv` and `summary.json` under `out_dir`.
pub fn write_outputs(out: &ExperimentOutput, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("rounds.csv");
    let json_path = out_dir.join("summary.json");
    fs::write(&csv_path, records_to_csv(&out.records)?)?;
    fs::write(&json_path, serde_json::to_string_pretty(&out.summary)? + "\n")?;
    Ok((csv_path, json_path))
}

pub fn run_experiment(cfg: &RunConfig, data_dir: Option<&Path>, out_dir: &Path) -> Result<ExperimentOutput> {
    let (train, test) = load_data(cfg, data_dir)?;
    let out = run_in_memory(cfg, &train, &test, &NoProbe)?;
    write_outputs(&out, out_dir)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub channel: ChannelModel,
    pub cr: Cr,
    pub snr_db: f64,
    pub mean_psnr_db: f64,
    pub task_loss: f64,
    pub accuracy: f64,
}

pub fn grid_to_csv(rows: &[GridRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| SimError::Io(e.into_error()))
}

/// Trains the model centrally for `base.rounds` rounds of
/// `base.local_epochs` epochs, pretrains one codec per ratio on the trained
/// head's features, then evaluates every (channel, cr, snr) cell.
pub fn run_grid(
    base: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    crs: &[Cr],
    snrs: &[f64],
    channels: &[ChannelModel],
) -> Result<Vec<GridRow>> {
    let epochs = base.rounds * base.local_epochs;
    let (head, body, tail) = train_centralized(base, train, test, epochs, base.seed)?;
    let feats = head_features(&head, train, base.codec.max_samples)?;
    let mut codecs = CodecSet::new();
    for &cr in crs {
        codecs.insert(pretrain_codec(&feats, cr, &base.codec.pretrain, base.seed)?.codec)?;
    }
    let mut rows = Vec::new();
    for &model in channels {
        for &cr in crs {
            let policy = NsmPolicy::fixed(cr);
            for &snr in snrs {
                // Shared across ratios so cells at one SNR see the same fades.
                let seed = rng::stream_id(base.seed, &format!("grid/{}/snr/{snr}", model.name()));
                let path = EvalPath::Semantic {
                    codecs: &codecs,
                    policy: &policy,
                    model,
                    snr_db: snr,
                    seed,
                };
                let r = evaluate(&head, &body, &tail, test, &path)?;
                rows.push(GridRow {
                    channel: model,
                    cr,
                    snr_db: snr,
                    mean_psnr_db: r.mean_psnr_db.unwrap_or(PSNR_CAP_DB),
                    task_loss: r.task_loss,
                    accuracy: r.accuracy,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub regime: Regime,
    pub num_clients: usize,
    pub latency_s: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub uplink_grad_bytes: u64,
    pub downlink_grad_bytes: u64,
    pub model_sync_bytes: u64,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| SimError::Io(e.into_error()))
}

/// One training round per (regime, client count), every client holding
/// `samples_per_client` samples. SC-USFL runs at a fixed `cr` whose codec
/// is pretrained once and shared by every cell.
pub fn run_latency_sweep(
    base: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    regimes: &[Regime],
    counts: &[usize],
    samples_per_client: usize,
    cr: Cr,
) -> Result<Vec<SweepRow>> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max * samples_per_client > train.len() {
        return Err(SimError::config(
            "data.train_size",
            format!("sweep needs {} training samples", max * samples_per_client),
        ));
    }
    let codec_cfg = RunConfig {
        regime: Regime::Scusfl,
        nsm: NsmConfig::fixed(cr),
        ..base.clone()
    };
    let codecs = if regimes.contains(&Regime::Scusfl) {
        prepare_codecs(&codec_cfg, train, test)?
    } else {
        CodecSet::new()
    };
    let mut rows = Vec::new();
    for &regime in regimes {
        for &n in counts {
            let subset = train.subset(&(0..n * samples_per_client).collect::<Vec<_>>())?;
            let cfg = RunConfig {
                regime,
                num_clients: n,
                rounds: 1,
                nsm: NsmConfig::fixed(cr),
                data: crate::orchestrator::DataConfig {
                    train_size: subset.len(),
                    ..base.data.clone()
                },
                ..base.clone()
            };
            let mut sim = Simulation::new(cfg, &subset, test, codecs.clone())?;
            let s = sim.train_round(0, &NoProbe)?;
            rows.push(SweepRow {
                regime,
                num_clients: n,
                latency_s: s.latency_s,
                uplink_bytes: s.traffic.uplink,
                downlink_bytes: s.traffic.downlink,
                uplink_grad_bytes: s.traffic.uplink_grad,
                downlink_grad_bytes: s.traffic.downlink_grad,
                model_sync_bytes: s.traffic.sync_up + s.traffic.sync_down,
            });
        }
    }
    Ok(rows)
}

/// Named experiment protocols with desk-scale defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Accuracy and loss per round for every regime.
    Fig4a,
    /// Per-round latency against client count.
    Fig4b,
    Fig5Awgn,
    Fig5Rayleigh,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Fig4a, Preset::Fig4b, Preset::Fig5Awgn, Preset::Fig5Rayleigh];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Fig4a => "fig4a",
            Preset::Fig4b => "fig4b",
            Preset::Fig5Awgn => "fig5-awgn",
            Preset::Fig5Rayleigh => "fig5-rayleigh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::config("preset", format!("unknown preset `{s}`")))
    }

    /// Desk-scale base config: 2000/1000 CIFAR-10 samples, tinycnn.
    pub fn base_config(&self) -> RunConfig {
        let mut cfg = RunConfig {
            rounds: 30,
            num_clients: 4,
            ..RunConfig::default()
        };
        match self {
            Preset::Fig4a => {}
            Preset::Fig4b => {
                cfg.codec.pretrain.epochs = 5;
            }
            Preset::Fig5Awgn | Preset::Fig5Rayleigh => {
                cfg.rounds = 5;
                cfg.local_epochs = 1;
                cfg.lr = 1e-3;
                cfg.codec.max_samples = 1000;
                cfg.codec.pretrain.epochs = 10;
            }
        }
        cfg
    }
}

pub const GRID_SNRS: [f64; 5] = [0.0, 5.0, 10.0, 15.0, 20.0];
pub const SWEEP_COUNTS: [usize; 4] = [1, 2, 4, 8];
pub const SWEEP_REGIMES: [Regime; 4] = [Regime::Fl, Regime::Sfl, Regime::Usfl, Regime::Scusfl];

/// Runs a preset on `cfg` (normally `preset.base_config()`, possibly
/// adjusted) and writes its CSVs plus a gnuplot script into `out_dir`.
pub fn run_preset(preset: Preset, cfg: &RunConfig, train: &Dataset, test: &Dataset, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    match preset {
        Preset::Fig4a => {
            for regime in [Regime::Centralized, Regime::Local, Regime::Fl, Regime::Usfl, Regime::Scusfl] {
                let c = RunConfig {
                    regime,
                    num_clients: if regime == Regime::Centralized { 1 } else { cfg.num_clients },
                    ..cfg.clone()
                };
                let out = run_in_memory(&c, train, test, &NoProbe)?;
                let (csv, json) = write_outputs(&out, &out_dir.join(regime.name()))?;
                written.extend([csv, json]);
            }
            written.push(write_script(out_dir, "fig4a.gp", FIG4A_SCRIPT)?);
        }
        Preset::Fig4b => {
            let spc = (train.len() / SWEEP_COUNTS[3]).min(cfg.batch_size * 4).max(1);
            let rows = run_latency_sweep(cfg, train, test, &SWEEP_REGIMES, &SWEEP_COUNTS, spc, Cr::standard_set()[0])?;
            let p = out_dir.join("latency_sweep.csv");
            fs::write(&p, sweep_to_csv(&rows)?)?;
            written.push(p);
            written.push(write_script(out_dir, "fig4b.gp", FIG4B_SCRIPT)?);
        }
        Preset::Fig5Awgn | Preset::Fig5Rayleigh => {
            let model = if preset == Preset::Fig5Awgn {
                ChannelModel::Awgn
            } else {
                ChannelModel::Rayleigh
            };
            let rows = run_grid(cfg, train, test, &Cr::standard_set(), &GRID_SNRS, &[model])?;
            let p = out_dir.join(format!("grid_{}.csv", model.name()));
            fs::write(&p, grid_to_csv(&rows)?)?;
            written.push(p);
            let script = FIG5_SCRIPT.replace("{channel}", model.name());
            written.push(write_script(out_dir, &format!("{}.gp", preset.name()), &script)?);
        }
    }
    Ok(written)
}

fn write_script(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    fs::write(&p, body)?;
    Ok(p)
}

const FIG4A_SCRIPT: &str = r#"set datafile separator ","
set key autotitle columnhead bottom right
set xlabel "round"
set ylabel "test accuracy"
set terminal pngcairo size 800,500
set output "fig4a.png"
plot for [r in "centralized local fl usfl scusfl"] r."/rounds.csv" using 1:4 with lines title r
"#;

const FIG4B_SCRIPT: &str = r#"set datafile separator ","
set xlabel "clients"
set ylabel "per-round latency (s)"
set logscale y
set terminal pngcairo size 800,500
set output "fig4b.png"
plot for [r in "fl sfl usfl scusfl"] "< grep ,".r.", latency_sweep.csv; grep '^".r.",' latency_sweep.csv" using 2:3 with linespoints title r
"#;

const FIG5_SCRIPT: &str = r#"set datafile separator ","
set xlabel "SNR (dB)"
set ylabel "mean feature PSNR (dB)"
set terminal pngcairo size 800,500
set output "fig5-{channel}-psnr.png"
plot for [c in "1/3 1/6 1/8 1/12"] "< grep ',".c.",' grid_{channel}.csv" using 3:4 with linespoints title "cr ".c
set ylabel "task loss"
set output "fig5-{channel}-loss.png"
plot for [c in "1/3 1/6 1/8 1/12"] "< grep ',".c.",' grid_{channel}.csv" using 3:5 with linespoints title "cr ".c
"#;
