//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach stdout.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::grad::{codec_instance, layer_instance, loss_instance, INSTANCES, KINDS};
use common::*;
use scusfl::channel::{ChannelModel, SnrSchedule};
use scusfl::codec::Cr;
use scusfl::data::load_cifar10_dir;
use scusfl::metrics::{records_to_csv, run_grid, run_in_memory, run_latency_sweep, write_outputs, Preset, RoundRecord, GRID_SNRS, SWEEP_COUNTS};
use scusfl::model::ArchConfig;
use scusfl::orchestrator::{prepare_codecs, BandwidthMode, DataSource, NoProbe, NsmConfig, Regime, RunConfig, Simulation};

const GRAD_TOL: f64 = 1e-3;
const EQ_TOL: f64 = 1e-9;
const PSNR_SNR_SLACK_DB: f64 = 0.2;
const PSNR_CR_SLACK_DB: f64 = 0.3;
const LOSS_SLACK: f64 = 0.05;
const USFL_MIN_ACC: f64 = 0.45;
const SC_MAX_GAP: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = fn() -> Result<Outcome, String>;

fn losses(r: &[RoundRecord]) -> Vec<f64> {
    r.iter().map(|x| x.train_loss).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn fixed(mut c: RunConfig, cr: Cr) -> RunConfig {
    c.regime = Regime::Scusfl;
    c.nsm = NsmConfig::fixed(cr);
    c
}

fn equivalence_oracle() -> Result<Outcome, String> {
    let (train, test) = small_data(128, 64, 3.0);
    let usfl = base(Regime::Usfl, 2, 10);
    let a = run_in_memory(&usfl, &train, &test, &NoProbe).map_err(|e| e.to_string())?;
    let b = run_in_memory(&identity_scusfl(usfl), &train, &test, &NoProbe).map_err(|e| e.to_string())?;
    let d = max_diff(&losses(&a.records), &losses(&b.records));
    Ok(outcome(d <= EQ_TOL, format!("max |loss diff| {d:.3e} over 10 rounds")))
}

fn split_equivalence() -> Result<Outcome, String> {
    let (train, test) = small_data(128, 64, 3.0);
    let c = run_in_memory(&base(Regime::Centralized, 1, 3), &train, &test, &NoProbe).map_err(|e| e.to_string())?;
    let u = run_in_memory(&base(Regime::Usfl, 1, 3), &train, &test, &NoProbe).map_err(|e| e.to_string())?;
    let d = max_diff(&losses(&c.records), &losses(&u.records));
    Ok(outcome(d <= EQ_TOL, format!("max |loss diff| {d:.3e} over 3 epochs")))
}

fn gradient_suite() -> Result<Outcome, String> {
    let mut worst = (0.0f64, String::new());
    let mut note = |e: f64, what: String| {
        if !(e <= worst.0) {
            worst = (e, what);
        }
    };
    for kind in KINDS {
        for s in 0..INSTANCES {
            note(layer_instance(kind, s), format!("{kind:?}"));
        }
    }
    for s in 0..INSTANCES {
        note(codec_instance(s), "codec chain".into());
        note(loss_instance(s), "cross-entropy".into());
    }
    Ok(outcome(
        worst.0 < GRAD_TOL,
        format!("max relative error {:.3e} ({}), {INSTANCES} instances each", worst.0, worst.1),
    ))
}

fn compression_accounting() -> Result<Outcome, String> {
    let (train, test) = small_data(128, 64, 3.0);
    let usfl = base(Regime::Usfl, 2, 2);
    let u = run_in_memory(&usfl, &train, &test, &NoProbe).map_err(|e| e.to_string())?;
    let mut bad = Vec::new();
    for cr in Cr::standard_set() {
        let s = run_in_memory(&fixed(usfl.clone(), cr), &train, &test, &NoProbe).map_err(|e| e.to_string())?;
        let exact = s.records.len() == u.records.len()
            && s.records.iter().zip(&u.records).all(|(a, b)| {
                a.uplink_bytes * cr.den() as u64 == b.uplink_bytes * cr.num() as u64
            });
        if !exact {
            bad.push(cr.to_string());
        }
    }
    Ok(outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("exact for 1/3, 1/6, 1/8, 1/12 (USFL uplink {} B/round)", u.records[0].uplink_bytes)
        } else {
            format!("mismatch at {}", bad.join(", "))
        },
    ))
}

fn grid_trends() -> Result<Outcome, String> {
    let mut cfg = Preset::Fig5Awgn.base_config();
    cfg.data.source = DataSource::Synthetic;
    let (train, test) = scusfl::metrics::load_data(&cfg, None).map_err(|e| e.to_string())?;
    let crs = Cr::standard_set();
    let channels = [ChannelModel::Awgn, ChannelModel::Rayleigh];
    let rows = run_grid(&cfg, &train, &test, &crs, &GRID_SNRS, &channels).map_err(|e| e.to_string())?;
    let cell = |m: ChannelModel, cr: Cr, snr: f64| {
        rows.iter().find(|r| r.channel == m && r.cr == cr && r.snr_db == snr).unwrap()
    };
    let (mut snr_viol, mut cr_viol, mut loss_viol) = (0.0f64, 0.0f64, 0.0f64);
    for m in channels {
        for &cr in &crs {
            for w in GRID_SNRS.windows(2) {
                let (lo, hi) = (cell(m, cr, w[0]), cell(m, cr, w[1]));
                snr_viol = snr_viol.max(lo.mean_psnr_db - hi.mean_psnr_db);
                loss_viol = loss_viol.max((hi.task_loss - lo.task_loss) / lo.task_loss);
            }
        }
        for &snr in &GRID_SNRS {
            for w in crs.windows(2) {
                cr_viol = cr_viol.max(cell(m, w[1], snr).mean_psnr_db - cell(m, w[0], snr).mean_psnr_db);
            }
        }
    }
    let pass = snr_viol <= PSNR_SNR_SLACK_DB && cr_viol <= PSNR_CR_SLACK_DB && loss_viol <= LOSS_SLACK;
    Ok(outcome(
        pass,
        format!(
            "worst PSNR drop with SNR {:.3} dB, worst CR inversion {:.3} dB, worst loss rise {:.2}%",
            snr_viol.max(0.0),
            cr_viol.max(0.0),
            100.0 * loss_viol.max(0.0)
        ),
    ))
}

fn latency_sweep() -> Result<Outcome, String> {
    let mut cfg = RunConfig::default();
    cfg.data.source = DataSource::Synthetic;
    cfg.data.train_size = 512;
    cfg.data.test_size = 64;
    cfg.latency.bandwidth_mode = BandwidthMode::Shared;
    let (train, test) = scusfl::metrics::load_data(&cfg, None).map_err(|e| e.to_string())?;
    let cr = Cr::standard_set()[0];
    let rows = run_latency_sweep(&cfg, &train, &test, &[Regime::Usfl, Regime::Scusfl], &SWEEP_COUNTS, 64, cr)
        .map_err(|e| e.to_string())?;
    let lat = |regime: Regime| -> Vec<f64> {
        SWEEP_COUNTS
            .iter()
            .map(|&n| rows.iter().find(|r| r.regime == regime && r.num_clients == n).unwrap().latency_s)
            .collect()
    };
    let (u, s) = (lat(Regime::Usfl), lat(Regime::Scusfl));
    let below = s.iter().zip(&u).all(|(a, b)| a < b);
    let increasing = u.windows(2).all(|w| w[0] < w[1]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    Ok(outcome(
        below && increasing,
        format!("clients 1/2/4/8: USFL {} s, SC-USFL {} s", fmt(&u), fmt(&s)),
    ))
}

fn cifar_dir() -> Option<PathBuf> {
    let candidates = std::env::var_os("SIMCTL_DATA_DIR")
        .map(PathBuf::from)
        .into_iter()
        .chain([PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")]);
    candidates.into_iter().find(|d| load_cifar10_dir(d, 1, 1).is_ok())
}

fn envelope_config(regime: Regime) -> RunConfig {
    let mut c = RunConfig {
        regime,
        rounds: 30,
        local_epochs: 3,
        batch_size: 64,
        lr: 1e-4,
        arch: ArchConfig::default(),
        ..RunConfig::default()
    };
    c.channel.model = ChannelModel::Awgn;
    c.channel.snr_db = SnrSchedule::Constant(10.0);
    if regime == Regime::Scusfl {
        c.nsm = NsmConfig::fixed(Cr::standard_set()[0]);
    }
    c
}

fn learning_envelope() -> Result<Outcome, String> {
    let Some(dir) = cifar_dir() else {
        // Same protocol on synthetic images, shortened, for information only.
        let mut u = envelope_config(Regime::Usfl);
        u.rounds = 3;
        u.data.source = DataSource::Synthetic;
        let s = RunConfig { regime: Regime::Scusfl, ..fixed(u.clone(), Cr::standard_set()[0]) };
        let (train, test) = scusfl::metrics::load_data(&u, None).map_err(|e| e.to_string())?;
        let a = run_in_memory(&u, &train, &test, &NoProbe).map_err(|e| e.to_string())?;
        let b = run_in_memory(&s, &train, &test, &NoProbe).map_err(|e| e.to_string())?;
        return Ok(outcome(
            false,
            format!(
                "CIFAR-10 not found (set SIMCTL_DATA_DIR); synthetic 3-round stand-in: USFL {:.3}, SC-USFL {:.3}",
                a.summary.final_test_accuracy, b.summary.final_test_accuracy
            ),
        ));
    };
    let u = envelope_config(Regime::Usfl);
    let s = envelope_config(Regime::Scusfl);
    let (train, test) = load_cifar10_dir(&dir, u.data.train_size, u.data.test_size).map_err(|e| e.to_string())?;
    let a = run_in_memory(&u, &train, &test, &NoProbe).map_err(|e| e.to_string())?;
    let b = run_in_memory(&s, &train, &test, &NoProbe).map_err(|e| e.to_string())?;
    let (ua, sa) = (a.summary.final_test_accuracy, b.summary.final_test_accuracy);
    Ok(outcome(
        ua >= USFL_MIN_ACC && ua - sa <= SC_MAX_GAP,
        format!("USFL {ua:.3} (need >= {USFL_MIN_ACC}), SC-USFL {sa:.3} (gap <= {SC_MAX_GAP})"),
    ))
}

fn label_locality() -> Result<Outcome, String> {
    let (train, test) = small_data(128, 64, 3.0);
    let usfl = base(Regime::Usfl, 2, 2);
    let mut seen = Vec::new();
    for cfg in [usfl.clone(), fixed(usfl.clone(), Cr::standard_set()[1])] {
        let probe = RecordingProbe::default();
        run_in_memory(&cfg, &train, &test, &probe).map_err(|e| e.to_string())?;
        let kinds = probe.kinds();
        if kinds.is_empty() {
            return Ok(outcome(false, format!("{}: probe saw nothing", cfg.regime)));
        }
        if kinds.contains(&"labels") {
            return Ok(outcome(false, format!("{}: labels observed by the server", cfg.regime)));
        }
        seen.push(format!("{}: {}", cfg.regime, kinds.join("+")));
    }
    // The double must be able to see labels, otherwise the check is vacuous.
    let probe = RecordingProbe::default();
    run_in_memory(&RunConfig { regime: Regime::Sfl, ..usfl }, &train, &test, &probe).map_err(|e| e.to_string())?;
    let sensitive = probe.kinds().contains(&"labels");
    Ok(outcome(
        sensitive,
        format!("{}; sfl uploads labels: {sensitive}", seen.join("; ")),
    ))
}

fn freeze_contract() -> Result<Outcome, String> {
    let (train, test) = small_data(128, 64, 3.0);
    let mut cfg = base(Regime::Scusfl, 2, 5);
    cfg.channel.snr_db = SnrSchedule::Constant(10.0);
    let codecs = prepare_codecs(&cfg, &train, &test).map_err(|e| e.to_string())?;
    let before = codecs.param_hash();
    let mut sim = Simulation::new(cfg.clone(), &train, &test, codecs).map_err(|e| e.to_string())?;
    for r in 0..cfg.rounds {
        sim.run_round(r, &NoProbe).map_err(|e| e.to_string())?;
        let now = sim.server().codecs.param_hash();
        if now != before {
            return Ok(outcome(false, format!("hash changed in round {r}")));
        }
    }
    Ok(outcome(true, format!("hash {}... unchanged over {} rounds", &before[..12], cfg.rounds)))
}

fn determinism() -> Result<Outcome, String> {
    let (train, test) = small_data(128, 64, 3.0);
    let mut cfg = base(Regime::Scusfl, 4, 3);
    cfg.channel.model = ChannelModel::Rayleigh;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for (i, parallel) in [true, true, false].into_iter().enumerate() {
        let c = RunConfig { parallel, ..cfg.clone() };
        let out = run_in_memory(&c, &train, &test, &NoProbe).map_err(|e| e.to_string())?;
        let (csv, _) = write_outputs(&out, &dir.path().join(i.to_string())).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&csv).map_err(|e| e.to_string())?;
        if bytes != records_to_csv(&out.records).map_err(|e| e.to_string())? {
            return Ok(outcome(false, "written CSV differs from in-memory CSV"));
        }
        files.push(bytes);
    }
    let same = files.windows(2).all(|w| w[0] == w[1]);
    Ok(outcome(same, format!("3 runs (parallel, parallel, serial), {} bytes each", files[0].len())))
}

fn main() -> ExitCode {
    let criteria: [(u8, &str, Duration, Check); 10] = [
        (1, "identity SC-USFL matches USFL", Duration::from_secs(120), equivalence_oracle),
        (2, "one-client USFL matches centralized", Duration::from_secs(60), split_equivalence),
        (3, "gradient suite", Duration::MAX, gradient_suite),
        (4, "uplink bytes scale with CR", Duration::MAX, compression_accounting),
        (5, "PSNR/task-loss grid trends", Duration::from_secs(600), grid_trends),
        (6, "shared-bandwidth latency sweep", Duration::from_secs(300), latency_sweep),
        (7, "CIFAR-10 learning envelope", Duration::from_secs(600), learning_envelope),
        (8, "labels stay on the client", Duration::MAX, label_locality),
        (9, "codec parameters frozen", Duration::MAX, freeze_contract),
        (10, "byte-identical CSVs", Duration::MAX, determinism),
    ];
    let cifar = cifar_dir().is_some();
    let mut failed = Vec::new();
    for (id, name, budget, check) in criteria {
        let t = Instant::now();
        let res = check().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        let took = t.elapsed();
        let in_time = took <= budget;
        let pass = res.pass && in_time;
        let timing = if in_time {
            format!("{:.1}s", took.as_secs_f64())
        } else {
            format!("{:.1}s, over budget {:.0}s", took.as_secs_f64(), budget.as_secs_f64())
        };
        println!(
            "{} criterion {id:>2}: {name} - {} [{timing}]",
            if pass { "PASS" } else { "FAIL" },
            res.detail
        );
        // Without the dataset criterion 7 cannot be evaluated; it is
        // reported as FAIL but does not fail the binary.
        if !pass && !(id == 7 && !cifar) {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
