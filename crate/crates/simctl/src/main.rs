use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scusfl::channel::ChannelModel;
use scusfl::codec::{pretrain_codec, Cr};
use scusfl::metrics::{
    grid_to_csv, load_data, run_grid, run_in_memory, run_latency_sweep, run_preset, sweep_to_csv, write_outputs,
    Preset, GRID_SNRS, SWEEP_COUNTS,
};
use scusfl::orchestrator::{codec_file_name, head_features, train_centralized, DataSource, NoProbe, Regime, RunConfig};
use scusfl::rng;
use scusfl::{Result, SimError};

#[derive(Parser)]
#[command(name = "simctl", version, about = "Split federated learning simulator with semantic uplink compression")]
struct Cli {
    /// CIFAR-10 binary directory, used when the config does not set `data.dir`.
    #[arg(long, global = true, env = "SIMCTL_DATA_DIR")]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment; writes rounds.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate pretrained codecs over channels x ratios x SNRs.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values = ["1/3", "1/6", "1/8", "1/12"])]
        crs: Vec<Cr>,
        #[arg(long, value_delimiter = ',', default_values_t = GRID_SNRS)]
        snrs: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values = ["awgn", "rayleigh"])]
        channels: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Per-round latency and bytes for each regime and client count.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_COUNTS)]
        counts: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values = ["fl", "sfl", "usfl", "scusfl"])]
        regimes: Vec<Regime>,
        #[arg(long, default_value_t = 64)]
        samples_per_client: usize,
        #[arg(long, default_value = "1/3")]
        cr: Cr,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Pretrain and save one codec checkpoint.
    Pretrain {
        #[arg(long)]
        cr: Cr,
        #[arg(long)]
        snr: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; the file is named codec_{num}_{den}.bin.
        #[arg(long, default_value = "codecs")]
        out: PathBuf,
    },
    /// Run a named experiment preset (fig4a, fig4b, fig5-awgn, fig5-rayleigh).
    Preset {
        name: String,
        /// Use seeded synthetic 3x32x32 data instead of CIFAR-10.
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn parse_channel(s: &str) -> Result<ChannelModel> {
    match s {
        "awgn" => Ok(ChannelModel::Awgn),
        "rayleigh" => Ok(ChannelModel::Rayleigh),
        _ => Err(SimError::config("channels", format!("unknown channel `{s}`"))),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let data_dir = cli.data_dir.as_deref();
    match cli.cmd {
        Cmd::Run { config, seed, out } => {
            let cfg = load_config(Some(&config), seed)?;
            let (train, test) = load_data(&cfg, data_dir)?;
            let res = run_in_memory(&cfg, &train, &test, &NoProbe)?;
            let (csv, json) = write_outputs(&res, &out)?;
            eprintln!("wrote {} and {}", csv.display(), json.display());
            println!("{}", serde_json::to_string_pretty(&res.summary)?);
        }
        Cmd::Grid {
            config,
            crs,
            snrs,
            channels,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let channels = channels.iter().map(|c| parse_channel(c)).collect::<Result<Vec<_>>>()?;
            let (train, test) = load_data(&cfg, data_dir)?;
            let rows = run_grid(&cfg, &train, &test, &crs, &snrs, &channels)?;
            write(&out.join("grid.csv"), &grid_to_csv(&rows)?)?;
        }
        Cmd::Sweep {
            config,
            counts,
            regimes,
            samples_per_client,
            cr,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let (train, test) = load_data(&cfg, data_dir)?;
            let rows = run_latency_sweep(&cfg, &train, &test, &regimes, &counts, samples_per_client, cr)?;
            write(&out.join("latency_sweep.csv"), &sweep_to_csv(&rows)?)?;
        }
        Cmd::Pretrain {
            cr,
            snr,
            config,
            seed,
            out,
        } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            cfg.codec.pretrain.train_snr_db = snr;
            let (train, test) = load_data(&cfg, data_dir)?;
            let warm_seed = rng::stream_id(cfg.seed, "codec/warmup");
            let (head, _, _) = train_centralized(&cfg, &train, &test, cfg.codec.warmup_epochs, warm_seed)?;
            let feats = head_features(&head, &train, cfg.codec.max_samples)?;
            let p = pretrain_codec(&feats, cr, &cfg.codec.pretrain, cfg.seed)?;
            let path = out.join(codec_file_name(cr));
            fs::create_dir_all(&out)?;
            p.codec.save(&path)?;
            eprintln!(
                "wrote {} (final reconstruction MSE {:.6})",
                path.display(),
                p.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Cmd::Preset {
            name,
            synthetic,
            seed,
            out,
        } => {
            let preset = Preset::parse(&name)?;
            let mut cfg = preset.base_config();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if synthetic {
                cfg.data.source = DataSource::Synthetic;
            }
            let (train, test) = load_data(&cfg, data_dir)?;
            for p in run_preset(preset, &cfg, &train, &test, &out)? {
                eprintln!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
