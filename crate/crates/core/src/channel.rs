//! Real-valued AWGN and block-Rayleigh channels under a unit-average-power
//! symbol convention, perfect-CSI equalization, and Shannon rates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::{self, Stream};

/// Allowed deviation of the symbol mean square from 1.
pub const POWER_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    Awgn,
    Rayleigh,
}

impl ChannelModel {
    pub fn name(&self) -> &'static str {
        match self {
            ChannelModel::Awgn => "awgn",
            ChannelModel::Rayleigh => "rayleigh",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelRealization {
    pub model: ChannelModel,
    pub snr_db: f64,
    /// Fading magnitude; 1 for AWGN.
    pub h: f64,
    pub noise_seed: u64,
}

impl ChannelRealization {
    pub fn noiseless(model: ChannelModel, h: f64) -> Self {
        ChannelRealization {
            model,
            snr_db: f64::INFINITY,
            h,
            noise_seed: 0,
        }
    }

    /// `10^(-snr_db/10)`; zero for the `+inf` sentinel.
    pub fn noise_variance(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }

    /// Received SNR including the fading gain `h^2`.
    pub fn effective_snr_db(&self) -> f64 {
        self.snr_db + 20.0 * self.h.log10()
    }

    /// Fresh noise generator for this realization.
    pub fn noise_stream(&self) -> Stream {
        rng::from_id(self.noise_seed)
    }
}

pub fn sample_realization<R: Rng + ?Sized>(
    model: ChannelModel,
    snr_db: f64,
    rng: &mut R,
) -> ChannelRealization {
    let h = match model {
        ChannelModel::Awgn => 1.0,
        ChannelModel::Rayleigh => {
            // |g| with g ~ CN(0, 1): real and imaginary parts each N(0, 1/2).
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            ((re * re + im * im) / 2.0).sqrt().max(f64::MIN_POSITIVE)
        }
    };
    ChannelRealization {
        model,
        snr_db,
        h,
        noise_seed: rng.gen(),
    }
}

pub fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `y = h x + n`, `n ~ N(0, sigma^2)` drawn from `noise`.
pub fn transmit_with<R: Rng + ?Sized>(
    symbols: &[f64],
    real: &ChannelRealization,
    noise: &mut R,
) -> Result<Vec<f64>> {
    if symbols.is_empty() {
        return Err(SimError::Channel("empty symbol block".into()));
    }
    let p = mean_square(symbols);
    if (p - 1.0).abs() > POWER_TOLERANCE {
        return Err(SimError::Channel(format!(
            "symbols must have unit mean power, got {p}"
        )));
    }
    if real.snr_db == f64::NEG_INFINITY || real.snr_db.is_nan() {
        return Err(SimError::Channel(format!("cannot transmit at {} dB", real.snr_db)));
    }
    let sigma = real.noise_variance().sqrt();
    let out = if sigma == 0.0 {
        symbols.iter().map(|&x| real.h * x).collect()
    } else {
        symbols
            .iter()
            .map(|&x| real.h * x + sigma * noise.sample::<f64, _>(StandardNormal))
            .collect()
    };
    Ok(out)
}

/// Like `transmit_with`, drawing noise from the realization's own stream.
pub fn transmit(symbols: &[f64], real: &ChannelRealization) -> Result<Vec<f64>> {
    transmit_with(symbols, real, &mut real.noise_stream())
}

/// Zero-forcing with perfect CSI: `y / h`.
pub fn equalize(received: &[f64], real: &ChannelRealization) -> Vec<f64> {
    received.iter().map(|&y| y / real.h).collect()
}

/// `B log2(1 + 10^(snr_db/10))` in bit/s; zero at `-inf` dB.
pub fn shannon_rate(bandwidth_hz: f64, snr_db: f64) -> f64 {
    if snr_db == f64::NEG_INFINITY {
        return 0.0;
    }
    bandwidth_hz * (1.0 + 10f64.powf(snr_db / 10.0)).log2()
}

/// Rate seen by a realization, with the fading gain folded into the SNR.
pub fn realization_rate(bandwidth_hz: f64, real: &ChannelRealization) -> f64 {
    shannon_rate(bandwidth_hz, real.effective_snr_db())
}

/// Nominal SNR per round: a constant, or `(round_start, snr_db)` breakpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SnrSchedule {
    Constant(f64),
    Piecewise(Vec<(usize, f64)>),
}

impl Default for SnrSchedule {
    fn default() -> Self {
        SnrSchedule::Constant(10.0)
    }
}

impl SnrSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            SnrSchedule::Constant(v) if v.is_nan() || *v == f64::NEG_INFINITY => Err(
                SimError::config("channel.snr_db", "must be a number or +inf"),
            ),
            SnrSchedule::Constant(_) => Ok(()),
            SnrSchedule::Piecewise(points) => {
                if points.first().is_none_or(|p| p.0 != 0) {
                    return Err(SimError::config(
                        "channel.snr_db",
                        "breakpoint list must start at round 0",
                    ));
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(SimError::config(
                        "channel.snr_db",
                        "breakpoint rounds must be strictly increasing",
                    ));
                }
                if points.iter().any(|p| p.1.is_nan() || p.1 == f64::NEG_INFINITY) {
                    return Err(SimError::config("channel.snr_db", "invalid breakpoint SNR"));
                }
                Ok(())
            }
        }
    }

    pub fn snr_at(&self, round: usize) -> f64 {
        match self {
            SnrSchedule::Constant(v) => *v,
            SnrSchedule::Piecewise(points) => points
                .iter()
                .take_while(|p| p.0 <= round)
                .last()
                .map_or(points[0].1, |p| p.1),
        }
    }
}

/// One realization per client, round, and direction, fixed ahead of a run.
#[derive(Clone, Debug)]
pub struct ChannelTrace {
    num_clients: usize,
    rounds: usize,
    cells: Vec<[ChannelRealization; 2]>,
}

impl ChannelTrace {
    /// Cell `(c, r, dir)` is drawn from stream `channel/{dir}/client/{c}/round/{r}`,
    /// so a trace prefix does not depend on the trace length.
    pub fn generate(
        model: ChannelModel,
        schedule: &SnrSchedule,
        num_clients: usize,
        rounds: usize,
        seed: u64,
    ) -> Self {
        let mut cells = Vec::with_capacity(num_clients * rounds);
        for round in 0..rounds {
            let snr = schedule.snr_at(round);
            for client in 0..num_clients {
                let draw = |dir: &str| {
                    let mut s = rng::stream(seed, &format!("channel/{dir}/client/{client}/round/{round}"));
                    sample_realization(model, snr, &mut s)
                };
                cells.push([draw("uplink"), draw("downlink")]);
            }
        }
        ChannelTrace {
            num_clients,
            rounds,
            cells,
        }
    }

    /// Builds a trace from explicit cells, `cells[round * num_clients + client]`.
    pub fn from_cells(num_clients: usize, rounds: usize, cells: Vec<[ChannelRealization; 2]>) -> Result<Self> {
        if cells.len() != num_clients * rounds {
            return Err(SimError::Channel(format!(
                "{} cells for {num_clients} clients x {rounds} rounds",
                cells.len()
            )));
        }
        Ok(ChannelTrace {
            num_clients,
            rounds,
            cells,
        })
    }

    pub fn get(&self, client: usize, round: usize, dir: Direction) -> Result<&ChannelRealization> {
        if client >= self.num_clients || round >= self.rounds {
            return Err(SimError::MissingTrace { client, round });
        }
        let cell = &self.cells[round * self.num_clients + client];
        Ok(match dir {
            Direction::Uplink => &cell[0],
            Direction::Downlink => &cell[1],
        })
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }
}
