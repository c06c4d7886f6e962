//! Per-round wall-clock model: compute time from FLOP counts plus
//! transmission time from Shannon rates.

use serde::{Deserialize, Serialize};

use crate::channel::{realization_rate, ChannelRealization};

use super::config::LatencyConfig;

/// Bytes moved by one client (or a whole round, when summed).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    /// Forward payload toward the server: features, symbols, labels, or FL weights.
    pub uplink: u64,
    /// Forward payload toward the client: body outputs or FL weights.
    pub downlink: u64,
    pub uplink_grad: u64,
    pub downlink_grad: u64,
    /// Client-side segments sent for aggregation and sent back.
    pub sync_up: u64,
    pub sync_down: u64,
}

impl Traffic {
    pub fn add(&mut self, o: &Traffic) {
        self.uplink += o.uplink;
        self.downlink += o.downlink;
        self.uplink_grad += o.uplink_grad;
        self.downlink_grad += o.downlink_grad;
        self.sync_up += o.sync_up;
        self.sync_down += o.sync_down;
    }

    pub fn uplink_total(&self) -> u64 {
        self.uplink + self.uplink_grad + self.sync_up
    }

    pub fn downlink_total(&self) -> u64 {
        self.downlink + self.downlink_grad + self.sync_down
    }
}

/// Work done by one client in one round.
#[derive(Clone, Copy, Debug)]
pub struct ClientLoad {
    pub device_flops: f64,
    pub server_flops: f64,
    pub traffic: Traffic,
    pub uplink: ChannelRealization,
    pub downlink: ChannelRealization,
}

/// `bits / rate`; zero when nothing is sent, infinite when the rate is zero.
pub fn transmission_time(bits: f64, rate: f64) -> f64 {
    if bits == 0.0 {
        0.0
    } else if rate > 0.0 {
        bits / rate
    } else {
        f64::INFINITY
    }
}

pub fn compute_time(flops: f64, flops_per_s: f64) -> f64 {
    flops / flops_per_s
}

/// Sequential sum of client compute, uplink, server compute and downlink.
pub fn client_latency(load: &ClientLoad, lm: &LatencyConfig, num_clients: usize) -> f64 {
    let bw = lm.client_bandwidth(num_clients);
    let up_bits = load.traffic.uplink_total() as f64 * 8.0;
    let down_bits = load.traffic.downlink_total() as f64 * 8.0;
    compute_time(load.device_flops, lm.device_flops)
        + transmission_time(up_bits, realization_rate(bw, &load.uplink))
        + compute_time(load.server_flops, lm.server_flops)
        + transmission_time(down_bits, realization_rate(bw, &load.downlink))
}

/// Clients run in parallel and aggregation waits for the slowest.
pub fn round_latency(loads: &[ClientLoad], lm: &LatencyConfig) -> f64 {
    loads
        .iter()
        .map(|l| client_latency(l, lm, loads.len()))
        .fold(0.0, f64::max)
}

/// Fraction of rounds whose latency is within the deadline.
pub fn task_success(latencies: &[f64], deadline_s: f64) -> f64 {
    if latencies.is_empty() {
        return 0.0;
    }
    latencies.iter().filter(|&&t| t <= deadline_s).count() as f64 / latencies.len() as f64
}
