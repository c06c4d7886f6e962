#![allow(dead_code)]

use std::sync::Mutex;

use scusfl::channel::SnrSchedule;
use scusfl::codec::Cr;
use scusfl::data::{synth_split, Dataset};
use scusfl::model::ArchConfig;
use scusfl::orchestrator::{
    CodecSource, DataSource, NsmConfig, Regime, RunConfig, ServerProbe, Uplink,
};

/// tinycnn on 3x8x8 inputs: 96 features, 10 classes.
pub fn small_cnn() -> ArchConfig {
    ArchConfig {
        input_shape: vec![3, 8, 8],
        feature_dim: 96,
        hidden: 32,
        ..ArchConfig::default()
    }
}

pub fn small_data(n_train: usize, n_test: usize, separation: f64) -> (Dataset, Dataset) {
    synth_split(n_train, n_test, 10, &[3, 8, 8], separation, 11).unwrap()
}

pub fn base(regime: Regime, clients: usize, rounds: usize) -> RunConfig {
    let mut c = RunConfig {
        regime,
        num_clients: clients,
        rounds,
        local_epochs: 1,
        batch_size: 16,
        lr: 1e-3,
        seed: 7,
        arch: small_cnn(),
        ..RunConfig::default()
    };
    c.data.source = DataSource::Synthetic;
    c.data.train_size = 128;
    c.data.test_size = 64;
    c.codec.pretrain.epochs = 3;
    c.codec.pretrain.batch_size = 32;
    c
}

/// SC-USFL through the identity codec over a noiseless channel.
pub fn identity_scusfl(mut c: RunConfig) -> RunConfig {
    c.regime = Regime::Scusfl;
    c.codec.source = CodecSource::Identity;
    c.nsm = NsmConfig::fixed(Cr::ONE);
    c.channel.snr_db = SnrSchedule::Constant(f64::INFINITY);
    c
}

/// Records the kind of every payload that reaches the server.
#[derive(Default)]
pub struct RecordingProbe {
    pub seen: Mutex<Vec<(usize, &'static str)>>,
}

impl ServerProbe for RecordingProbe {
    fn observe(&self, client: usize, msg: &Uplink<'_>) {
        self.seen.lock().unwrap().push((client, msg.kind()));
    }
}

impl RecordingProbe {
    pub fn kinds(&self) -> Vec<&'static str> {
        let mut k: Vec<_> = self.seen.lock().unwrap().iter().map(|s| s.1).collect();
        k.sort();
        k.dedup();
        k
    }
}

pub mod grad;
