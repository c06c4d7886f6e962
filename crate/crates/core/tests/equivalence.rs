mod common;

use common::*;
use scusfl::metrics::{run_in_memory, RoundRecord};
use scusfl::orchestrator::{NoProbe, Regime};

fn losses(r: &[RoundRecord]) -> Vec<f64> {
    r.iter().map(|x| x.train_loss).collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "round {i}: {x} vs {y}");
    }
}

#[test]
fn identity_scusfl_matches_usfl() {
    let (train, test) = small_data(128, 64, 3.0);
    let usfl = base(Regime::Usfl, 2, 10);
    let sc = identity_scusfl(usfl.clone());
    let a = run_in_memory(&usfl, &train, &test, &NoProbe).unwrap();
    let b = run_in_memory(&sc, &train, &test, &NoProbe).unwrap();
    assert_close(&losses(&a.records), &losses(&b.records), 1e-9);
    assert!(losses(&a.records).windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn single_client_chain_matches_centralized() {
    let (train, test) = small_data(128, 64, 3.0);
    let central = run_in_memory(&base(Regime::Centralized, 1, 3), &train, &test, &NoProbe).unwrap();
    let c = losses(&central.records);
    let fl = run_in_memory(&base(Regime::Fl, 1, 3), &train, &test, &NoProbe).unwrap();
    assert_eq!(losses(&fl.records), c);
    let usfl = run_in_memory(&base(Regime::Usfl, 1, 3), &train, &test, &NoProbe).unwrap();
    assert_close(&losses(&usfl.records), &c, 1e-9);
    let sc = run_in_memory(&identity_scusfl(base(Regime::Usfl, 1, 3)), &train, &test, &NoProbe).unwrap();
    assert_close(&losses(&sc.records), &c, 1e-9);
}

#[test]
fn sfl_tracks_usfl() {
    let (train, test) = small_data(256, 200, 3.0);
    let mut u = base(Regime::Usfl, 2, 8);
    u.data.train_size = 256;
    u.data.test_size = 200;
    let s = scusfl::orchestrator::RunConfig {
        regime: Regime::Sfl,
        ..u.clone()
    };
    let a = run_in_memory(&u, &train, &test, &NoProbe).unwrap();
    let b = run_in_memory(&s, &train, &test, &NoProbe).unwrap();
    let (ua, sa) = (a.summary.final_test_accuracy, b.summary.final_test_accuracy);
    assert!((ua - sa).abs() <= 0.02, "usfl {ua} sfl {sa}");
    assert_close(&losses(&a.records), &losses(&b.records), 1e-9);
}
