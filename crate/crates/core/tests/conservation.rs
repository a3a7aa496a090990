//! Byte accounting when a run is cut off with flows still moving.

use ra_iot_sim::harness::{run_once, RunResult, Scenario};

fn cut_short(mut sc: Scenario, horizon: f64) -> RunResult {
    sc.traffic.min_exchanges = 150;
    sc.traffic.lambda_inv = 0.25;
    sc.run.max_sim_time = horizon;
    run_once(&sc).unwrap()
}

fn check(r: &RunResult) {
    let mut open = 0;
    let (mut gen, mut del, mut fly, mut q) = (0, 0, 0, 0);
    for a in &r.accounts {
        assert_eq!(
            a.generated,
            a.delivered + a.in_flight + a.queued,
            "flow {}: {a:?}",
            a.flow
        );
        let f = &r.flows[a.flow as usize];
        if f.completed_at.is_some() {
            assert_eq!((a.delivered, a.in_flight, a.queued), (a.generated, 0, 0));
        } else {
            open += 1;
        }
        gen += a.generated;
        del += a.delivered;
        fly += a.in_flight;
        q += a.queued;
    }
    assert!(open > 0, "horizon too late to leave flows open");
    assert!(fly > 0 && q > 0);
    assert_eq!(gen, del + fly + q);
    assert_eq!(gen, r.report.summary.generated_bytes);
    assert_eq!(del, r.report.summary.delivered_bytes);
}

#[test]
fn coap_bytes_are_conserved() {
    for nstart in [1, 4, 100] {
        check(&cut_short(Scenario::coap(nstart), 30.0));
    }
}

#[test]
fn mqtt_bytes_are_conserved() {
    check(&cut_short(Scenario::mqtt(), 30.0));
    let mut qos1 = Scenario::mqtt();
    qos1.mqtt.qos = 1;
    check(&cut_short(qos1, 30.0));
}

#[test]
fn drained_run_delivers_everything() {
    let mut sc = Scenario::coap(3);
    sc.traffic.min_exchanges = 40;
    sc.traffic.payload_cap = 50_000;
    let r = run_once(&sc).unwrap();
    assert_eq!(r.report.summary.incomplete_flows, 0);
    for a in &r.accounts {
        assert_eq!(a.delivered, a.generated);
    }
}
