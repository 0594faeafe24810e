mod common;

use std::sync::atomic::AtomicBool;
use std::time::Duration;

use beavr::pipeline::think_act::{think_act_loop, Policy, PolicyError, ScriptedPolicy, ThinkActConfig, ThinkActReport};
use common::serial;

const DOF: usize = 7;

fn run(policy: impl Policy + 'static, config: &ThinkActConfig) -> (ThinkActReport, Vec<Vec<f64>>) {
    let mut applied = Vec::new();
    let report = think_act_loop(policy, config, || vec![0.1; DOF], |a| applied.push(a.to_vec()), &AtomicBool::new(false));
    (report, applied)
}

fn assert_cadence(report: &ThinkActReport, rate: f64) {
    let hz = report.achieved_hz().unwrap();
    assert!(hz >= 0.99 * rate, "achieved {hz:.3} Hz");
}

#[test]
fn instant_policy_never_underruns() {
    let _serial = serial();
    let (report, applied) = run(ScriptedPolicy::new(Duration::ZERO, 10), &ThinkActConfig::new(30.0, 10).with_ticks(90));
    assert_eq!(report.ticks, 90);
    assert_eq!(report.underruns, 0);
    assert_eq!(applied.len(), 90);
    assert!(!report.policy_failed);
    assert_cadence(&report, 30.0);
}

#[test]
fn slow_policy_is_hidden_by_a_long_enough_chunk() {
    let _serial = serial();
    // 10 actions cover 333 ms of acting, well over the 100 ms think time
    let (report, applied) =
        run(ScriptedPolicy::new(Duration::from_millis(100), 10), &ThinkActConfig::new(30.0, 10).with_ticks(90));
    assert_eq!(report.underruns, 0);
    assert!(report.chunks >= 9, "{} chunks", report.chunks);
    // every applied action is a fresh one
    assert!(applied.windows(2).all(|w| w[0] != w[1]));
    assert_cadence(&report, 30.0);
}

#[test]
fn policy_slower_than_its_chunk_underruns_but_keeps_cadence() {
    let _serial = serial();
    let (report, applied) = run(ScriptedPolicy::new(Duration::from_millis(500), 5), &ThinkActConfig::new(30.0, 5).with_ticks(90));
    assert!(report.underruns > 0);
    assert_eq!(applied.len(), 90, "an underrun repeats the last action");
    // 5 fresh actions per half second at best
    assert!(report.underruns >= 90 - 5 * report.chunks, "{} underruns, {} chunks", report.underruns, report.chunks);
    assert_cadence(&report, 30.0);
}

#[test]
fn failed_policy_holds_the_last_action() {
    let _serial = serial();
    let (report, applied) =
        run(ScriptedPolicy::new(Duration::from_millis(20), 5).failing_from(2), &ThinkActConfig::new(30.0, 5).with_ticks(60));
    assert!(report.policy_failed);
    assert_eq!(report.chunks, 2);
    assert_eq!(applied.len(), 60);
    let fresh = applied.windows(2).filter(|w| w[0] != w[1]).count() + 1;
    assert_eq!(fresh, 10);
    assert!(applied[10..].iter().all(|a| *a == applied[9]));
    assert_eq!(report.underruns, 50);
    assert_cadence(&report, 30.0);
}

struct Broken;

impl Policy for Broken {
    fn infer(&mut self, _: &[f64]) -> Result<Vec<Vec<f64>>, PolicyError> {
        Err(PolicyError("no model".into()))
    }
}

#[test]
fn policy_failing_before_any_action_applies_nothing() {
    let (report, applied) = run(Broken, &ThinkActConfig::new(30.0, 5).with_ticks(10));
    assert!(report.policy_failed);
    assert_eq!(report.chunks, 0);
    assert!(applied.is_empty());
    assert_eq!(report.underruns, 10);
}
