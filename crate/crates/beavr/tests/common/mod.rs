#![allow(dead_code)]

use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use beavr::config::{PortConfig, RobotConfig, Role, SessionConfig};
use beavr::core::keypoints::Hand;
use beavr::core::TopicFrame;
use beavr::netcore::Subscriber;

/// Sessions are CPU-heavy on a small host; tests that time them take turns.
pub fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Five publisher ports, each followed by its ack port.
pub fn ports(base: u16) -> PortConfig {
    PortConfig {
        host: "127.0.0.1".into(),
        detector: base,
        transformed: base + 2,
        operator: base + 4,
        interface: base + 6,
        gateway_bus: base + 8,
    }
}

pub fn robot(name: &str, role: Role, hand: Hand) -> RobotConfig {
    let model = match role {
        Role::Arm => "sim-xarm7",
        Role::Hand => "sim-hand16",
    };
    RobotConfig { name: name.into(), model: model.into(), role, hand, end_effector: None }
}

/// Arm and hand on the right hand.
pub fn arm_and_hand(rate: f64, base_port: u16) -> SessionConfig {
    let mut c =
        SessionConfig::new("test", rate, vec![robot("xarm", Role::Arm, Hand::Right), robot("leap", Role::Hand, Hand::Right)]);
    c.ports = ports(base_port);
    c
}

pub fn bimanual(rate: f64, base_port: u16) -> SessionConfig {
    let mut c = SessionConfig::new(
        "test",
        rate,
        vec![
            robot("xarm_right", Role::Arm, Hand::Right),
            robot("leap_right", Role::Hand, Hand::Right),
            robot("xarm_left", Role::Arm, Hand::Left),
            robot("leap_left", Role::Hand, Hand::Left),
        ],
    );
    c.ports = ports(base_port);
    c
}

pub fn collect_for(sub: &Subscriber, duration: Duration) -> Vec<TopicFrame> {
    let start = Instant::now();
    let mut out = Vec::new();
    while start.elapsed() < duration {
        if let Some(f) = sub.recv_timeout(Duration::from_millis(10)).unwrap() {
            out.push(f);
        }
    }
    out
}

pub fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let start = Instant::now();
    while start.elapsed() < timeout {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    f()
}
