use std::io::Read;
use std::net::TcpStream;
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use beavr::netcore::{bind_count, register_publisher, Endpoint, HandshakeToken, NetError, QueuePolicy, RetryPolicy, Subscriber};

// Each test owns a distinct port pair (publisher port and its ack port).
fn ep(port: u16) -> Endpoint {
    Endpoint::localhost(port).unwrap()
}

fn collect(sub: &Subscriber, n: usize, timeout: Duration) -> Vec<beavr::core::TopicFrame> {
    let start = Instant::now();
    let mut out = Vec::new();
    while out.len() < n && start.elapsed() < timeout {
        if let Some(f) = sub.recv_timeout(Duration::from_millis(20)).unwrap() {
            out.push(f);
        }
    }
    out
}

#[test]
fn same_endpoint_shares_one_publisher() {
    let a = register_publisher(&ep(20000), QueuePolicy::control()).unwrap();
    let b = register_publisher(&ep(20000), QueuePolicy::bulk()).unwrap();
    let c = register_publisher(&ep(20002), QueuePolicy::control()).unwrap();
    assert!(a.same_publisher(&b));
    assert!(!a.same_publisher(&c));
    assert_eq!(b.policy(), QueuePolicy::control());
    assert_eq!(bind_count(&ep(20000)), 1);
}

#[test]
fn concurrent_registration_binds_once() {
    let endpoint = ep(20004);
    let barrier = Arc::new(Barrier::new(100));
    let handles: Vec<_> = (0..100)
        .map(|_| {
            let (barrier, endpoint) = (barrier.clone(), endpoint.clone());
            std::thread::spawn(move || {
                barrier.wait();
                register_publisher(&endpoint, QueuePolicy::bulk()).unwrap()
            })
        })
        .collect();
    let pubs: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(pubs.iter().all(|p| p.same_publisher(&pubs[0])));
    assert_eq!(bind_count(&endpoint), 1);
}

#[test]
fn prefix_filtering() {
    let publisher = register_publisher(&ep(20006), QueuePolicy::bulk()).unwrap();
    let buttons = Subscriber::new(&ep(20006), "button");
    let transformed = Subscriber::new(&ep(20006), "TRANSFORMED_");
    let all = Subscriber::new(&ep(20006), "");
    for s in [&buttons, &transformed, &all] {
        assert!(s.wait_connected(Duration::from_secs(2)));
    }
    while publisher.subscriber_count() < 3 {
        std::thread::sleep(Duration::from_millis(5));
    }
    for topic in ["right", "button", "pause", "TRANSFORMED_left", "TRANSFORMED_right", "button"] {
        publisher.publish(topic, topic.as_bytes()).unwrap();
    }
    let got = collect(&all, 6, Duration::from_secs(2));
    assert_eq!(got.len(), 6);
    let got = collect(&buttons, 2, Duration::from_secs(2));
    assert!(got.iter().all(|f| f.topic == "button" && f.payload == b"button"));
    assert_eq!(got.len(), 2);
    let got: Vec<String> = collect(&transformed, 2, Duration::from_secs(2)).into_iter().map(|f| f.topic).collect();
    assert_eq!(got, ["TRANSFORMED_left", "TRANSFORMED_right"]);
    std::thread::sleep(Duration::from_millis(50));
    assert!(buttons.try_recv().unwrap().is_none());
}

#[test]
fn stalled_queue_keeps_newest_frames() {
    let publisher = register_publisher(&ep(20008), QueuePolicy::new(3).unwrap()).unwrap();
    let sub = Subscriber::new(&ep(20008), "");
    assert!(sub.wait_connected(Duration::from_secs(2)));
    while publisher.subscriber_count() < 1 {
        std::thread::sleep(Duration::from_millis(5));
    }
    let stall = publisher.stall();
    let mut dropped = 0;
    for i in 0u8..5 {
        dropped += publisher.publish("seq", &[i]).unwrap().dropped;
    }
    assert_eq!(publisher.queued(), 3);
    assert_eq!(dropped, 2);
    assert_eq!(publisher.dropped_total(), 2);
    drop(stall);
    let got: Vec<u8> = collect(&sub, 3, Duration::from_secs(2)).iter().map(|f| f.payload[0]).collect();
    assert_eq!(got, [2, 3, 4]);

    let bulk = register_publisher(&ep(20010), QueuePolicy::new(1000).unwrap()).unwrap();
    assert_eq!(bulk.publish("t", b"x").unwrap().dropped, 0);
}

#[test]
fn queue_stays_bounded_behind_a_non_reading_peer() {
    let publisher = register_publisher(&ep(20012), QueuePolicy::new(8).unwrap()).unwrap();
    // raw peer that never reads: kernel buffers fill and writes stall
    let _peer = TcpStream::connect(("127.0.0.1", 20012)).unwrap();
    while publisher.subscriber_count() < 1 {
        publisher.publish("warmup", b"").unwrap();
        std::thread::sleep(Duration::from_millis(5));
    }
    let payload = vec![0xab; 256 * 1024];
    let mut max_queued = 0;
    for _ in 0..200 {
        let status = publisher.publish("bulk", &payload).unwrap();
        max_queued = max_queued.max(status.queued).max(publisher.queued());
    }
    assert!(max_queued <= 8, "queued {max_queued}");
    assert!(publisher.dropped_total() > 0);
}

#[test]
fn closed_publisher_rejects_publish() {
    let publisher = register_publisher(&ep(20014), QueuePolicy::control()).unwrap();
    let other = register_publisher(&ep(20014), QueuePolicy::control()).unwrap();
    publisher.shutdown();
    assert!(matches!(other.publish("t", b""), Err(NetError::Closed(_))));
    // a fresh registration binds a new socket
    let again = register_publisher(&ep(20014), QueuePolicy::control()).unwrap();
    assert!(!again.same_publisher(&other));
    assert!(again.publish("t", b"").is_ok());
}

#[test]
fn per_publisher_order_is_preserved() {
    let publisher = register_publisher(&ep(20016), QueuePolicy::bulk()).unwrap();
    let sub = Subscriber::new(&ep(20016), "n");
    assert!(sub.wait_connected(Duration::from_secs(2)));
    while publisher.subscriber_count() < 1 {
        std::thread::sleep(Duration::from_millis(5));
    }
    for i in 0u32..5000 {
        publisher.publish("n", &i.to_le_bytes()).unwrap();
    }
    let got = collect(&sub, 5000, Duration::from_secs(5));
    let seq: Vec<u32> = got.iter().map(|f| u32::from_le_bytes(f.payload[..4].try_into().unwrap())).collect();
    assert!(seq.windows(2).all(|w| w[0] < w[1]), "reordered");
    assert!(!seq.is_empty());
}

#[test]
fn critical_delivery_to_connected_subscriber() {
    let publisher = register_publisher(&ep(20018), QueuePolicy::control()).unwrap();
    let sub = Subscriber::new(&ep(20018), "pause");
    assert!(sub.wait_connected(Duration::from_secs(2)));
    let token = HandshakeToken::new(1, Duration::from_millis(1000)).unwrap();
    let report = publisher.publish_critical("pause", b"now", &token).unwrap();
    assert_eq!(report.acks, 1);
    let got = collect(&sub, 1, Duration::from_secs(1));
    assert_eq!((got[0].topic.as_str(), got[0].payload.as_slice()), ("pause", &b"now"[..]));
    // re-sent copies are deduplicated
    std::thread::sleep(Duration::from_millis(60));
    assert!(sub.drain().unwrap().is_empty());
}

#[test]
fn critical_without_subscribers_times_out() {
    let publisher = register_publisher(&ep(20020), QueuePolicy::control()).unwrap();
    let token = HandshakeToken::new(1, Duration::from_millis(100)).unwrap();
    let start = Instant::now();
    match publisher.publish_critical("pause", b"", &token) {
        Err(NetError::HandshakeTimeout { acks: 0, required: 1 }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert!(start.elapsed() >= Duration::from_millis(100));
}

#[test]
fn slow_joiner_misses_plain_but_not_critical() {
    let publisher = register_publisher(&ep(20022), QueuePolicy::control()).unwrap();
    publisher.publish("pause", b"plain").unwrap();
    let joiner = std::thread::spawn(|| {
        std::thread::sleep(Duration::from_millis(50));
        let sub = Subscriber::new(&ep(20022), "pause");
        let got = collect(&sub, 1, Duration::from_secs(2));
        std::thread::sleep(Duration::from_millis(100));
        let mut all = got;
        all.extend(sub.drain().unwrap());
        all
    });
    std::thread::sleep(Duration::from_millis(10));
    publisher.publish("pause", b"plain").unwrap();
    let token = HandshakeToken::new(1, Duration::from_millis(1000)).unwrap();
    let report = publisher.publish_critical("pause", b"critical", &token).unwrap();
    assert_eq!(report.acks, 1);
    let got = joiner.join().unwrap();
    let payloads: Vec<&[u8]> = got.iter().map(|f| f.payload.as_slice()).collect();
    assert_eq!(payloads, [&b"critical"[..]]);
}

#[test]
fn critical_waits_for_required_acks() {
    let publisher = register_publisher(&ep(20024), QueuePolicy::control()).unwrap();
    let subs: Vec<_> = (0..3).map(|_| Subscriber::new(&ep(20024), "")).collect();
    let token = HandshakeToken::new(3, Duration::from_millis(2000)).unwrap();
    assert_eq!(publisher.publish_critical("button", b"1", &token).unwrap().acks, 3);
    let token = HandshakeToken::new(4, Duration::from_millis(150)).unwrap();
    assert!(matches!(
        publisher.publish_critical("button", b"2", &token),
        Err(NetError::HandshakeTimeout { acks: 3, required: 4 })
    ));
    drop(subs);
}

#[test]
fn unreachable_endpoint_errors_after_retry_budget() {
    let retry = RetryPolicy { interval: Duration::from_millis(5), max_attempts: Some(3) };
    let sub = Subscriber::with_options(&ep(20026), "", retry, 16);
    match sub.recv_timeout(Duration::from_secs(3)) {
        Err(NetError::Unreachable { attempts: 3, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn subscriber_reconnects_after_publisher_restart() {
    let sub = Subscriber::new(&ep(20028), "x");
    let publisher = register_publisher(&ep(20028), QueuePolicy::bulk()).unwrap();
    assert!(sub.wait_connected(Duration::from_secs(2)));
    publisher.shutdown();
    drop(publisher);
    let publisher = register_publisher(&ep(20028), QueuePolicy::bulk()).unwrap();
    let start = Instant::now();
    let mut got = None;
    while got.is_none() && start.elapsed() < Duration::from_secs(3) {
        publisher.publish("x", b"again").unwrap();
        got = sub.recv_timeout(Duration::from_millis(20)).unwrap();
    }
    assert_eq!(got.unwrap().payload, b"again");
}

#[test]
fn raw_bytes_on_the_wire_match_the_frame_layout() {
    let publisher = register_publisher(&ep(20030), QueuePolicy::bulk()).unwrap();
    let mut raw = TcpStream::connect(("127.0.0.1", 20030)).unwrap();
    while publisher.subscriber_count() < 1 {
        publisher.publish("warm", b"").unwrap();
        std::thread::sleep(Duration::from_millis(5));
    }
    publisher.publish_stamped("pause", 0, b"").unwrap();
    raw.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    let mut buf = Vec::new();
    let expected = [1u8, 5, 0, b'p', b'a', b'u', b's', b'e', 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
    let mut chunk = [0u8; 256];
    while !buf.windows(expected.len()).any(|w| w == expected) {
        let n = raw.read(&mut chunk).unwrap();
        assert!(n > 0);
        buf.extend_from_slice(&chunk[..n]);
    }
}
