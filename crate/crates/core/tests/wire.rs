mod common;

use beavr_core::wire::{decode_frame, decode_prefix, encode_frame, TopicFrame, WireError, MAX_TOPIC_LEN};
use rand::Rng;

use common::*;

fn random_topic(rng: &mut impl Rng) -> String {
    let len = rng.random_range(1..=MAX_TOPIC_LEN);
    if rng.random_bool(0.2) {
        // multi-byte characters, trimmed to the byte budget
        let mut s = String::new();
        while s.len() + 3 <= len {
            s.push(char::from_u32(rng.random_range(0x4e00..0x9fff)).unwrap());
        }
        if s.is_empty() {
            s.push('t');
        }
        s
    } else {
        (0..len).map(|_| rng.random_range(b'!'..=b'~') as char).collect()
    }
}

#[test]
fn round_trip_of_random_frames() {
    let mut rng = rng(21);
    let mut stream = Vec::new();
    let mut frames = Vec::new();
    for i in 0..10_000 {
        let payload_len = if i % 100 == 0 { rng.random_range(0..65_536) } else { rng.random_range(0..256) };
        let payload: Vec<u8> = (0..payload_len).map(|_| rng.random()).collect();
        let frame = TopicFrame::new(random_topic(&mut rng), rng.random(), payload);
        let bytes = encode_frame(&frame).unwrap();
        assert_eq!(bytes.len(), frame.encoded_len());
        assert_eq!(decode_frame(&bytes).unwrap(), frame);
        stream.extend_from_slice(&bytes);
        frames.push(frame);
    }
    // concatenated frames decode back in order
    let mut rest = &stream[..];
    for expected in &frames {
        let (frame, used) = decode_prefix(rest).unwrap();
        assert_eq!(&frame, expected);
        rest = &rest[used..];
    }
    assert!(rest.is_empty());
}

#[test]
fn every_truncation_is_detected() {
    let frame = TopicFrame::new("endeff_coords/arm", 0x0102_0304_0506_0708, vec![9; 40]);
    let bytes = encode_frame(&frame).unwrap();
    for cut in 0..bytes.len() {
        assert!(matches!(decode_frame(&bytes[..cut]), Err(WireError::Truncated { .. })), "cut {cut}");
    }
}

#[test]
fn header_fields_are_little_endian() {
    let bytes = encode_frame(&TopicFrame::new("ab", 0x1122_3344_5566_7788, vec![0xaa; 3])).unwrap();
    assert_eq!(&bytes[..5], &[1, 2, 0, b'a', b'b']);
    assert_eq!(&bytes[5..13], &[0x88, 0x77, 0x66, 0x55, 0x44, 0x33, 0x22, 0x11]);
    assert_eq!(&bytes[13..17], &[3, 0, 0, 0]);
    assert_eq!(&bytes[17..], &[0xaa; 3]);
}
