//! Desk-scale VR teleoperation stack: pub/sub transport, the
//! detector → operator → interface pipeline, dataset recording and timing
//! benchmarks on top of `beavr-core`.

pub mod bench;
pub mod clock;
pub mod config;
pub mod messages;
pub mod models;
pub mod netcore;
pub mod pipeline;
pub mod recorder;

pub use beavr_core as core;
