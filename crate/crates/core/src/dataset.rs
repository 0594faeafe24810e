//! Frame selection for delta-timestamp queries over one episode.

use alloc::vec::Vec;

/// A resolved query slot: the chosen frame position within the episode and
/// whether it is padding (requested time outside the episode, or no frame
/// within tolerance).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeltaMatch {
    pub position: usize,
    pub is_pad: bool,
}

/// Picks, for each delta, the frame whose timestamp is closest to
/// `timestamps[anchor] + delta`.
///
/// `timestamps` is one episode's non-decreasing timestamp column. A target
/// before the first or after the last frame (by more than `tolerance`)
/// returns the boundary frame as padding; a target inside the episode whose
/// nearest frame is farther than `tolerance` is also padding. Ties go to the
/// earlier frame.
pub fn resolve_deltas(timestamps: &[f64], anchor: usize, deltas: &[f64], tolerance: f64) -> Vec<DeltaMatch> {
    assert!(anchor < timestamps.len(), "anchor outside episode");
    let t_anchor = timestamps[anchor];
    let first = timestamps[0];
    let last = timestamps[timestamps.len() - 1];
    deltas
        .iter()
        .map(|delta| {
            let target = t_anchor + delta;
            if target < first - tolerance {
                return DeltaMatch { position: 0, is_pad: true };
            }
            if target > last + tolerance {
                return DeltaMatch { position: timestamps.len() - 1, is_pad: true };
            }
            let position = nearest(timestamps, target);
            let is_pad = (timestamps[position] - target).abs() > tolerance;
            DeltaMatch { position, is_pad }
        })
        .collect()
}

fn nearest(timestamps: &[f64], target: f64) -> usize {
    let after = timestamps.partition_point(|t| *t < target);
    if after == 0 {
        return 0;
    }
    if after == timestamps.len() {
        return timestamps.partition_point(|t| *t < timestamps[after - 1]);
    }
    let before = after - 1;
    if target - timestamps[before] <= timestamps[after] - target {
        // earliest of any repeated timestamps
        timestamps.partition_point(|t| *t < timestamps[before])
    } else {
        after
    }
}
