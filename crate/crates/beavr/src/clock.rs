//! Host-wide monotonic clock.
//!
//! `std::time::Instant` is opaque, so timestamps that cross thread and
//! process boundaries are read from `CLOCK_MONOTONIC` directly.

use std::time::Duration;

pub fn monotonic_ns() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    assert_eq!(rc, 0, "CLOCK_MONOTONIC unavailable");
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

/// Sleeps until the monotonic clock reads at least `deadline_ns`, using an
/// absolute-time sleep so a late wakeup never shifts later deadlines.
pub fn sleep_until(deadline_ns: u64) {
    let ts = libc::timespec {
        tv_sec: (deadline_ns / 1_000_000_000) as libc::time_t,
        tv_nsec: (deadline_ns % 1_000_000_000) as libc::c_long,
    };
    while monotonic_ns() < deadline_ns {
        // SAFETY: `ts` is a valid timespec; the remainder pointer may be null
        // for absolute sleeps. EINTR just loops.
        unsafe {
            libc::clock_nanosleep(libc::CLOCK_MONOTONIC, libc::TIMER_ABSTIME, &ts, std::ptr::null_mut());
        }
    }
}

/// Sleeps for `duration` in slices, returning early once `stop` is set.
pub fn sleep_while(duration: Duration, stop: impl Fn() -> bool) {
    let deadline = monotonic_ns() + duration.as_nanos() as u64;
    while !stop() {
        let now = monotonic_ns();
        if now >= deadline {
            return;
        }
        sleep_until(deadline.min(now + 10_000_000));
    }
}

/// SCHED_FIFO priority requested by control loops.
pub const CONTROL_PRIORITY: i32 = 20;

/// Runs the calling thread under SCHED_FIFO until dropped, then restores its
/// previous policy. Without the privilege the thread keeps its normal policy
/// and the guard is inert.
pub struct RealtimeGuard {
    previous: Option<(libc::c_int, libc::sched_param)>,
}

impl RealtimeGuard {
    pub fn enter(priority: i32) -> Self {
        // SAFETY: pthread_self is always valid for the calling thread, and
        // both calls only read or write the provided sched_param.
        unsafe {
            let thread = libc::pthread_self();
            let mut policy = 0;
            let mut previous = libc::sched_param { sched_priority: 0 };
            if libc::pthread_getschedparam(thread, &mut policy, &mut previous) != 0 {
                return Self { previous: None };
            }
            let wanted = libc::sched_param { sched_priority: priority };
            match libc::pthread_setschedparam(thread, libc::SCHED_FIFO, &wanted) {
                0 => Self { previous: Some((policy, previous)) },
                err => {
                    log::debug!("real-time priority unavailable (error {err}); using the default scheduler");
                    Self { previous: None }
                }
            }
        }
    }

    pub fn is_active(&self) -> bool {
        self.previous.is_some()
    }
}

impl Drop for RealtimeGuard {
    fn drop(&mut self) {
        if let Some((policy, param)) = self.previous {
            // SAFETY: restores the values read in `enter` on the same thread.
            unsafe {
                libc::pthread_setschedparam(libc::pthread_self(), policy, &param);
            }
        }
    }
}
