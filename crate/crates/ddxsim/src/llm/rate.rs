//! Request pacing: a token-bucket rate limiter and an in-flight gate.
//!
//! Time is injected through [`Clock`] so tests can audit the bucket without
//! real sleeping.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Monotonic millisecond clock with a blocking sleep.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

/// Wall-clock implementation used outside tests.
#[derive(Debug, Default)]
pub struct SystemClock {
    start: std::sync::OnceLock<std::time::Instant>,
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        let start = self.start.get_or_init(std::time::Instant::now);
        start.elapsed().as_millis() as u64
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Test clock that advances only when slept on.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: std::sync::atomic::AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, ms: u64) {
        self.now.fetch_add(ms, std::sync::atomic::Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(std::sync::atomic::Ordering::SeqCst)
    }

    fn sleep_ms(&self, ms: u64) {
        self.advance(ms);
    }
}

/// Sliding-window limiter enforcing a requests-per-minute cap exactly: no
/// 60-second window ever admits more than the cap.
pub struct RateLimiter {
    per_minute: u32,
    grants: Mutex<std::collections::VecDeque<u64>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32) -> Self {
        RateLimiter {
            per_minute: per_minute.max(1),
            grants: Mutex::new(std::collections::VecDeque::new()),
        }
    }

    /// Block (via `clock.sleep_ms`) until the window has room, then record
    /// the grant.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait_ms = {
                let mut grants = self.grants.lock().unwrap();
                let now = clock.now_ms();
                while grants
                    .front()
                    .is_some_and(|t| now.saturating_sub(*t) >= 60_000)
                {
                    grants.pop_front();
                }
                if (grants.len() as u32) < self.per_minute {
                    grants.push_back(now);
                    return;
                }
                let oldest = *grants.front().expect("window is full");
                (oldest + 60_000).saturating_sub(now)
            };
            clock.sleep_ms(wait_ms.max(1));
        }
    }
}

/// Counting semaphore bounding concurrent in-flight requests.
pub struct InFlightGate {
    max: usize,
    count: Mutex<usize>,
    freed: Condvar,
}

impl InFlightGate {
    pub fn new(max: usize) -> Self {
        InFlightGate {
            max: max.max(1),
            count: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn enter(&self) -> InFlightPermit<'_> {
        let mut count = self.count.lock().unwrap();
        while *count >= self.max {
            count = self.freed.wait(count).unwrap();
        }
        *count += 1;
        InFlightPermit { gate: self }
    }
}

pub struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut count = self.gate.count.lock().unwrap();
        *count -= 1;
        self.gate.freed.notify_one();
    }
}
