//! Token-bucket limits on requests per minute and tokens per minute.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimits {
    pub requests_per_minute: Option<u32>,
    pub tokens_per_minute: Option<u64>,
}

#[derive(Debug)]
struct Bucket {
    capacity: f64,
    available: f64,
    per_second: f64,
    last: Instant,
}

impl Bucket {
    fn per_minute(capacity: f64, now: Instant) -> Self {
        Bucket {
            capacity,
            available: capacity,
            per_second: capacity / 60.0,
            last: now,
        }
    }

    fn refill(&mut self, now: Instant) {
        let elapsed = now.duration_since(self.last).as_secs_f64();
        self.available = (self.available + elapsed * self.per_second).min(self.capacity);
        self.last = now;
    }

    fn wait_for(&self, amount: f64) -> Duration {
        let missing = amount.min(self.capacity) - self.available;
        if missing <= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(missing / self.per_second)
        }
    }
}

#[derive(Debug)]
pub struct RateLimiter {
    buckets: Mutex<(Option<Bucket>, Option<Bucket>)>,
}

impl RateLimiter {
    pub fn new(limits: RateLimits) -> Self {
        let now = Instant::now();
        RateLimiter {
            buckets: Mutex::new((
                limits
                    .requests_per_minute
                    .map(|r| Bucket::per_minute(f64::from(r), now)),
                limits
                    .tokens_per_minute
                    .map(|t| Bucket::per_minute(t as f64, now)),
            )),
        }
    }

    /// Blocks until one request carrying `tokens` fits both buckets.
    pub fn acquire(&self, tokens: u64) {
        loop {
            let wait = {
                let mut guard = self.buckets.lock().unwrap();
                let now = Instant::now();
                let (requests, token_bucket) = &mut *guard;
                let mut wait = Duration::ZERO;
                if let Some(b) = requests.as_mut() {
                    b.refill(now);
                    wait = wait.max(b.wait_for(1.0));
                }
                if let Some(b) = token_bucket.as_mut() {
                    b.refill(now);
                    wait = wait.max(b.wait_for(tokens as f64));
                }
                if wait.is_zero() {
                    if let Some(b) = requests.as_mut() {
                        b.available -= 1.0;
                    }
                    if let Some(b) = token_bucket.as_mut() {
                        b.available -= (tokens as f64).min(b.capacity);
                    }
                    return;
                }
                wait
            };
            thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unlimited_never_blocks() {
        let limiter = RateLimiter::new(RateLimits::default());
        let start = Instant::now();
        for _ in 0..1000 {
            limiter.acquire(1_000_000);
        }
        assert!(start.elapsed() < Duration::from_millis(100));
    }

    #[test]
    fn request_bucket_throttles() {
        // 600 rpm = one request per 100 ms once the burst is spent
        let limiter = RateLimiter::new(RateLimits {
            requests_per_minute: Some(600),
            tokens_per_minute: None,
        });
        for _ in 0..600 {
            limiter.acquire(0);
        }
        let start = Instant::now();
        limiter.acquire(0);
        limiter.acquire(0);
        let elapsed = start.elapsed();
        assert!(elapsed >= Duration::from_millis(150), "{elapsed:?}");
    }

    #[test]
    fn oversized_request_is_clamped() {
        let limiter = RateLimiter::new(RateLimits {
            requests_per_minute: None,
            tokens_per_minute: Some(60_000),
        });
        let start = Instant::now();
        limiter.acquire(1_000_000);
        assert!(start.elapsed() < Duration::from_millis(50));
    }
}
