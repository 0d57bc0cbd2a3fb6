use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

/// Shared token bucket. Capacity is the allowed burst; tokens refill at
/// `rate` per second.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<Bucket>,
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    pub fn new(rate: f64, burst: usize) -> Self {
        let capacity = burst.max(1) as f64;
        Self {
            rate,
            capacity,
            state: Mutex::new(Bucket { tokens: capacity, last: Instant::now() }),
        }
    }

    pub fn is_unlimited(&self) -> bool {
        self.rate.is_infinite()
    }

    /// Block until one request may be issued.
    pub fn acquire(&self) {
        if self.is_unlimited() {
            return;
        }
        loop {
            let wait = {
                let mut b = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let elapsed = now.duration_since(b.last).as_secs_f64();
                b.tokens = (b.tokens + elapsed * self.rate).min(self.capacity);
                b.last = now;
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
                (1.0 - b.tokens) / self.rate
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}
