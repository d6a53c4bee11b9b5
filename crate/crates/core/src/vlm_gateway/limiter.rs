//! Request admission: a token bucket for requests per minute and a
//! semaphore for requests in flight. Both use tokio's clock, so tests can
//! run them under paused time.

use std::sync::Arc;

use tokio::sync::{Mutex, OwnedSemaphorePermit, Semaphore};
use tokio::time::{Duration, Instant};

/// Token bucket holding up to `capacity` tokens, refilled at
/// `per_minute / 60` tokens per second.
///
/// Over any 60 s interval at most `capacity + per_minute` tokens are handed out.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<BucketState>,
}

#[derive(Debug)]
struct BucketState {
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn new(capacity: usize, per_minute: u32) -> Self {
        let capacity = capacity.max(1) as f64;
        Self {
            capacity,
            per_second: per_minute.max(1) as f64 / 60.0,
            state: Mutex::new(BucketState {
                tokens: capacity,
                last: Instant::now(),
            }),
        }
    }

    pub async fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().await;
                let now = Instant::now();
                let elapsed = now.duration_since(s.last).as_secs_f64();
                s.tokens = (s.tokens + elapsed * self.per_second).min(self.capacity);
                s.last = now;
                if s.tokens >= 1.0 {
                    s.tokens -= 1.0;
                    return;
                }
                (1.0 - s.tokens) / self.per_second
            };
            tokio::time::sleep(Duration::from_secs_f64(wait)).await;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Limiter {
    bucket: Arc<TokenBucket>,
    inflight: Arc<Semaphore>,
}

impl Limiter {
    pub fn new(max_inflight: usize, per_minute: u32) -> Self {
        Self {
            bucket: Arc::new(TokenBucket::new(max_inflight, per_minute)),
            inflight: Arc::new(Semaphore::new(max_inflight.max(1))),
        }
    }

    /// Wait for a rate token, then for an in-flight slot. The slot is
    /// released when the returned permit drops.
    pub async fn admit(&self) -> OwnedSemaphorePermit {
        self.bucket.acquire().await;
        self.inflight
            .clone()
            .acquire_owned()
            .await
            .expect("limiter semaphore is never closed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test(start_paused = true)]
    async fn bucket_allows_burst_then_paces() {
        let bucket = TokenBucket::new(3, 60);
        let start = Instant::now();
        for _ in 0..3 {
            bucket.acquire().await;
        }
        assert_eq!(start.elapsed(), Duration::ZERO);
        bucket.acquire().await;
        let waited = start.elapsed().as_secs_f64();
        assert!((waited - 1.0).abs() < 0.01, "{waited}");
    }
}
