use std::collections::VecDeque;
use std::time::Duration;

use tokio::sync::Mutex;
use tokio::time::Instant;

const WINDOW: Duration = Duration::from_secs(60);

/// Sliding one-minute window over request start times.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: u32,
    starts: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(n: u32) -> Self {
        RateLimiter {
            per_minute: n.max(1),
            starts: Mutex::new(VecDeque::new()),
        }
    }

    /// Waits until one more request fits in the window, then records it.
    pub async fn acquire(&self) {
        loop {
            let wait = {
                let mut starts = self.starts.lock().await;
                let now = Instant::now();
                while starts.front().is_some_and(|t| now.duration_since(*t) >= WINDOW) {
                    starts.pop_front();
                }
                if starts.len() < self.per_minute as usize {
                    starts.push_back(now);
                    return;
                }
                WINDOW - now.duration_since(starts[0])
            };
            tokio::time::sleep(wait).await;
        }
    }
}
