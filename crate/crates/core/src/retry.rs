//! Retry with exponential backoff for remote calls.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << attempt.min(16)))
    }

    /// Runs `f` until it succeeds, returns a non-transport error, or the
    /// attempts run out.
    pub fn run<T>(&self, mut f: impl FnMut() -> Result<T>) -> Result<T> {
        let attempts = self.attempts.max(1);
        let mut attempt = 0;
        loop {
            match f() {
                Err(Error::Transport(msg)) if attempt + 1 < attempts => {
                    log::warn!(
                        "transient failure (attempt {}/{attempts}): {msg}",
                        attempt + 1
                    );
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn retries_transport_errors_only() {
        let p = RetryPolicy {
            attempts: 3,
            base_delay_ms: 0,
        };
        let calls = Cell::new(0);
        let r: Result<()> = p.run(|| {
            calls.set(calls.get() + 1);
            Err(Error::Transport("down".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 3);

        calls.set(0);
        let r: Result<()> = p.run(|| {
            calls.set(calls.get() + 1);
            Err(Error::UnparseableAnswer("maybe".into()))
        });
        assert!(matches!(r, Err(Error::UnparseableAnswer(_))));
        assert_eq!(calls.get(), 1);

        calls.set(0);
        let r = p.run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 2 {
                Err(Error::Transport("x".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r.unwrap(), 7);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            attempts: 3,
            base_delay_ms: 100,
        };
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(400));
    }
}
