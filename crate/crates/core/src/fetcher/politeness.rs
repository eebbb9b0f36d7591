//! Per-domain admission control within one instance.
//!
//! A permit is required before each fetch start. Per domain, at most
//! `max_concurrent` permits are out at once and successive permit grants are
//! at least `min_interval` apart. Cross-instance politeness is not
//! coordinated: the store does not arbitrate timing.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::sync::Notify;
use tokio::time::Instant;

#[derive(Debug, Clone)]
pub struct PolitenessPolicy {
    /// Minimum spacing between fetch starts on one domain.
    pub min_interval: Duration,
    /// Maximum simultaneous fetches per domain.
    pub max_concurrent: usize,
}

impl Default for PolitenessPolicy {
    fn default() -> Self {
        PolitenessPolicy {
            min_interval: Duration::from_secs(1),
            max_concurrent: 2,
        }
    }
}

impl PolitenessPolicy {
    /// No spacing, effectively unlimited concurrency; for loopback test webs.
    pub fn unrestricted() -> Self {
        PolitenessPolicy {
            min_interval: Duration::ZERO,
            max_concurrent: usize::MAX,
        }
    }
}

#[derive(Default)]
struct DomainSlot {
    in_flight: usize,
    next_start: Option<Instant>,
}

pub struct PolitenessGate {
    policy: PolitenessPolicy,
    slots: Mutex<HashMap<String, DomainSlot>>,
    released: Notify,
}

/// Held for the duration of one fetch; dropping it frees the domain slot.
pub struct PolitenessPermit {
    gate: Arc<PolitenessGate>,
    domain: String,
}

impl Drop for PolitenessPermit {
    fn drop(&mut self) {
        let mut slots = self.gate.slots.lock().expect("politeness lock");
        if let Some(slot) = slots.get_mut(&self.domain) {
            slot.in_flight = slot.in_flight.saturating_sub(1);
        }
        drop(slots);
        self.gate.released.notify_waiters();
    }
}

impl PolitenessGate {
    pub fn new(policy: PolitenessPolicy) -> Arc<Self> {
        Arc::new(PolitenessGate {
            policy,
            slots: Mutex::new(HashMap::new()),
            released: Notify::new(),
        })
    }

    /// Blocks until the domain may start another fetch. Fairness between
    /// waiters of one domain is best-effort.
    pub async fn acquire(self: &Arc<Self>, domain: &str) -> PolitenessPermit {
        loop {
            let wait_until: Option<Instant>;
            {
                let mut slots = self.slots.lock().expect("politeness lock");
                let slot = slots.entry(domain.to_string()).or_default();
                let now = Instant::now();
                let interval_ok = slot.next_start.map_or(true, |t| now >= t);
                if slot.in_flight < self.policy.max_concurrent && interval_ok {
                    slot.in_flight += 1;
                    if !self.policy.min_interval.is_zero() {
                        slot.next_start = Some(now + self.policy.min_interval);
                    }
                    return PolitenessPermit {
                        gate: Arc::clone(self),
                        domain: domain.to_string(),
                    };
                }
                wait_until = if interval_ok { None } else { slot.next_start };
            }
            // Wake on permit release or when the interval elapses; the
            // 50 ms cap makes a missed notification harmless.
            let fallback = Instant::now() + Duration::from_millis(50);
            let deadline = wait_until.map_or(fallback, |t| t.min(fallback));
            tokio::select! {
                _ = tokio::time::sleep_until(deadline) => {}
                _ = self.released.notified() => {}
            }
        }
    }
}
