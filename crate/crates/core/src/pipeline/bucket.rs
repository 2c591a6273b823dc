/// Integer token bucket driven by simulated time.
///
/// The level is kept in billionths of a token so that refilling at `rate`
/// tokens per second over `dt` nanoseconds is exact: `rate * dt` units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBucket {
    rate_per_sec: u64,
    capacity: u128,
    level: u128,
    last_ns: u64,
}

const SCALE: u128 = 1_000_000_000;

impl TokenBucket {
    /// Starts full.
    pub fn new(rate_per_sec: u64, depth: u64) -> Self {
        let capacity = depth as u128 * SCALE;
        Self {
            rate_per_sec,
            capacity,
            level: capacity,
            last_ns: 0,
        }
    }

    fn refill(&mut self, now_ns: u64) {
        if now_ns > self.last_ns {
            let added = self.rate_per_sec as u128 * (now_ns - self.last_ns) as u128;
            self.level = (self.level + added).min(self.capacity);
            self.last_ns = now_ns;
        }
    }

    /// Takes `n` whole tokens at `now_ns` if all of them are available.
    pub fn try_take(&mut self, now_ns: u64, n: u64) -> bool {
        self.refill(now_ns);
        let need = n as u128 * SCALE;
        if self.level >= need {
            self.level -= need;
            true
        } else {
            false
        }
    }

    pub fn available(&mut self, now_ns: u64) -> u64 {
        self.refill(now_ns);
        (self.level / SCALE) as u64
    }
}
