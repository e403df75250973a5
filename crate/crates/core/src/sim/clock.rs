/// Virtual time for the simulator, counted in whole physics steps.
///
/// Sleeping accumulates the requested time exactly (in microseconds) and
/// reports how many steps became due, so many short sleeps and one long
/// sleep of the same total drive the same number of steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualClock {
    dt_us: u64,
    elapsed_us: u64,
    steps: u64,
}

impl VirtualClock {
    /// # Panics
    ///
    /// Panics if `dt` rounds to zero microseconds.
    pub fn new(dt: f64) -> Self {
        let dt_us = (dt * 1e6).round() as u64;
        assert!(dt_us > 0, "step length must be at least one microsecond");
        Self {
            dt_us,
            elapsed_us: 0,
            steps: 0,
        }
    }

    pub fn dt_us(&self) -> u64 {
        self.dt_us
    }

    /// Requested virtual time in microseconds.
    pub fn now_us(&self) -> u64 {
        self.elapsed_us
    }

    pub fn now_seconds(&self) -> f64 {
        self.elapsed_us as f64 / 1e6
    }

    /// Steps due so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Advances by `seconds` (negative values count as zero) and returns the
    /// number of newly due steps.
    pub fn sleep(&mut self, seconds: f64) -> u64 {
        let us = if seconds > 0.0 {
            (seconds * 1e6).round() as u64
        } else {
            0
        };
        self.elapsed_us += us;
        let due = self.elapsed_us / self.dt_us;
        let fresh = due - self.steps;
        self.steps = due;
        fresh
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sleeps_advance_whole_steps() {
        let mut clock = VirtualClock::new(0.01);
        assert_eq!(clock.sleep(0.5), 50);
        assert_eq!(clock.now_seconds(), 0.5);
        assert_eq!(clock.sleep(0.02), 2);
        assert_eq!(clock.sleep(0.005), 0);
        assert_eq!(clock.sleep(0.005), 1);
        assert_eq!(clock.sleep(-1.0), 0);
        assert_eq!(clock.now_us(), 530_000);
    }

    #[test]
    fn many_short_sleeps_equal_one_long() {
        let mut short = VirtualClock::new(0.01);
        let total: u64 = (0..100).map(|_| short.sleep(0.01)).sum();
        let mut long = VirtualClock::new(0.01);
        assert_eq!(total, long.sleep(1.0));
        assert_eq!(short, long);
    }
}
