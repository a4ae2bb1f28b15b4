//! Time sources. Pipeline logic always runs on event timestamps; the clock
//! only decides how long to wait in wall time between them.

use std::str::FromStr;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClockMode {
    /// Wall-clock pacing.
    Realtime,
    /// Virtual time; `speed` paces it at that multiple of real time, `None` runs flat out.
    Virtual { speed: Option<f64> },
}

impl Default for ClockMode {
    fn default() -> Self {
        ClockMode::Virtual { speed: None }
    }
}

impl FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "realtime" => Ok(ClockMode::Realtime),
            "virtual" => Ok(ClockMode::Virtual { speed: None }),
            _ => {
                let factor = s
                    .strip_prefix("virtual:")
                    .ok_or_else(|| format!("unknown clock `{s}` (expected realtime, virtual or virtual:<factor>)"))?;
                let speed: f64 = factor.parse().map_err(|_| format!("invalid speed factor `{factor}`"))?;
                if !(speed > 0.0 && speed.is_finite()) {
                    return Err("speed factor must be positive".into());
                }
                Ok(ClockMode::Virtual { speed: Some(speed) })
            }
        }
    }
}

impl ClockMode {
    pub fn into_clock(self) -> Clock {
        let speed = match self {
            ClockMode::Realtime => Some(1.0),
            ClockMode::Virtual { speed } => speed,
        };
        Clock::new(speed)
    }
}

/// Tracks session time in seconds from the start of the run.
#[derive(Debug, Clone)]
pub struct Clock {
    speed: Option<f64>,
    started: Instant,
    now: f64,
}

impl Clock {
    pub fn new(speed: Option<f64>) -> Self {
        Self {
            speed,
            started: Instant::now(),
            now: 0.0,
        }
    }

    /// A clock that never sleeps.
    pub fn instant() -> Self {
        Self::new(None)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Advances to `t`, sleeping if the clock is paced. Never moves backwards.
    pub fn wait_until(&mut self, t: f64) {
        if t <= self.now {
            return;
        }
        if let Some(speed) = self.speed {
            let target = Duration::from_secs_f64(t / speed);
            let elapsed = self.started.elapsed();
            if target > elapsed {
                std::thread::sleep(target - elapsed);
            }
        }
        self.now = t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_modes() {
        assert_eq!("realtime".parse(), Ok(ClockMode::Realtime));
        assert_eq!("virtual".parse(), Ok(ClockMode::Virtual { speed: None }));
        assert_eq!("virtual:100".parse(), Ok(ClockMode::Virtual { speed: Some(100.0) }));
        assert!("virtual:0".parse::<ClockMode>().is_err());
        assert!("virtual:x".parse::<ClockMode>().is_err());
        assert!("wall".parse::<ClockMode>().is_err());
    }

    #[test]
    fn virtual_clock_jumps() {
        let mut c = Clock::instant();
        let t0 = Instant::now();
        c.wait_until(1000.0);
        assert_eq!(c.now(), 1000.0);
        c.wait_until(5.0);
        assert_eq!(c.now(), 1000.0);
        assert!(t0.elapsed() < Duration::from_millis(100));
    }

    #[test]
    fn paced_clock_sleeps() {
        let mut c = Clock::new(Some(100.0));
        let t0 = Instant::now();
        c.wait_until(2.0);
        assert!(t0.elapsed() >= Duration::from_millis(19));
    }
}
