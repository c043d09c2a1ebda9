//! Integer-nanosecond simulation time.
//!
//! All internal arithmetic is exact; microseconds only appear at the edges
//! (scenario files, reports).

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

pub const NS_PER_US: i64 = 1_000;

/// A point in time or a duration, in nanoseconds.
#[derive(
    Debug, Default, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Nanos(pub i64);

impl Nanos {
    pub const ZERO: Nanos = Nanos(0);

    pub const fn from_us(us: i64) -> Self {
        Nanos(us * NS_PER_US)
    }

    /// Rounds to the nearest nanosecond.
    pub fn from_us_f64(us: f64) -> Self {
        Nanos((us * NS_PER_US as f64).round() as i64)
    }

    pub fn as_us_f64(self) -> f64 {
        self.0 as f64 / NS_PER_US as f64
    }

    pub const fn as_ns(self) -> i64 {
        self.0
    }

    /// Time needed to serialize `bytes` onto a link of `rate_bps`, rounded up.
    pub fn transmission(bytes: u64, rate_bps: u64) -> Self {
        let bits = bytes as u128 * 8;
        let ns = (bits * 1_000_000_000).div_ceil(rate_bps as u128);
        Nanos(ns as i64)
    }

    /// Floor division by a positive slot length, valid for negative times too.
    pub fn slots(self, slot: Nanos) -> i64 {
        self.0.div_euclid(slot.0)
    }

    /// Exact microsecond rendering with three decimals, e.g. `101.200`.
    pub fn to_us_string(self) -> String {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        format!("{sign}{}.{:03}", abs / 1_000, abs % 1_000)
    }

    /// Inverse of [`Nanos::to_us_string`]; accepts up to three decimals.
    pub fn parse_us(s: &str) -> Option<Self> {
        let s = s.trim();
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int.is_empty() || frac.len() > 3 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let whole: i64 = int.parse().ok()?;
        let mut frac_ns: i64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
        for _ in frac.len()..3 {
            frac_ns *= 10;
        }
        let ns = whole.checked_mul(NS_PER_US)?.checked_add(frac_ns)?;
        Some(Nanos(if neg { -ns } else { ns }))
    }
}

impl fmt::Display for Nanos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.to_us_string())
    }
}

impl Add for Nanos {
    type Output = Nanos;
    fn add(self, rhs: Nanos) -> Nanos {
        Nanos(self.0 + rhs.0)
    }
}

impl AddAssign for Nanos {
    fn add_assign(&mut self, rhs: Nanos) {
        self.0 += rhs.0;
    }
}

impl Sub for Nanos {
    type Output = Nanos;
    fn sub(self, rhs: Nanos) -> Nanos {
        Nanos(self.0 - rhs.0)
    }
}

impl Mul<i64> for Nanos {
    type Output = Nanos;
    fn mul(self, rhs: i64) -> Nanos {
        Nanos(self.0 * rhs)
    }
}

impl Sum for Nanos {
    fn sum<I: Iterator<Item = Nanos>>(iter: I) -> Nanos {
        Nanos(iter.map(|n| n.0).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn transmission_time_at_gigabit() {
        // 1 Gbit/s: one bit per nanosecond.
        assert_eq!(Nanos::transmission(1542, 1_000_000_000), Nanos(12_336));
        // 100 Mbit/s, rounded up.
        assert_eq!(Nanos::transmission(1, 300_000_000), Nanos(27));
    }

    #[test]
    fn slots_floor_negative() {
        assert_eq!(Nanos(-1).slots(Nanos(50_000)), -1);
        assert_eq!(Nanos(50_000).slots(Nanos(50_000)), 1);
    }

    #[test]
    fn us_string_examples() {
        assert_eq!(Nanos(101_200).to_us_string(), "101.200");
        assert_eq!(Nanos(-5).to_us_string(), "-0.005");
        assert_eq!(Nanos::parse_us("0.1"), Some(Nanos(100)));
        assert_eq!(Nanos::parse_us("12"), Some(Nanos(12_000)));
        assert_eq!(Nanos::parse_us("1.2345"), None);
    }

    proptest! {
        #[test]
        fn us_string_round_trips(ns in -10_000_000_000i64..10_000_000_000) {
            prop_assert_eq!(Nanos::parse_us(&Nanos(ns).to_us_string()), Some(Nanos(ns)));
        }
    }
}
