//! Simulation time: integer seconds.

use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A point in simulated time, in seconds since the start of the run.
pub type SimTime = u64;

pub const MINUTE: u64 = 60;
pub const HOUR: u64 = 3600;
pub const DAY: u64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid duration '{0}': expected an integer with optional unit s, m, h or d")]
pub struct DurationError(pub String);

/// A span of simulated time in whole seconds.
///
/// Text form is an integer with an optional unit suffix (`90`, `90s`, `5m`,
/// `12h`, `30d`). Scenario files accept either that string or a bare integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimDuration(pub u64);

impl SimDuration {
    pub const fn secs(s: u64) -> Self {
        SimDuration(s)
    }

    pub const fn minutes(m: u64) -> Self {
        SimDuration(m * MINUTE)
    }

    pub const fn hours(h: u64) -> Self {
        SimDuration(h * HOUR)
    }

    pub const fn days(d: u64) -> Self {
        SimDuration(d * DAY)
    }

    pub fn as_secs(self) -> u64 {
        self.0
    }

    pub fn as_hours_f64(self) -> f64 {
        self.0 as f64 / HOUR as f64
    }

    pub fn parse(text: &str) -> Result<Self, DurationError> {
        let t = text.trim();
        let err = || DurationError(text.to_string());
        let (digits, unit) = match t.char_indices().find(|(_, c)| !c.is_ascii_digit()) {
            Some((i, _)) => (&t[..i], &t[i..]),
            None => (t, ""),
        };
        if digits.is_empty() {
            return Err(err());
        }
        let n: u64 = digits.parse().map_err(|_| err())?;
        let scale = match unit {
            "" | "s" => 1,
            "m" => MINUTE,
            "h" => HOUR,
            "d" => DAY,
            _ => return Err(err()),
        };
        n.checked_mul(scale).map(SimDuration).ok_or_else(err)
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0;
        if s != 0 && s % DAY == 0 {
            write!(f, "{}d", s / DAY)
        } else if s != 0 && s % HOUR == 0 {
            write!(f, "{}h", s / HOUR)
        } else if s != 0 && s % MINUTE == 0 {
            write!(f, "{}m", s / MINUTE)
        } else {
            write!(f, "{s}s")
        }
    }
}

impl std::str::FromStr for SimDuration {
    type Err = DurationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SimDuration::parse(s)
    }
}

impl Serialize for SimDuration {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SimDuration {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Visitor;

        impl de::Visitor<'_> for Visitor {
            type Value = SimDuration;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative number of seconds or a string like \"30m\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<SimDuration, E> {
                Ok(SimDuration(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<SimDuration, E> {
                u64::try_from(v)
                    .map(SimDuration)
                    .map_err(|_| E::custom(format!("negative duration {v}")))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<SimDuration, E> {
                SimDuration::parse(v).map_err(E::custom)
            }
        }

        deserializer.deserialize_any(Visitor)
    }
}
