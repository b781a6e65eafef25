//! Fixed-point currency with two decimals.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A currency amount stored as an integer number of hundredths.
///
/// All cost arithmetic in the environment happens on this type so that
/// totals, comparisons and tie-breaks are exact and platform independent.
/// Floating point only appears when sampling and is rounded immediately.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cost(i64);

impl Cost {
    pub const ZERO: Cost = Cost(0);
    /// Lower clamp applied to every composite cost.
    pub const FLOOR: Cost = Cost(100);

    pub const fn from_cents(cents: i64) -> Self {
        Cost(cents)
    }

    pub const fn cents(self) -> i64 {
        self.0
    }

    /// Rounds a real amount to two decimals (half away from zero).
    pub fn from_f64_rounded(value: f64) -> Self {
        Cost((value * 100.0).round() as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn max(self, other: Cost) -> Cost {
        if self >= other {
            self
        } else {
            other
        }
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost(self.0 + rhs.0)
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        self.0 += rhs.0;
    }
}

impl Sub for Cost {
    type Output = Cost;
    fn sub(self, rhs: Cost) -> Cost {
        Cost(self.0 - rhs.0)
    }
}

impl Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Cost> for Cost {
    fn sum<I: Iterator<Item = &'a Cost>>(iter: I) -> Cost {
        iter.copied().sum()
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid currency amount `{0}`")]
pub struct ParseCostError(String);

impl FromStr for Cost {
    type Err = ParseCostError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseCostError(s.to_string());
        let trimmed = s.trim();
        let (negative, body) = match trimmed.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, trimmed),
        };
        let (whole, frac) = match body.split_once('.') {
            Some((w, f)) => (w, f),
            None => (body, ""),
        };
        if whole.is_empty() || frac.len() > 2 || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let whole: i64 = whole.parse().map_err(|_| err())?;
        let frac_cents: i64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<i64>().map_err(|_| err())? * 10,
            _ => frac.parse().map_err(|_| err())?,
        };
        let cents = whole * 100 + frac_cents;
        Ok(Cost(if negative { -cents } else { cents }))
    }
}

// Serialized as a JSON number with at most two decimals.
impl Serialize for Cost {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Cost {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Ok(Cost::from_f64_rounded(value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_pads_cents() {
        assert_eq!(Cost::from_cents(2006).to_string(), "20.06");
        assert_eq!(Cost::from_cents(100).to_string(), "1.00");
        assert_eq!(Cost::from_cents(-150).to_string(), "-1.50");
    }

    #[test]
    fn parse_round_trip() {
        for s in ["0.00", "20.06", "15.50", "-3.07"] {
            assert_eq!(s.parse::<Cost>().unwrap().to_string(), s);
        }
        assert_eq!("15".parse::<Cost>().unwrap(), Cost::from_cents(1500));
        assert_eq!("15.5".parse::<Cost>().unwrap(), Cost::from_cents(1550));
        assert!("1.234".parse::<Cost>().is_err());
        assert!("abc".parse::<Cost>().is_err());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(Cost::from_f64_rounded(0.125), Cost::from_cents(13));
        assert_eq!(Cost::from_f64_rounded(-1.504), Cost::from_cents(-150));
    }

    #[test]
    fn json_number_round_trip() {
        let c = Cost::from_cents(2006);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(text, "20.06");
        assert_eq!(serde_json::from_str::<Cost>(&text).unwrap(), c);
    }
}
