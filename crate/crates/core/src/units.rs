//! Unit conversions and unit-annotated config quantities.
//!
//! Everything inside the crate is SI (m, s, m/s). Config files may write a
//! bare number (taken as SI) or a string with an explicit unit suffix such as
//! `"35 mph"`, `"1.5 mi"` or `"200 ms"`.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// Exact international mile-per-hour definition.
pub const MPH: f64 = 0.44704;
pub const MILE: f64 = 1609.344;
pub const FOOT: f64 = 0.3048;
pub const KMH: f64 = 1000.0 / 3600.0;

pub fn mph(v: f64) -> f64 {
    v * MPH
}

pub fn miles(d: f64) -> f64 {
    d * MILE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dimension {
    Speed,
    Length,
    Duration,
}

impl Dimension {
    fn si_suffix(self) -> &'static str {
        match self {
            Dimension::Speed => "m/s",
            Dimension::Length => "m",
            Dimension::Duration => "s",
        }
    }

    fn factor(self, unit: &str) -> Option<f64> {
        let f = match (self, unit) {
            (Dimension::Speed, "m/s" | "mps") => 1.0,
            (Dimension::Speed, "mph") => MPH,
            (Dimension::Speed, "km/h" | "kph") => KMH,
            (Dimension::Length, "m") => 1.0,
            (Dimension::Length, "km") => 1000.0,
            (Dimension::Length, "mi" | "mile" | "miles") => MILE,
            (Dimension::Length, "ft") => FOOT,
            (Dimension::Duration, "s") => 1.0,
            (Dimension::Duration, "ms") => 1e-3,
            (Dimension::Duration, "min") => 60.0,
            _ => return None,
        };
        Some(f)
    }
}

fn parse_quantity(text: &str, dim: Dimension) -> Result<f64, String> {
    let text = text.trim();
    let split = text
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .unwrap_or(text.len());
    let (number, unit) = text.split_at(split);
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("`{text}` does not start with a number"))?;
    let unit = unit.trim();
    let unit = if unit.is_empty() { dim.si_suffix() } else { unit };
    dim.factor(unit)
        .map(|f| value * f)
        .ok_or_else(|| format!("unknown unit `{unit}` for {dim:?} in `{text}`"))
}

struct QuantityVisitor(Dimension);

impl Visitor<'_> for QuantityVisitor {
    type Value = f64;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "a number in {} or a string with a unit suffix", self.0.si_suffix())
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
        Ok(v)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
        parse_quantity(v, self.0).map_err(E::custom)
    }
}

macro_rules! quantity {
    ($name:ident, $dim:expr, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
        pub struct $name(pub f64);

        impl $name {
            pub fn si(self) -> f64 {
                self.0
            }

            pub fn parse(text: &str) -> Result<Self, String> {
                parse_quantity(text, $dim).map($name)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_f64(self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                d.deserialize_any(QuantityVisitor($dim)).map($name)
            }
        }
    };
}

quantity!(Speed, Dimension::Speed, "A speed, stored in m/s.");
quantity!(Length, Dimension::Length, "A length, stored in m.");
quantity!(Duration, Dimension::Duration, "A duration, stored in s.");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mph_is_exact() {
        assert_eq!(mph(35.0), 15.6464);
        assert_eq!(mph(10.0), 4.4704);
    }

    #[test]
    fn parses_suffixes() {
        assert_eq!(Speed::parse("35 mph").unwrap().si(), 15.6464);
        assert_eq!(Speed::parse("12").unwrap().si(), 12.0);
        assert_eq!(Length::parse("1.5 mi").unwrap().si(), 2414.016);
        assert_eq!(Duration::parse("200 ms").unwrap().si(), 0.2);
        assert!(Speed::parse("3 furlongs").is_err());
        assert!(Length::parse("mph").is_err());
    }

    #[test]
    fn deserializes_numbers_and_strings() {
        #[derive(Deserialize)]
        struct Probe {
            a: Speed,
            b: Speed,
            c: Length,
        }
        let p: Probe = toml::from_str("a = 10\nb = \"10 mph\"\nc = 2.5").unwrap();
        assert_eq!(p.a.si(), 10.0);
        assert_eq!(p.b.si(), 4.4704);
        assert_eq!(p.c.si(), 2.5);
    }
}
