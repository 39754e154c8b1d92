//! Exact rational arithmetic for shape exponents and indices.
//!
//! Learning-order ties are decided by exact comparisons, so every index is a
//! `Frac` and only converted to `f64` at reporting boundaries.

use num::rational::Ratio;
use num::{ToPrimitive, Zero};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Exact fraction. Numerators and denominators stay tiny (sums of shape
/// exponents), so `i64` is plenty.
pub type Frac = Ratio<i64>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FracParseError {
    #[error("empty fraction string")]
    Empty,
    #[error("invalid fraction `{0}`")]
    Invalid(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
}

/// Parse `"3/4"` or `"2"` into an exact fraction.
pub fn parse_frac(s: &str) -> Result<Frac, FracParseError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(FracParseError::Empty);
    }
    match s.split_once('/') {
        None => i64::from_str(s)
            .map(Frac::from_integer)
            .map_err(|_| FracParseError::Invalid(s.to_string())),
        Some((num, den)) => {
            let n =
                i64::from_str(num.trim()).map_err(|_| FracParseError::Invalid(s.to_string()))?;
            let d =
                i64::from_str(den.trim()).map_err(|_| FracParseError::Invalid(s.to_string()))?;
            if d == 0 {
                return Err(FracParseError::ZeroDenominator(s.to_string()));
            }
            Ok(Frac::new(n, d))
        }
    }
}

/// Render a fraction exactly the way the config format writes it (`3/4`, `2`).
pub fn format_frac(f: &Frac) -> String {
    if f.denom() == &1 {
        format!("{}", f.numer())
    } else {
        format!("{}/{}", f.numer(), f.denom())
    }
}

pub fn frac_to_f64(f: &Frac) -> f64 {
    f.to_f64().expect("fraction representable as f64")
}

/// An index value that is either an exact fraction or +inf (not learnable).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexValue {
    Finite(Frac),
    Infinite,
}

impl IndexValue {
    pub fn zero() -> Self {
        IndexValue::Finite(Frac::zero())
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, IndexValue::Finite(_))
    }

    pub fn as_frac(&self) -> Option<Frac> {
        match self {
            IndexValue::Finite(f) => Some(*f),
            IndexValue::Infinite => None,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            IndexValue::Finite(f) => frac_to_f64(f),
            IndexValue::Infinite => f64::INFINITY,
        }
    }
}

impl PartialOrd for IndexValue {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for IndexValue {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use IndexValue::*;
        match (self, other) {
            (Finite(a), Finite(b)) => a.cmp(b),
            (Finite(_), Infinite) => std::cmp::Ordering::Less,
            (Infinite, Finite(_)) => std::cmp::Ordering::Greater,
            (Infinite, Infinite) => std::cmp::Ordering::Equal,
        }
    }
}

impl fmt::Display for IndexValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexValue::Finite(x) => write!(f, "{}", format_frac(x)),
            IndexValue::Infinite => write!(f, "inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_formats_round_trip() {
        for s in ["3/4", "1", "0", "5/2", "-1/3"] {
            let f = parse_frac(s).unwrap();
            assert_eq!(format_frac(&f), s);
        }
    }

    #[test]
    fn reduces_fractions() {
        assert_eq!(parse_frac("2/4").unwrap(), Frac::new(1, 2));
        assert_eq!(format_frac(&parse_frac("6/4").unwrap()), "3/2");
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_frac("").is_err());
        assert!(parse_frac("a/b").is_err());
        assert!(parse_frac("1/0").is_err());
    }

    #[test]
    fn infinite_sorts_last() {
        let mut v = vec![
            IndexValue::Infinite,
            IndexValue::Finite(Frac::new(5, 4)),
            IndexValue::Finite(Frac::new(1, 1)),
        ];
        v.sort();
        assert_eq!(v[0], IndexValue::Finite(Frac::new(1, 1)));
        assert_eq!(v[2], IndexValue::Infinite);
    }
}
