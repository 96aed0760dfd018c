//! Exact decimal numbers and the value type stored in contract state and
//! passed as invocation arguments.

use std::fmt;
use std::str::FromStr;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Arbitrary-precision rational used for every numeric literal and rate.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Decimal(BigRational);

impl Decimal {
    pub fn zero() -> Self {
        Decimal(BigRational::zero())
    }

    pub fn one() -> Self {
        Decimal(BigRational::one())
    }

    pub fn from_int(v: i128) -> Self {
        Decimal(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn ratio(n: i128, d: i128) -> Self {
        Decimal(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn to_u64(&self) -> Option<u64> {
        if self.0.is_integer() {
            self.0.to_integer().to_u64()
        } else {
            None
        }
    }

    pub fn to_i128(&self) -> Option<i128> {
        if self.0.is_integer() {
            self.0.to_integer().to_i128()
        } else {
            None
        }
    }

    /// Smallest integer not below the value.
    pub fn ceil(&self) -> Decimal {
        Decimal(self.0.ceil())
    }

    pub fn mul(&self, other: &Decimal) -> Decimal {
        Decimal(&self.0 * &other.0)
    }

    pub fn div(&self, other: &Decimal) -> Option<Decimal> {
        if other.0.is_zero() {
            None
        } else {
            Some(Decimal(&self.0 / &other.0))
        }
    }

    pub fn add(&self, other: &Decimal) -> Decimal {
        Decimal(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Decimal) -> Decimal {
        Decimal(&self.0 - &other.0)
    }
}

impl From<u64> for Decimal {
    fn from(v: u64) -> Self {
        Decimal(BigRational::from_integer(BigInt::from(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid number {0:?}")]
pub struct ParseDecimalError(String);

impl FromStr for Decimal {
    type Err = ParseDecimalError;

    /// Accepts `12`, `-3`, `0.25` and the canonical fraction form `7/4`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseDecimalError(s.to_string());
        if let Some((n, d)) = s.split_once('/') {
            let n: BigInt = n.parse().map_err(|_| err())?;
            let d: BigInt = d.parse().map_err(|_| err())?;
            if d.is_zero() {
                return Err(err());
            }
            return Ok(Decimal(BigRational::new(n, d)));
        }
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        if body.contains('.') && (frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit())) {
            return Err(err());
        }
        let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| err())?;
        let scale = num::pow(BigInt::from(10), frac.len());
        let mut r = BigRational::new(digits, scale);
        if neg {
            r = -r;
        }
        Ok(Decimal(r))
    }
}

impl fmt::Display for Decimal {
    /// Integers print plainly, terminating fractions as decimals, anything
    /// else as a reduced `n/d`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            return write!(f, "{}", self.0.numer());
        }
        let mut d = self.0.denom().clone();
        let (mut twos, mut fives) = (0usize, 0usize);
        let two = BigInt::from(2);
        let five = BigInt::from(5);
        while (&d % &two).is_zero() {
            d /= &two;
            twos += 1;
        }
        while (&d % &five).is_zero() {
            d /= &five;
            fives += 1;
        }
        let places = twos.max(fives);
        if !d.is_one() {
            return write!(f, "{}/{}", self.0.numer(), self.0.denom());
        }
        let scaled = &self.0 * BigRational::from_integer(num::pow(BigInt::from(10), places));
        let n = scaled.to_integer();
        let sign = if n.is_negative() { "-" } else { "" };
        let digits = n.abs().to_string();
        let digits = format!("{:0>width$}", digits, width = places + 1);
        let (i, frac) = digits.split_at(digits.len() - places);
        write!(f, "{sign}{i}.{frac}")
    }
}

impl fmt::Debug for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A value held in contract storage or passed as an argument.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Num(Decimal),
    Str(String),
    Bool(bool),
}

impl Value {
    pub fn int(v: i128) -> Value {
        Value::Num(Decimal::from_int(v))
    }

    pub fn as_num(&self) -> Option<&Decimal> {
        match self {
            Value::Num(d) => Some(d),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(d) => write!(f, "{d}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}
