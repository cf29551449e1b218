//! Unit-tagged fixed-point amounts.
//!
//! All token quantities on the ledger are exact fixed-point numbers with
//! eight decimal places. Arithmetic is integer arithmetic on the scaled
//! representation, so conservation checks are exact: no rounding drift can
//! accumulate across transactions.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

/// Number of scaled units per whole token (10^8).
pub const AMOUNT_SCALE: i128 = 100_000_000;

/// The three token kinds carried by ledger values. Kinds never mix within a
/// single input or output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Bitcoin,
    Shares,
    Reputation,
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitKind::Bitcoin => write!(f, "bitcoin"),
            UnitKind::Shares => write!(f, "shares"),
            UnitKind::Reputation => write!(f, "reputation"),
        }
    }
}

/// Exact fixed-point amount with 8 decimal places.
///
/// Serializes as a JSON number with exactly eight fractional digits
/// (e.g. `0.01000000`), matching the canonical transaction format. Parsing
/// is exact and rejects more than eight fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Amount(i128);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    /// Construct from the scaled integer representation (units of 10^-8).
    pub const fn from_scaled(v: i128) -> Self {
        Amount(v)
    }

    /// Construct from a whole number of tokens.
    pub const fn from_whole(v: i64) -> Self {
        Amount(v as i128 * AMOUNT_SCALE)
    }

    /// Scaled integer representation.
    pub const fn scaled(self) -> i128 {
        self.0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn abs(self) -> Amount {
        Amount(self.0.abs())
    }

    /// Convert to f64 (lossy; for market math at the boundary only).
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / AMOUNT_SCALE as f64
    }

    /// Round a float to the nearest representable amount, half-to-even.
    pub fn from_f64_round(v: f64) -> Amount {
        let scaled = v * AMOUNT_SCALE as f64;
        let floor = scaled.floor();
        let frac = scaled - floor;
        let base = floor as i128;
        let rounded = if frac > 0.5 {
            base + 1
        } else if frac < 0.5 {
            base
        } else if base % 2 == 0 {
            base
        } else {
            base + 1
        };
        Amount(rounded)
    }

    pub fn checked_add(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_add(rhs.0).map(Amount)
    }

    pub fn checked_sub(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_sub(rhs.0).map(Amount)
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0 + rhs.0)
    }
}

impl Sub for Amount {
    type Output = Amount;
    fn sub(self, rhs: Amount) -> Amount {
        Amount(self.0 - rhs.0)
    }
}

impl Neg for Amount {
    type Output = Amount;
    fn neg(self) -> Amount {
        Amount(-self.0)
    }
}

impl AddAssign for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Amount {
    fn sub_assign(&mut self, rhs: Amount) {
        self.0 -= rhs.0;
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        Amount(iter.map(|a| a.0).sum())
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let v = self.0.unsigned_abs();
        write!(
            f,
            "{}{}.{:08}",
            sign,
            v / AMOUNT_SCALE as u128,
            v % AMOUNT_SCALE as u128
        )
    }
}

/// Error parsing a decimal amount string.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid amount literal: {0}")]
pub struct ParseAmountError(pub String);

impl FromStr for Amount {
    type Err = ParseAmountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseAmountError(s.to_string());
        let (sign, rest) = match s.strip_prefix('-') {
            Some(r) => (-1i128, r),
            None => (1i128, s),
        };
        // Scientific notation from JSON encoders is tolerated only for the
        // degenerate 0e0 forms; everything on the ledger is plain decimal.
        let (mantissa, exp) = match rest.split_once(['e', 'E']) {
            Some((m, e)) => (m, e.parse::<i32>().map_err(|_| bad())?),
            None => (rest, 0),
        };
        let (int_part, frac_part) = match mantissa.split_once('.') {
            Some((i, f)) => (i, f),
            None => (mantissa, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        // Normalize exponent into the digit string.
        let mut digits: String = format!("{int_part}{frac_part}");
        let mut frac_len = frac_part.len() as i32 - exp;
        while frac_len < 0 {
            digits.push('0');
            frac_len += 1;
        }
        let frac_len = frac_len as usize;
        if frac_len > 8 {
            // Excess digits must all be zero; anything else is not
            // representable at 10^-8 resolution.
            let cut = digits.len() - (frac_len - 8);
            if digits[cut..].bytes().any(|b| b != b'0') {
                return Err(bad());
            }
            digits.truncate(cut);
            let scaled = digits.parse::<i128>().map_err(|_| bad())?;
            return Ok(Amount(sign * scaled));
        }
        let scaled = digits.parse::<i128>().map_err(|_| bad())? * 10i128.pow(8 - frac_len as u32);
        Ok(Amount(sign * scaled))
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        // arbitrary_precision lets us emit the exact 8-decimal literal.
        let n = serde_json::Number::from_string_unchecked(self.to_string());
        n.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let n = serde_json::Number::deserialize(deserializer)?;
        n.to_string().parse().map_err(D::Error::custom)
    }
}
