use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Reduced fraction `n/m` with `n < m`; LR size = HR size * n / m.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RationalScale {
    n: usize,
    m: usize,
}

pub(crate) fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl RationalScale {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        ensure!(n > 0 && m > 0, "scale terms must be positive, got {n}/{m}");
        ensure!(n < m, "scale {n}/{m} is not a downscale");
        ensure!(gcd(n, m) == 1, "scale {n}/{m} is not reduced");
        Ok(RationalScale { n, m })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Downscale factor `m / n`.
    pub fn factor(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// `dim * n / m`, requiring `m | dim`.
    pub fn apply(&self, dim: usize) -> Result<usize> {
        ensure!(dim % self.m == 0, "dimension {dim} is not a multiple of {} required by scale {self}", self.m);
        Ok(dim / self.m * self.n)
    }

    /// Short tag usable in parameter and file names, e.g. `10_13`.
    pub fn tag(&self) -> String {
        format!("{}_{}", self.n, self.m)
    }

    /// Parses a downscale factor given as a decimal (`"1.3"`, `"2"`) or a
    /// fraction (`"4/3"`). The value is taken exactly from its digits.
    pub fn parse_factor(text: &str) -> Result<Self> {
        let text = text.trim();
        let (num, den) = match text.split_once('/') {
            Some((a, b)) => (parse_uint(a)?, parse_uint(b)?),
            None => parse_decimal(text)?,
        };
        ensure!(den > 0, "scale {text:?} has zero denominator");
        ensure!(num > den, "downscale factor {text:?} must be greater than 1");
        let g = gcd(num, den);
        RationalScale::new(den / g, num / g)
    }
}

fn parse_uint(s: &str) -> Result<usize> {
    let s = s.trim();
    ensure!(!s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()), "non-numeric scale term {s:?}");
    s.parse().map_err(|_| Error::Contract(format!("scale term {s:?} out of range")))
}

fn parse_decimal(s: &str) -> Result<(usize, usize)> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    ensure!(!(int.is_empty() && frac.is_empty()) && frac.len() <= 9, "cannot parse scale {s:?}");
    let int = if int.is_empty() { 0 } else { parse_uint(int)? };
    let frac_val = if frac.is_empty() { 0 } else { parse_uint(frac)? };
    let den = 10usize.pow(frac.len() as u32);
    Ok((int * den + frac_val, den))
}

impl fmt::Display for RationalScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.n, self.m)
    }
}

impl FromStr for RationalScale {
    type Err = Error;

    /// Parses the `n/m` form written by [`fmt::Display`].
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s.split_once('/').ok_or_else(|| Error::Contract(format!("expected n/m, got {s:?}")))?;
        RationalScale::new(parse_uint(a)?, parse_uint(b)?)
    }
}

impl TryFrom<String> for RationalScale {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RationalScale> for String {
    fn from(s: RationalScale) -> String {
        s.to_string()
    }
}
