use std::fmt;
use std::str::FromStr;

use bitvec::vec::BitVec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RmdError};

/// Calendar quarter, e.g. `1990Q1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    pub year: i32,
    /// 1..=4
    pub q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> Result<Self> {
        if !(1..=4).contains(&q) {
            return invalid(format!("quarter must be 1..=4, got {q}"));
        }
        Ok(Self { year, q })
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.q as i64 - 1)
    }

    fn from_ordinal(n: i64) -> Self {
        Self {
            year: n.div_euclid(4) as i32,
            q: (n.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn next(self) -> Self {
        Self::from_ordinal(self.ordinal() + 1)
    }

    pub fn offset(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }

    /// Number of quarters from `self` to `other` (positive if `other` is later).
    pub fn quarters_until(self, other: Quarter) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.q)
    }
}

impl FromStr for Quarter {
    type Err = RmdError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (y, q) = s
            .split_once(['Q', 'q'])
            .ok_or_else(|| RmdError::InvalidInput(format!("bad quarter label {s:?}, expected YYYYQn")))?;
        let year: i32 = y
            .parse()
            .map_err(|_| RmdError::InvalidInput(format!("bad year in {s:?}")))?;
        let q: u8 = q
            .parse()
            .map_err(|_| RmdError::InvalidInput(format!("bad quarter in {s:?}")))?;
        Quarter::new(year, q)
    }
}

impl Serialize for Quarter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quarter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Observed scalar series with a strictly increasing quarterly index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    index: Vec<Quarter>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(index: Vec<Quarter>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("time series must have at least one observation");
        }
        if index.len() != values.len() {
            return invalid(format!(
                "index has {} labels but there are {} values",
                index.len(),
                values.len()
            ));
        }
        if index.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("time index must be strictly increasing");
        }
        if let Some(t) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("value at position {t} is not finite"));
        }
        Ok(Self { index, values })
    }

    /// Series with a contiguous quarterly index starting at `start`.
    pub fn from_values(start: Quarter, values: Vec<f64>) -> Result<Self> {
        let index = (0..values.len() as i64).map(|i| start.offset(i)).collect();
        Self::new(index, values)
    }

    /// Unlabelled series; index starts at an arbitrary fixed quarter.
    pub fn unlabelled(values: Vec<f64>) -> Result<Self> {
        Self::from_values(Quarter { year: 1, q: 1 }, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index(&self) -> &[Quarter] {
        &self.index
    }

    /// First `n` observations.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return invalid(format!("prefix length {n} out of range 1..={}", self.len()));
        }
        Ok(Self {
            index: self.index[..n].to_vec(),
            values: self.values[..n].to_vec(),
        })
    }

    pub fn position_of(&self, q: Quarter) -> Option<usize> {
        self.index.binary_search(&q).ok()
    }
}

/// Which observations are treated as informative.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InclusionPath {
    flags: BitVec,
}

impl InclusionPath {
    pub fn all(len: usize) -> Self {
        Self {
            flags: BitVec::repeat(true, len),
        }
    }

    pub fn none(len: usize) -> Self {
        Self {
            flags: BitVec::repeat(false, len),
        }
    }

    pub fn from_bools(flags: &[bool]) -> Self {
        Self {
            flags: flags.iter().copied().collect(),
        }
    }

    pub fn from_positions(len: usize, positions: &[usize]) -> Self {
        let mut flags = BitVec::repeat(false, len);
        for &p in positions {
            flags.set(p, true);
        }
        Self { flags }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn get(&self, t: usize) -> bool {
        self.flags[t]
    }

    pub fn count_included(&self) -> usize {
        self.flags.count_ones()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.flags.iter().by_vals()
    }

    pub fn included_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.iter_ones()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.iter().collect()
    }
}
