use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Longest supported watermark.
pub const MAX_BITS: usize = 64;

/// A fixed-length bit string of at most [`MAX_BITS`] bits.
///
/// Bit `i` is the `i`-th character of the textual form (leftmost = bit 0). The packed
/// integer holds bit 0 in its most significant position, so integer order matches the
/// numeric order of the textual form.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    len: u8,
    packed: u64,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        assert!(len <= MAX_BITS, "bit strings are limited to {MAX_BITS} bits");
        BitString {
            len: len as u8,
            packed: 0,
        }
    }

    /// Builds from the integer value of the textual form (leftmost bit most significant).
    pub fn from_value(len: usize, value: u64) -> Self {
        assert!(len <= MAX_BITS);
        let mask = mask(len);
        assert!(value & !mask == 0, "value {value:#x} does not fit in {len} bits");
        BitString {
            len: len as u8,
            packed: value,
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = BitString::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            s.set(i, b);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn value(&self) -> u64 {
        self.packed
    }

    fn shift(&self, i: usize) -> u32 {
        assert!(i < self.len(), "bit index {i} out of range for length {}", self.len);
        (self.len() - 1 - i) as u32
    }

    pub fn get(&self, i: usize) -> bool {
        (self.packed >> self.shift(i)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        let s = self.shift(i);
        if bit {
            self.packed |= 1 << s;
        } else {
            self.packed &= !(1 << s);
        }
    }

    pub fn flip(&mut self, i: usize) {
        let s = self.shift(i);
        self.packed ^= 1 << s;
    }

    pub fn weight(&self) -> u32 {
        self.packed.count_ones()
    }

    pub fn xor(&self, other: &BitString) -> BitString {
        assert_eq!(self.len, other.len, "length mismatch");
        BitString {
            len: self.len,
            packed: self.packed ^ other.packed,
        }
    }

    pub fn hamming(&self, other: &BitString) -> u32 {
        assert_eq!(self.len, other.len, "length mismatch");
        (self.packed ^ other.packed).count_ones()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

pub(crate) fn mask(len: usize) -> u64 {
    if len == 64 {
        u64::MAX
    } else {
        (1u64 << len) - 1
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0b{self}")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.strip_prefix("0b").unwrap_or(s);
        if s.len() > MAX_BITS {
            return Err(Error::validation(format!("bit string longer than {MAX_BITS} bits")));
        }
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::validation(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BitString::from_bits(&bits))
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
