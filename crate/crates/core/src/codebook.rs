//! The buyer watermark database: a minimum-distance offset codebook bound to a
//! dataset through `w*`.

use std::collections::BTreeMap;
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::bits::{mask, BitString, MAX_BITS};
use crate::error::{Error, Result};
use crate::table::{read_json, write_json};

fn binomial_prefix(l: usize, upto: usize) -> Vec<BigUint> {
    // prefix[d] = sum_{i<=d} C(l, i)
    let mut out = Vec::with_capacity(upto + 1);
    let mut c = BigUint::from(1u32);
    let mut acc = BigUint::from(0u32);
    for i in 0..=upto.min(l) {
        if i > 0 {
            c = c * BigUint::from(l - i + 1) / BigUint::from(i);
        }
        acc += &c;
        out.push(acc.clone());
    }
    out
}

/// Exact mantissa/exponent split of a positive finite double: `x = m * 2^e`.
fn dyadic(x: f64) -> (u64, i64) {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    }
}

/// `true` when `count / 2^l <= x` exactly.
fn ratio_at_most(count: &BigUint, l: usize, x: f64) -> bool {
    let (m, e) = dyadic(x);
    let shift = e + l as i64;
    let m = BigUint::from(m);
    if shift >= 0 {
        *count <= m << shift as usize
    } else {
        count.clone() << (-shift) as usize <= m
    }
}

/// False-positive rate of a database of `n` watermarks with tolerance `delta_be`,
/// for a uniformly random decoded string.
pub fn false_positive_rate(n: usize, l: usize, delta_be: usize) -> f64 {
    let prefix = binomial_prefix(l, delta_be);
    let count = BigUint::from(n) * prefix.last().expect("non-empty");
    let num: f64 = count.to_string().parse().unwrap_or(f64::INFINITY);
    num / 2f64.powi(l as i32)
}

/// Largest tolerance whose false-positive rate stays within `delta_fpr`.
pub fn derive_delta_be(n: usize, l: usize, delta_fpr: f64) -> Result<usize> {
    if n == 0 || l == 0 {
        return Err(Error::validation("watermark count and length must be positive"));
    }
    if !(delta_fpr > 0.0 && delta_fpr < 1.0) {
        return Err(Error::validation("false-positive target must lie in (0, 1)"));
    }
    let prefix = binomial_prefix(l, l);
    let big_n = BigUint::from(n);
    let mut best = None;
    for (d, s) in prefix.iter().enumerate() {
        if ratio_at_most(&(&big_n * s), l, delta_fpr) {
            best = Some(d);
        } else {
            break;
        }
    }
    best.ok_or_else(|| {
        Error::Capacity(format!(
            "{n} watermarks of {l} bits exceed the false-positive target {delta_fpr} even with zero tolerance"
        ))
    })
}

/// Next integer with the same popcount (Gosper's hack); `None` past `limit`.
fn next_same_weight(v: u64, limit: u64) -> Option<u64> {
    if v == 0 {
        return None;
    }
    let c = v & v.wrapping_neg();
    let r = v.checked_add(c)?;
    let next = (((r ^ v) >> 2) / c) | r;
    (next <= limit).then_some(next)
}

/// Offsets in best-first order: strings are visited by (Hamming weight, numeric
/// value) and accepted when at distance at least `2 * delta_be + 1` from every
/// accepted string.
///
/// Starting from `0^L` and expanding one-bit neighbours of every visited string
/// reaches each weight class only after the previous class is exhausted, so the
/// visit order is exactly ascending (weight, value); the classes are enumerated
/// directly instead of through a queue.
pub fn generate_offsets(n: usize, l: usize, delta_be: usize) -> Result<Vec<BitString>> {
    if n == 0 {
        return Err(Error::validation("watermark count must be positive"));
    }
    if l == 0 || l > MAX_BITS {
        return Err(Error::validation(format!("watermark length must lie in 1..={MAX_BITS}")));
    }
    let dist = 2 * delta_be as u32 + 1;
    let limit = mask(l);
    let mut accepted: Vec<u64> = Vec::with_capacity(n);
    'weights: for w in 0..=l {
        let mut v = if w == 0 { 0 } else { mask(w) };
        loop {
            if accepted.iter().all(|a| (a ^ v).count_ones() >= dist) {
                accepted.push(v);
                if accepted.len() == n {
                    break 'weights;
                }
            }
            if w == 0 {
                break;
            }
            match next_same_weight(v, limit) {
                Some(next) => v = next,
                None => break,
            }
        }
    }
    if accepted.len() < n {
        return Err(Error::Capacity(format!(
            "only {} of {n} watermarks fit at length {l} with minimum distance {dist}",
            accepted.len()
        )));
    }
    Ok(accepted.into_iter().map(|v| BitString::from_value(l, v)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkDatabase {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub delta_be: usize,
    pub offsets: Vec<BitString>,
    #[serde(default)]
    pub assignments: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_star: Option<BitString>,
}

impl WatermarkDatabase {
    pub fn generate(n: usize, l: usize, delta_be: usize) -> Result<Self> {
        Ok(WatermarkDatabase {
            l,
            n,
            delta_be,
            offsets: generate_offsets(n, l, delta_be)?,
            assignments: BTreeMap::new(),
            w_star: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets.len() != self.n || self.offsets.iter().any(|o| o.len() != self.l) {
            return Err(Error::validation("watermark database offsets do not match N and L"));
        }
        if let Some(w) = &self.w_star {
            if w.len() != self.l {
                return Err(Error::validation("bound w* has the wrong length"));
            }
        }
        if self.assignments.values().any(|&i| i >= self.n) {
            return Err(Error::validation("assignment refers to a missing offset"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let db: WatermarkDatabase = read_json(path)?;
        db.validate()?;
        Ok(db)
    }

    /// Grows the database to `n` offsets, keeping every existing offset and
    /// assignment. Best-first order makes the first offsets independent of `n`.
    pub fn extend(&mut self, n: usize) -> Result<()> {
        if n < self.n {
            return Err(Error::validation(format!("database already holds {} offsets; cannot shrink to {n}", self.n)));
        }
        let offsets = generate_offsets(n, self.l, self.delta_be)?;
        debug_assert_eq!(offsets[..self.n], self.offsets[..]);
        self.offsets = offsets;
        self.n = n;
        Ok(())
    }

    pub fn watermark_at(&self, index: usize) -> Option<BitString> {
        self.w_star.map(|w| self.offsets[index].xor(&w))
    }

    pub fn watermark_of(&self, buyer: &str) -> Option<BitString> {
        self.assignments.get(buyer).and_then(|&i| self.watermark_at(i))
    }

    pub fn bind(&mut self, w_star: BitString) -> Result<()> {
        if w_star.len() != self.l {
            return Err(Error::validation(format!(
                "w* has {} bits but the database uses {}",
                w_star.len(),
                self.l
            )));
        }
        match self.w_star {
            Some(existing) if existing != w_star => Err(Error::validation(
                "watermark database is already bound to a different dataset",
            )),
            _ => {
                self.w_star = Some(w_star);
                Ok(())
            }
        }
    }

    /// Binds to `w_star` if needed and gives `buyer` the lowest-weight unassigned
    /// offset. Repeated calls for one buyer return the same watermark.
    pub fn bind_and_assign(&mut self, w_star: BitString, buyer: &str) -> Result<BitString> {
        self.bind(w_star)?;
        if let Some(&i) = self.assignments.get(buyer) {
            return Ok(self.offsets[i].xor(&w_star));
        }
        let next = self.assignments.len();
        if next >= self.n {
            return Err(Error::Capacity(format!("all {} watermarks are already assigned", self.n)));
        }
        self.assignments.insert(buyer.to_string(), next);
        Ok(self.offsets[next].xor(&w_star))
    }

    /// The buyer whose watermark lies within `delta_be` of `decoded`.
    pub fn match_watermark(&self, decoded: &BitString) -> Option<&str> {
        let w_star = self.w_star?;
        if decoded.len() != self.l {
            return None;
        }
        let offset = decoded.xor(&w_star);
        self.assignments
            .iter()
            .find(|(_, &i)| self.offsets[i].hamming(&offset) as usize <= self.delta_be)
            .map(|(b, _)| b.as_str())
    }
}
