//! Keyed cluster-pair templates and the zero-conflict watermark of a histogram.

use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::bits::BitString;
use crate::error::{Error, Result};

pub const PAIR_CONTEXT: &[u8] = b"pair-v1";

/// 32 bytes of owner key material. Never serialized; `Debug` is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; 32]);

impl SecretKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        SecretKey(bytes)
    }

    /// Parses 64 hex digits (surrounding whitespace ignored).
    pub fn from_hex(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.len() != 64 || !text.is_ascii() {
            return Err(Error::validation("secret key must be 64 hex digits"));
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&text[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::validation("secret key is not valid hex"))?;
        }
        Ok(SecretKey(out))
    }

    /// Accepts either exactly 32 raw bytes or 64 hex digits.
    pub fn from_file_contents(data: &[u8]) -> Result<Self> {
        if let Ok(text) = std::str::from_utf8(data) {
            if text.trim().len() == 64 {
                if let Ok(key) = SecretKey::from_hex(text) {
                    return Ok(key);
                }
            }
        }
        let bytes: [u8; 32] = data
            .try_into()
            .map_err(|_| Error::validation("key file must hold 32 raw bytes or 64 hex digits"))?;
        Ok(SecretKey(bytes))
    }

    /// Keyed PRF output for `context`.
    pub fn prf(&self, context: &[u8]) -> [u8; 32] {
        let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(&self.0).expect("hmac accepts any key length");
        mac.update(context);
        mac.finalize().into_bytes().into()
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(<redacted>)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatermarkTemplate {
    pub pairs: Vec<(usize, usize)>,
}

impl WatermarkTemplate {
    pub fn new(pairs: Vec<(usize, usize)>, m: usize) -> Result<Self> {
        let t = WatermarkTemplate { pairs };
        t.validate(m)?;
        Ok(t)
    }

    pub fn bits(&self) -> usize {
        self.pairs.len()
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let mut seen = vec![false; m];
        for &(l, r) in &self.pairs {
            for k in [l, r] {
                if k >= m {
                    return Err(Error::validation(format!("template cluster {k} out of range for {m} clusters")));
                }
                if std::mem::replace(&mut seen[k], true) {
                    return Err(Error::validation(format!("template uses cluster {k} twice")));
                }
            }
        }
        Ok(())
    }

    pub fn is_template_cluster(&self, m: usize) -> Vec<bool> {
        let mut mask = vec![false; m];
        for &(l, r) in &self.pairs {
            mask[l] = true;
            mask[r] = true;
        }
        mask
    }

    /// Bit `i` is 1 exactly when `y[l_i] < y[r_i]`.
    pub fn read_bits(&self, y: &[u64]) -> BitString {
        let bits: Vec<bool> = self.pairs.iter().map(|&(l, r)| y[l] < y[r]).collect();
        BitString::from_bits(&bits)
    }
}

/// The `2L` clusters whose sizes have the smallest population variance.
///
/// Candidates are the windows of `2L` consecutive entries of the clusters sorted by
/// (size, index); ties keep the leftmost window. Returned ascending.
pub fn select_template_clusters(h: &[u64], l: usize) -> Result<Vec<usize>> {
    let width = 2 * l;
    if l == 0 {
        return Err(Error::validation("watermark length must be at least 1"));
    }
    if h.len() < width {
        return Err(Error::Capacity(format!(
            "{} clusters cannot host {l} disjoint pairs",
            h.len()
        )));
    }
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by_key(|&i| (h[i], i));
    let sizes: Vec<i128> = order.iter().map(|&i| h[i] as i128).collect();

    // width^2 * variance = width * sum(s^2) - sum(s)^2, compared exactly.
    let w = width as i128;
    let mut sum: i128 = sizes[..width].iter().sum();
    let mut sq: i128 = sizes[..width].iter().map(|s| s * s).sum();
    let mut best = w * sq - sum * sum;
    let mut best_start = 0;
    for start in 1..=sizes.len() - width {
        let out = sizes[start - 1];
        let inn = sizes[start + width - 1];
        sum += inn - out;
        sq += inn * inn - out * out;
        let score = w * sq - sum * sum;
        if score < best {
            best = score;
            best_start = start;
        }
    }
    let mut chosen = order[best_start..best_start + width].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Shuffles the selected clusters with a key-derived Fisher-Yates permutation and
/// groups consecutive elements into pairs.
pub fn pair_clusters(selected: &[usize], key: &SecretKey, context: &[u8]) -> Result<WatermarkTemplate> {
    if selected.is_empty() || selected.len() % 2 != 0 {
        return Err(Error::validation("pairing needs a non-empty, even number of clusters"));
    }
    let mut items = selected.to_vec();
    items.sort_unstable();
    items.dedup();
    if items.len() != selected.len() {
        return Err(Error::validation("selected clusters must be distinct"));
    }
    let mut rng = ChaCha20Rng::from_seed(key.prf(context));
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
    Ok(WatermarkTemplate {
        pairs: items.chunks(2).map(|p| (p[0], p[1])).collect(),
    })
}

/// The watermark whose partial orders already hold in `h`.
pub fn optimal_watermark(h: &[u64], template: &WatermarkTemplate) -> BitString {
    template.read_bits(h)
}
