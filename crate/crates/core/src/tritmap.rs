//! Base-3 packed per-level state.
//!
//! Trit `i` of the word describes level `i`: 0 when the level is empty or
//! its content is ignored, 1 when it holds `k` elements, 2 when it holds
//! `2k` elements that are being propagated.

use std::fmt;

use crate::error::{Error, Result};

/// Highest level index a tritmap can describe.
pub const MAX_LEVEL: usize = 31;

const POW3: [u64; MAX_LEVEL + 2] = {
    let mut t = [1u64; MAX_LEVEL + 2];
    let mut i = 1;
    while i < t.len() {
        t[i] = t[i - 1] * 3;
        i += 1;
    }
    t
};

/// `3^i` for `i <= MAX_LEVEL + 1`.
pub fn pow3(i: usize) -> u64 {
    POW3[i]
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Tritmap(u64);

impl Tritmap {
    pub const EMPTY: Tritmap = Tritmap(0);

    /// Wraps a raw word; rejects words with more than `MAX_LEVEL + 1` trits.
    pub fn from_word(word: u64) -> Result<Self> {
        if word >= POW3[MAX_LEVEL + 1] {
            return Err(Error::TritOutOfRange {
                index: MAX_LEVEL + 1,
                max_level: MAX_LEVEL,
            });
        }
        Ok(Self(word))
    }

    /// Builds a tritmap from trits listed from level 0 upward.
    pub fn from_trits(trits: &[u8]) -> Result<Self> {
        if trits.len() > MAX_LEVEL + 1 {
            return Err(Error::TritOutOfRange {
                index: trits.len() - 1,
                max_level: MAX_LEVEL,
            });
        }
        let mut word = 0;
        for (i, &t) in trits.iter().enumerate() {
            if t > 2 {
                return Err(Error::IllegalTrit(t));
            }
            word += t as u64 * POW3[i];
        }
        Ok(Self(word))
    }

    pub fn word(self) -> u64 {
        self.0
    }

    pub fn trit(self, i: usize) -> Result<u8> {
        if i > MAX_LEVEL {
            return Err(Error::TritOutOfRange {
                index: i,
                max_level: MAX_LEVEL,
            });
        }
        Ok(self.trit_unchecked(i))
    }

    pub(crate) fn trit_unchecked(self, i: usize) -> u8 {
        ((self.0 / POW3[i]) % 3) as u8
    }

    /// Trits from level 0 up to `MAX_LEVEL`.
    pub fn trits(self) -> [u8; MAX_LEVEL + 1] {
        let mut out = [0; MAX_LEVEL + 1];
        let mut w = self.0;
        for t in out.iter_mut() {
            *t = (w % 3) as u8;
            w /= 3;
        }
        out
    }

    /// Index of the highest non-zero trit, if any.
    pub fn highest_level(self) -> Option<usize> {
        (0..=MAX_LEVEL).rev().find(|&i| self.trit_unchecked(i) != 0)
    }

    /// Number of stream elements the levels described by this word summarize.
    pub fn stream_size(self, k: usize) -> u64 {
        let k = k as u64;
        self.trits()
            .iter()
            .enumerate()
            .map(|(i, &t)| (t as u64 * k) << i)
            .sum()
    }

    /// Adds a transition delta.
    pub fn apply(self, delta: u64) -> Self {
        Self(self.0 + delta)
    }

    /// Renders the trits most-significant first, padded to at least `width`.
    pub fn to_trit_string(self, width: usize) -> String {
        let top = self.highest_level().map_or(1, |h| h + 1).max(width);
        (0..top)
            .rev()
            .map(|i| char::from(b'0' + self.trit_unchecked(i)))
            .collect()
    }
}

/// Delta for inserting a batch at level 0: trit 0 goes from 0 to 2.
pub fn delta_batch() -> u64 {
    2
}

/// Delta for promoting level `l` into a level holding `k` elements:
/// `[2,1] -> [0,2]` at trits `l, l+1`.
pub fn delta_promote_full(l: usize) -> u64 {
    POW3[l + 1] - 2 * POW3[l]
}

/// Delta for promoting level `l` into an empty level:
/// `[2,0] -> [0,1]` at trits `l, l+1`.
pub fn delta_promote_empty(l: usize) -> u64 {
    POW3[l + 1] - 2 * POW3[l]
}

impl fmt::Debug for Tritmap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tritmap({})", self.to_trit_string(1))
    }
}

impl fmt::Display for Tritmap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_trit_string(f.width().unwrap_or(1)))
    }
}
