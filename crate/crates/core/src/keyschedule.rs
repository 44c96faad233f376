//! Secret keys and the deterministic permutation derived from them.
//!
//! Every random decision in the toolkit flows from a 256-bit [`SecretKey`]:
//! the key bytes are folded into a 64-bit seed with FNV-1a, the seed drives a
//! SplitMix64 stream, and the stream feeds a Fisher–Yates shuffle. All three
//! steps are fixed recurrences, so any implementation following them produces
//! the same permutation bit for bit.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Length of a secret key in bytes.
pub const KEY_LEN: usize = 32;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("key must be {expected} hex characters, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("invalid hex character {ch:?} at position {position}")]
    InvalidChar { ch: char, position: usize },
    #[error("OS entropy source unavailable: {0}")]
    Entropy(String),
    #[error("permutation length must be at least 1")]
    EmptyPermutation,
    #[error("not a permutation of 0..{len}: {reason}")]
    NotAPermutation { len: usize, reason: String },
}

/// A 256-bit secret shared between the model creator and its users.
///
/// `Debug` never prints the key material; use `Display` (lowercase hex) when
/// the key must actually be serialized.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SecretKey([u8; KEY_LEN]);

impl SecretKey {
    pub const fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    /// Draws a fresh key from the operating system's CSPRNG.
    pub fn generate() -> Result<Self, KeyError> {
        let mut bytes = [0u8; KEY_LEN];
        getrandom::fill(&mut bytes).map_err(|e| KeyError::Entropy(e.to_string()))?;
        Ok(Self(bytes))
    }

    /// Parses 64 hex characters, case-insensitively.
    pub fn parse_hex(s: &str) -> Result<Self, KeyError> {
        // Report the first bad character by position before checking length,
        // so "GG" fails at 0 rather than as a length error.
        if let Some((position, ch)) = s.char_indices().find(|(_, c)| !c.is_ascii_hexdigit()) {
            return Err(KeyError::InvalidChar { ch, position });
        }
        if s.len() != 2 * KEY_LEN {
            return Err(KeyError::Length {
                expected: 2 * KEY_LEN,
                actual: s.len(),
            });
        }
        let mut bytes = [0u8; KEY_LEN];
        hex::decode_to_slice(s, &mut bytes).map_err(|e| match e {
            hex::FromHexError::InvalidHexCharacter { c, index } => KeyError::InvalidChar {
                ch: c,
                position: index,
            },
            _ => KeyError::Length {
                expected: 2 * KEY_LEN,
                actual: s.len(),
            },
        })?;
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Folds the key into the 64-bit PRNG seed (FNV-1a over the raw bytes).
    pub fn derive_seed(&self) -> u64 {
        fnv1a64(&self.0)
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(<redacted>)")
    }
}

impl fmt::Display for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for SecretKey {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_hex(s)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// SplitMix64 generator. The whole state is one `u64`; every value,
/// including zero, is a valid state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    pub state: u64,
}

impl SplitMix64 {
    pub const fn new(state: u64) -> Self {
        Self { state }
    }

    /// Pure form of one generator step: returns the output and the successor
    /// state without mutating `self`.
    pub const fn step(self) -> (u64, Self) {
        let state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        (z ^ (z >> 31), Self { state })
    }

    pub fn next_u64(&mut self) -> u64 {
        let (out, next) = self.step();
        *self = next;
        out
    }
}

/// A bijection on `0..n`, stored as `forward[i] = σ(i)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation {
    forward: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            forward: (0..n).collect(),
        }
    }

    /// Validates that `forward` is a bijection on `0..forward.len()`.
    pub fn from_forward(forward: Vec<usize>) -> Result<Self, KeyError> {
        let len = forward.len();
        let mut seen = vec![false; len];
        for (i, &v) in forward.iter().enumerate() {
            if v >= len {
                return Err(KeyError::NotAPermutation {
                    len,
                    reason: format!("entry {i} is {v}, out of range"),
                });
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(KeyError::NotAPermutation {
                    len,
                    reason: format!("value {v} repeated at entry {i}"),
                });
            }
        }
        Ok(Self { forward })
    }

    /// Derives the key's permutation of `0..n`.
    ///
    /// Starts from the identity, then for `i = n-1` down to `1` swaps
    /// positions `i` and `next_u64() % (i + 1)`.
    pub fn generate(key: &SecretKey, n: usize) -> Result<Self, KeyError> {
        if n == 0 {
            return Err(KeyError::EmptyPermutation);
        }
        let mut forward: Vec<usize> = (0..n).collect();
        let mut rng = SplitMix64::new(key.derive_seed());
        for i in (1..n).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            forward.swap(i, j);
        }
        Ok(Self { forward })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &v)| i == v)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.forward
    }

    /// σ(i).
    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.forward[i]
    }

    pub fn invert(&self) -> Self {
        let mut inverse = vec![0; self.forward.len()];
        for (i, &v) in self.forward.iter().enumerate() {
            inverse[v] = i;
        }
        Self { forward: inverse }
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    ///
    /// # Panics
    /// If the lengths differ.
    pub fn compose(&self, other: &Self) -> Self {
        assert_eq!(
            self.len(),
            other.len(),
            "composing permutations of different length"
        );
        Self {
            forward: other.forward.iter().map(|&j| self.forward[j]).collect(),
        }
    }

    /// Gather: `out[i] = values[σ(i)]`.
    pub fn gather<T: Copy>(&self, values: &[T]) -> Vec<T> {
        assert_eq!(values.len(), self.len(), "gather length mismatch");
        self.forward.iter().map(|&j| values[j]).collect()
    }
}
