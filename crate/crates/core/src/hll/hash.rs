//! Element hashing.
//!
//! Every element is hashed with XXH64. When a salt is configured its eight
//! little-endian bytes are fed to the hasher ahead of the element bytes, for
//! both the index hash `h` and the value hash `g`. With equal seeds the two
//! hashes coincide and a single digest is split: the top `b` bits select the
//! register and the remaining `64 - b` bits give the rank. With distinct seeds
//! the index comes from the top `b` bits of the `index_seed` digest and the
//! rank from the low `64 - b` bits of the `value_seed` digest.

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::Xxh64;

use crate::error::{Error, Result};

pub const MIN_PRECISION: u8 = 4;
pub const MAX_PRECISION: u8 = 18;

/// Seeds and optional salt that determine the hash pair `(h, g)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct HashConfig {
    pub index_seed: u64,
    pub value_seed: u64,
    pub salt: Option<u64>,
}

impl HashConfig {
    /// Public configuration with a single seed shared by `h` and `g`.
    pub const fn unsalted(seed: u64) -> Self {
        HashConfig {
            index_seed: seed,
            value_seed: seed,
            salt: None,
        }
    }

    pub const fn with_salt(self, salt: u64) -> Self {
        HashConfig {
            salt: Some(salt),
            ..self
        }
    }

    pub const fn without_salt(self) -> Self {
        HashConfig { salt: None, ..self }
    }

    pub fn is_salted(&self) -> bool {
        self.salt.is_some()
    }

    fn digest(&self, seed: u64, element: &[u8]) -> u64 {
        let mut hasher = Xxh64::new(seed);
        if let Some(salt) = self.salt {
            hasher.update(&salt.to_le_bytes());
        }
        hasher.update(element);
        hasher.digest()
    }

    /// Returns `(index_digest, value_digest)`.
    #[inline]
    pub fn digests(&self, element: &[u8]) -> (u64, u64) {
        let ih = self.digest(self.index_seed, element);
        if self.index_seed == self.value_seed {
            (ih, ih)
        } else {
            (ih, self.digest(self.value_seed, element))
        }
    }

    /// Short hex tag identifying this configuration at a given precision.
    pub fn fingerprint(&self, precision: u8) -> String {
        let mut hasher = Xxh64::new(0);
        hasher.update(&[precision, self.salt.is_some() as u8]);
        hasher.update(&self.index_seed.to_le_bytes());
        hasher.update(&self.value_seed.to_le_bytes());
        hasher.update(&self.salt.unwrap_or(0).to_le_bytes());
        format!("{:016x}", hasher.digest())
    }
}

/// Register position and rank of one element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashOutcome {
    pub index: usize,
    pub value: u8,
}

pub fn check_precision(precision: u8) -> Result<()> {
    if (MIN_PRECISION..=MAX_PRECISION).contains(&precision) {
        Ok(())
    } else {
        Err(Error::InvalidPrecision(precision))
    }
}

/// Largest rank a register can hold at this precision.
pub const fn max_rank(precision: u8) -> u8 {
    64 - precision + 1
}

/// One plus the number of leading zeros among the top `width` bits of
/// `bits`, capped at `width + 1` when they are all zero.
#[inline]
pub fn rank(bits: u64, width: u32) -> u8 {
    (bits.leading_zeros().min(width) + 1) as u8
}

#[inline]
pub(crate) fn outcome_unchecked(config: &HashConfig, element: &[u8], precision: u8) -> HashOutcome {
    let (ih, vh) = config.digests(element);
    let b = precision as u32;
    HashOutcome {
        index: (ih >> (64 - b)) as usize,
        value: rank(vh << b, 64 - b),
    }
}

/// Maps an element to its register index and rank.
pub fn hash_element(element: &[u8], config: &HashConfig, precision: u8) -> Result<HashOutcome> {
    check_precision(precision)?;
    Ok(outcome_unchecked(config, element, precision))
}
