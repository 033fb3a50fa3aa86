//! Binary sketch format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HLLS"
//! 4       1     version = 1
//! 5       1     flags (bit 0: salted; other bits must be zero)
//! 6       1     precision b
//! 7       1     reserved, zero
//! 8       8     index_seed, u64 LE
//! 16      8     value_seed, u64 LE
//! 24      8     salt, u64 LE (only when salted)
//! ..      k     registers, k = ceil(M * 6 / 8)
//! ```
//!
//! Registers are 6-bit fields laid end to end: register `i` occupies stream
//! bits `6i .. 6i + 6`, where stream bit `j` is bit `j % 8` (LSB first) of
//! byte `j / 8`, and the register's own least significant bit comes first.

use super::{check_precision, max_rank, HashConfig, Sketch};
use crate::error::{DecodeError, Result};

pub const MAGIC: &[u8; 4] = b"HLLS";
pub const VERSION: u8 = 1;
const FLAG_SALTED: u8 = 0x01;
const BITS_PER_REGISTER: usize = 6;

pub fn packed_len(m: usize) -> usize {
    (m * BITS_PER_REGISTER).div_ceil(8)
}

pub fn header_len(salted: bool) -> usize {
    24 + if salted { 8 } else { 0 }
}

pub fn pack_registers(registers: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(registers.len())];
    for (i, &r) in registers.iter().enumerate() {
        let bit = i * BITS_PER_REGISTER;
        let (byte, shift) = (bit / 8, bit % 8);
        let v = (r as u16 & 0x3f) << shift;
        out[byte] |= v as u8;
        if shift > 2 {
            out[byte + 1] |= (v >> 8) as u8;
        }
    }
    out
}

pub fn unpack_registers(bytes: &[u8], m: usize) -> Vec<u8> {
    (0..m)
        .map(|i| {
            let bit = i * BITS_PER_REGISTER;
            let (byte, shift) = (bit / 8, bit % 8);
            let lo = bytes[byte] as u16;
            let hi = if shift > 2 { bytes[byte + 1] as u16 } else { 0 };
            (((hi << 8 | lo) >> shift) & 0x3f) as u8
        })
        .collect()
}

impl Sketch {
    pub fn to_bytes(&self) -> Vec<u8> {
        let salted = self.config.salt.is_some();
        let mut out = Vec::with_capacity(header_len(salted) + packed_len(self.num_registers()));
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(if salted { FLAG_SALTED } else { 0 });
        out.push(self.precision);
        out.push(0);
        out.extend_from_slice(&self.config.index_seed.to_le_bytes());
        out.extend_from_slice(&self.config.value_seed.to_le_bytes());
        if let Some(salt) = self.config.salt {
            out.extend_from_slice(&salt.to_le_bytes());
        }
        out.extend_from_slice(&pack_registers(&self.registers));
        out
    }

    /// Decodes a sketch, rejecting trailing bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Sketch> {
        let (sketch, used) = Sketch::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(DecodeError::TrailingBytes(bytes.len() - used).into());
        }
        Ok(sketch)
    }

    /// Decodes a sketch from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Sketch, usize)> {
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(DecodeError::Truncated {
                    expected,
                    actual: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(8)?;
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(DecodeError::BadMagic(magic).into());
        }
        if bytes[4] != VERSION {
            return Err(DecodeError::UnsupportedVersion(bytes[4]).into());
        }
        let flags = bytes[5];
        if flags & !FLAG_SALTED != 0 {
            return Err(DecodeError::UnknownFlags(flags).into());
        }
        let precision = bytes[6];
        check_precision(precision).map_err(|_| DecodeError::Precision(precision))?;
        let salted = flags & FLAG_SALTED != 0;
        let m = 1usize << precision;
        let header = header_len(salted);
        let total = header + packed_len(m);
        need(total)?;

        let u64_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let config = HashConfig {
            index_seed: u64_at(8),
            value_seed: u64_at(16),
            salt: salted.then(|| u64_at(24)),
        };
        let registers = unpack_registers(&bytes[header..total], m);
        let cap = max_rank(precision);
        if let Some((index, &value)) = registers.iter().enumerate().find(|(_, &v)| v > cap) {
            return Err(DecodeError::RegisterOutOfRange { index, value, cap }.into());
        }
        Ok((Sketch::from_registers(precision, config, registers)?, total))
    }
}
