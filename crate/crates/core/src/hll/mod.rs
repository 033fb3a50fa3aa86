//! Dense HyperLogLog sketch.
//!
//! Registers are kept one per byte in memory and packed to 6 bits on disk
//! (see [`codec`]). Alongside the registers the sketch keeps a histogram of
//! register values, so estimation costs O(max rank) instead of O(M) and the
//! harmonic sum is evaluated exactly in integer arithmetic. The estimate is
//! therefore a pure function of the register contents, independent of the
//! order in which they were reached.

pub mod codec;
mod hash;

pub use hash::{check_precision, hash_element, max_rank, rank, HashConfig, HashOutcome, MAX_PRECISION, MIN_PRECISION};

use crate::error::{Error, Result};

const HISTOGRAM_LEN: usize = 64;

/// Bias-correction constant and register count for one geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorParams {
    pub alpha_m: f64,
    pub m: usize,
}

impl EstimatorParams {
    pub fn for_precision(precision: u8) -> Result<Self> {
        check_precision(precision)?;
        let m = 1usize << precision;
        let alpha_m = match m {
            16 => 0.673,
            32 => 0.697,
            64 => 0.709,
            _ => 0.7213 / (1.0 + 1.079 / m as f64),
        };
        Ok(EstimatorParams { alpha_m, m })
    }
}

/// Register count to precision, for `m` a power of two within the supported range.
pub fn precision_for(m: usize) -> Result<u8> {
    if !m.is_power_of_two() {
        return Err(Error::InvalidRegisterCount(m));
    }
    let b = m.trailing_zeros() as u8;
    if (MIN_PRECISION..=MAX_PRECISION).contains(&b) {
        Ok(b)
    } else {
        Err(Error::InvalidRegisterCount(m))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sketch {
    precision: u8,
    config: HashConfig,
    registers: Vec<u8>,
    histogram: [u32; HISTOGRAM_LEN],
}

impl Sketch {
    pub fn new(precision: u8, config: HashConfig) -> Result<Self> {
        check_precision(precision)?;
        let m = 1usize << precision;
        let mut histogram = [0u32; HISTOGRAM_LEN];
        histogram[0] = m as u32;
        Ok(Sketch {
            precision,
            config,
            registers: vec![0; m],
            histogram,
        })
    }

    /// Builds a sketch from explicit register values.
    pub fn from_registers(precision: u8, config: HashConfig, registers: Vec<u8>) -> Result<Self> {
        check_precision(precision)?;
        let m = 1usize << precision;
        if registers.len() != m {
            return Err(Error::InvalidParameter(format!(
                "expected {m} registers, got {}",
                registers.len()
            )));
        }
        let cap = max_rank(precision);
        let mut histogram = [0u32; HISTOGRAM_LEN];
        for (index, &value) in registers.iter().enumerate() {
            if value > cap {
                return Err(crate::error::DecodeError::RegisterOutOfRange { index, value, cap }.into());
            }
            histogram[value as usize] += 1;
        }
        Ok(Sketch {
            precision,
            config,
            registers,
            histogram,
        })
    }

    pub fn precision(&self) -> u8 {
        self.precision
    }

    pub fn num_registers(&self) -> usize {
        self.registers.len()
    }

    pub fn config(&self) -> &HashConfig {
        &self.config
    }

    pub fn registers(&self) -> &[u8] {
        &self.registers
    }

    pub fn is_salted(&self) -> bool {
        self.config.is_salted()
    }

    pub fn hash(&self, element: &[u8]) -> HashOutcome {
        hash::outcome_unchecked(&self.config, element, self.precision)
    }

    /// Inserts an element; returns whether a register strictly increased.
    #[inline]
    pub fn insert(&mut self, element: &[u8]) -> bool {
        let HashOutcome { index, value } = self.hash(element);
        self.raise(index, value)
    }

    #[inline]
    fn raise(&mut self, index: usize, value: u8) -> bool {
        let current = self.registers[index];
        if value > current {
            self.registers[index] = value;
            self.histogram[current as usize] -= 1;
            self.histogram[value as usize] += 1;
            true
        } else {
            false
        }
    }

    pub fn insert_all<I, E>(&mut self, elements: I)
    where
        I: IntoIterator<Item = E>,
        E: AsRef<[u8]>,
    {
        for e in elements {
            self.insert(e.as_ref());
        }
    }

    pub fn zero_register_count(&self) -> usize {
        self.histogram[0] as usize
    }

    pub fn params(&self) -> EstimatorParams {
        EstimatorParams::for_precision(self.precision).expect("precision validated at construction")
    }

    /// `sum_i 2^(-c_i)`, accumulated exactly as a fixed-point integer.
    fn harmonic_sum(&self) -> f64 {
        let scaled: u128 = self
            .histogram
            .iter()
            .enumerate()
            .map(|(k, &n)| (n as u128) << (64 - k))
            .sum();
        scaled as f64 * 2f64.powi(-64)
    }

    /// Harmonic-mean estimate `alpha_M * M^2 / sum 2^(-c_i)` with no range correction.
    pub fn raw_estimate(&self) -> f64 {
        let EstimatorParams { alpha_m, m } = self.params();
        let m = m as f64;
        alpha_m * m * m / self.harmonic_sum()
    }

    /// Cardinality estimate, switching to linear counting while the raw
    /// estimate is at most `2.5 * M` and some register is still zero.
    pub fn estimate(&self) -> f64 {
        let raw = self.raw_estimate();
        let m = self.num_registers() as f64;
        let zeros = self.zero_register_count();
        if raw <= 2.5 * m && zeros > 0 {
            m * (m / zeros as f64).ln()
        } else {
            raw
        }
    }

    pub fn is_compatible(&self, other: &Sketch) -> Result<()> {
        if self.precision != other.precision {
            return Err(Error::PrecisionMismatch {
                left: self.precision,
                right: other.precision,
            });
        }
        if self.config != other.config {
            return Err(Error::ConfigMismatch {
                left: self.config,
                right: other.config,
            });
        }
        Ok(())
    }

    /// In-place union: each register takes the maximum of both sides.
    pub fn merge_from(&mut self, other: &Sketch) -> Result<()> {
        self.is_compatible(other)?;
        for (index, &value) in other.registers.iter().enumerate() {
            self.raise(index, value);
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.registers.fill(0);
        self.histogram = [0; HISTOGRAM_LEN];
        self.histogram[0] = self.registers.len() as u32;
    }

    /// Empty sketch sharing this sketch's geometry and hash configuration.
    pub fn empty_like(&self) -> Sketch {
        Sketch::new(self.precision, self.config).expect("precision validated at construction")
    }
}

pub fn merge(a: &Sketch, b: &Sketch) -> Result<Sketch> {
    let mut out = a.clone();
    out.merge_from(b)?;
    Ok(out)
}
