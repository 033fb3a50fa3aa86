//! Salted-and-not-salted (SNS) protected sketch.
//!
//! Every element goes into two sketches: one under the public, unsalted hash
//! configuration (mergeable with any peer using the same configuration) and
//! one under a private random salt. An attacker who tunes elements against
//! the public hash cannot steer the salted side, so a large shortfall of the
//! unsalted estimate against the salted one, `(C_ns - C_s) / C_s < -d_t`,
//! flags manipulation.
//!
//! Serialized form, all integers and floats little-endian:
//!
//! ```text
//! "SNS1" | flags u8 (bit 0: two-sided) | d_t f64 | fp_target f64
//!   | salted_len u32 | salted sketch | unsalted_len u32 | unsalted sketch
//! ```
//!
//! Each member sketch uses the plain `HLLS` encoding.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{DecodeError, Error, Result};
use crate::hll::{merge, precision_for, HashConfig, Sketch};
use crate::stats::DetectionParams;

pub const SNS_MAGIC: &[u8; 4] = b"SNS1";
const FLAG_TWO_SIDED: u8 = 0x01;

/// Below `FLOOR_FACTOR * max(M_s, M_ns)` on the salted estimate no verdict is issued.
pub const FLOOR_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SnsSketch {
    salted: Sketch,
    unsalted: Sketch,
    params: DetectionParams,
    two_sided: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub c_salted: f64,
    pub c_unsalted: f64,
    /// `(C_ns - C_s) / C_s`.
    pub normalized_diff: f64,
    pub attacked: bool,
    /// Salted estimate was below the small-cardinality floor; no test was run.
    pub indeterminate: bool,
    pub trusted_estimate: f64,
}

impl SnsSketch {
    /// Pair of `m_salted`/`m_unsalted`-register sketches under the default
    /// public hash configuration, with a fresh salt and `d_t` calibrated to
    /// `fp_target`.
    pub fn new<R: RngCore + ?Sized>(
        m_salted: usize,
        m_unsalted: usize,
        fp_target: f64,
        entropy: &mut R,
    ) -> Result<Self> {
        let params = DetectionParams::calibrate(m_salted, m_unsalted, fp_target)?;
        Self::with_params(m_salted, m_unsalted, HashConfig::default(), params, entropy)
    }

    pub fn with_params<R: RngCore + ?Sized>(
        m_salted: usize,
        m_unsalted: usize,
        public: HashConfig,
        params: DetectionParams,
        entropy: &mut R,
    ) -> Result<Self> {
        let public = public.without_salt();
        let salted = Sketch::new(precision_for(m_salted)?, public.with_salt(entropy.next_u64()))?;
        let unsalted = Sketch::new(precision_for(m_unsalted)?, public)?;
        Self::from_parts(salted, unsalted, params)
    }

    pub fn from_parts(salted: Sketch, unsalted: Sketch, params: DetectionParams) -> Result<Self> {
        if !salted.is_salted() {
            return Err(Error::InvalidParameter("salted member has no salt".into()));
        }
        if unsalted.is_salted() {
            return Err(Error::InvalidParameter("unsalted member carries a salt".into()));
        }
        Ok(SnsSketch {
            salted,
            unsalted,
            params,
            two_sided: false,
        })
    }

    /// Also flag `normalized_diff > d_t`, i.e. inflation of the unsalted side.
    pub fn set_two_sided(&mut self, two_sided: bool) {
        self.two_sided = two_sided;
    }

    pub fn two_sided(&self) -> bool {
        self.two_sided
    }

    pub fn salted(&self) -> &Sketch {
        &self.salted
    }

    pub fn unsalted(&self) -> &Sketch {
        &self.unsalted
    }

    pub fn params(&self) -> &DetectionParams {
        &self.params
    }

    pub fn insert(&mut self, element: &[u8]) {
        self.salted.insert(element);
        self.unsalted.insert(element);
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

    pub fn floor(&self) -> f64 {
        FLOOR_FACTOR * self.salted.num_registers().max(self.unsalted.num_registers()) as f64
    }

    pub fn check(&self) -> Verdict {
        let c_salted = self.salted.estimate();
        let c_unsalted = self.unsalted.estimate();
        let (ms, mns) = (self.salted.num_registers() as f64, self.unsalted.num_registers() as f64);
        let weighted = (mns * c_unsalted + ms * c_salted) / (mns + ms);
        let normalized_diff = if c_salted > 0.0 {
            (c_unsalted - c_salted) / c_salted
        } else {
            0.0
        };
        let indeterminate = c_salted < self.floor();
        let d_t = self.params.d_t;
        let attacked = !indeterminate && (normalized_diff < -d_t || (self.two_sided && normalized_diff > d_t));
        Verdict {
            c_salted,
            c_unsalted,
            normalized_diff,
            attacked,
            indeterminate,
            trusted_estimate: if attacked { c_salted } else { weighted },
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNS_MAGIC);
        out.push(if self.two_sided { FLAG_TWO_SIDED } else { 0 });
        out.extend_from_slice(&self.params.d_t.to_le_bytes());
        out.extend_from_slice(&self.params.fp_target.to_le_bytes());
        for member in [&self.salted, &self.unsalted] {
            let bytes = member.to_bytes();
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |expected: usize| DecodeError::Truncated {
            expected,
            actual: bytes.len(),
        };
        if bytes.len() < 21 {
            return Err(truncated(21).into());
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != SNS_MAGIC {
            return Err(DecodeError::BadMagic(magic).into());
        }
        let flags = bytes[4];
        if flags & !FLAG_TWO_SIDED != 0 {
            return Err(DecodeError::UnknownFlags(flags).into());
        }
        let d_t = f64::from_le_bytes(bytes[5..13].try_into().unwrap());
        let fp_target = f64::from_le_bytes(bytes[13..21].try_into().unwrap());
        let mut offset = 21;
        let mut members = Vec::with_capacity(2);
        for _ in 0..2 {
            if bytes.len() < offset + 4 {
                return Err(truncated(offset + 4).into());
            }
            let len = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
            offset += 4;
            if bytes.len() < offset + len {
                return Err(truncated(offset + len).into());
            }
            members.push(Sketch::from_bytes(&bytes[offset..offset + len])?);
            offset += len;
        }
        if offset != bytes.len() {
            return Err(DecodeError::TrailingBytes(bytes.len() - offset).into());
        }
        let unsalted = members.pop().unwrap();
        let salted = members.pop().unwrap();
        let sigma = crate::stats::sns_sigma(salted.num_registers(), unsalted.num_registers())?;
        if !(d_t > 0.0 && d_t.is_finite()) {
            return Err(DecodeError::Field(format!("threshold {d_t} is not positive")).into());
        }
        let params = DetectionParams { sigma, d_t, fp_target };
        let mut sns = SnsSketch::from_parts(salted, unsalted, params).map_err(|e| DecodeError::Field(e.to_string()))?;
        sns.two_sided = flags & FLAG_TWO_SIDED != 0;
        Ok(sns)
    }
}

pub fn sns_check(sns: &SnsSketch) -> Verdict {
    sns.check()
}

/// Result of merging two SNS nodes.
#[derive(Debug, Clone)]
pub struct SnsMerge {
    /// Union of the unsalted members.
    pub unsalted: Sketch,
    /// Full protected union, present only when both nodes share a salt.
    pub protected: Option<SnsSketch>,
    pub verdicts: [Verdict; 2],
}

impl SnsMerge {
    pub fn is_protected(&self) -> bool {
        self.protected.is_some()
    }
}

/// Checks both nodes, refuses if either looks attacked, and otherwise merges
/// the unsalted members. When the salted members are compatible too (shared
/// secret), the salted union is kept and the result stays protected, with
/// `a`'s detection parameters.
pub fn sns_merge(a: &SnsSketch, b: &SnsSketch) -> Result<SnsMerge> {
    a.unsalted.is_compatible(&b.unsalted)?;
    let verdicts = [a.check(), b.check()];
    if verdicts.iter().any(|v| v.attacked) {
        return Err(Error::AttackDetected {
            verdicts: Box::new(verdicts),
        });
    }
    let unsalted = merge(&a.unsalted, &b.unsalted)?;
    let protected = match merge(&a.salted, &b.salted) {
        Ok(salted) => Some(SnsSketch {
            salted,
            unsalted: unsalted.clone(),
            params: a.params,
            two_sided: a.two_sided,
        }),
        Err(_) => None,
    };
    Ok(SnsMerge {
        unsalted,
        protected,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::craft_m1;
    use crate::stats::normal_cdf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn elements(seed: u64, n: u64) -> impl Iterator<Item = Vec<u8>> {
        (0..n).map(move |i| [seed.to_le_bytes(), i.to_le_bytes()].concat())
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn calibrated_threshold() {
        let sns = SnsSketch::new(1024, 1024, normal_cdf(-5.0), &mut rng(1)).unwrap();
        assert!((sns.params().d_t - 0.23).abs() < 5e-4);
        let sns = SnsSketch::new(1024, 1024, normal_cdf(-3.0), &mut rng(1)).unwrap();
        assert!((sns.params().d_t - 0.138).abs() < 1e-3);
        assert!(SnsSketch::new(1000, 1024, 0.01, &mut rng(1)).is_err());
        assert!(SnsSketch::new(1024, 1024, 0.7, &mut rng(1)).is_err());
    }

    #[test]
    fn salts_differ_across_entropy() {
        let a = SnsSketch::new(1024, 1024, 1e-3, &mut rng(1)).unwrap();
        let b = SnsSketch::new(1024, 1024, 1e-3, &mut rng(2)).unwrap();
        assert_ne!(a.salted().config().salt, b.salted().config().salt);
        assert!(a.salted().is_salted() && !a.unsalted().is_salted());
        assert_eq!(a.unsalted().config(), b.unsalted().config());
    }

    #[test]
    fn both_members_track_the_stream() {
        let mut sns = SnsSketch::new(1024, 1024, 1e-3, &mut rng(3)).unwrap();
        sns.insert_all(elements(1, 10_000));
        let band = 4.0 * 1.04 / 32.0 * 10_000.0;
        let v = sns.check();
        assert!((v.c_salted - 10_000.0).abs() < band);
        assert!((v.c_unsalted - 10_000.0).abs() < band);
        // 10^4 sits just under the 10 * M floor
        assert!(!v.attacked && v.indeterminate);

        let before = sns.clone();
        sns.insert_all(elements(1, 10_000));
        assert_eq!(sns, before);
    }

    #[test]
    fn m1_element_only_moves_salted_side() {
        let public = HashConfig::default();
        let mut sns = SnsSketch::new(1024, 1024, 1e-3, &mut rng(4)).unwrap();
        let e = craft_m1(&public, 10, 1, elements(2, 100))
            .unwrap()
            .set
            .into_elements()
            .pop()
            .unwrap();
        let s_out = sns.salted().hash(&e);
        let ns_out = sns.unsalted().hash(&e);
        assert_eq!(ns_out.value, 1);
        sns.insert(&e);
        assert_eq!(sns.unsalted().registers()[ns_out.index], 1);
        assert_eq!(sns.salted().registers()[s_out.index], s_out.value);
    }

    #[test]
    fn m1_attack_detected() {
        let attack = craft_m1(&HashConfig::default(), 10, 100_000, elements(5, u64::MAX))
            .unwrap()
            .set;
        let mut sns = SnsSketch::new(1024, 1024, normal_cdf(-5.0), &mut rng(5)).unwrap();
        sns.insert_all(attack.elements());
        let v = sns.check();
        assert!(v.attacked, "{v:?}");
        assert!(v.normalized_diff < -0.9);
        assert_eq!(v.trusted_estimate, v.c_salted);
    }

    #[test]
    fn equal_estimates_are_clean() {
        let mut regs = vec![7u8; 1024];
        regs[0] = 9;
        let salted = Sketch::from_registers(10, HashConfig::default().with_salt(1), regs.clone()).unwrap();
        let unsalted = Sketch::from_registers(10, HashConfig::default(), regs).unwrap();
        let params = DetectionParams::calibrate(1024, 1024, 1e-3).unwrap();
        let sns = SnsSketch::from_parts(salted, unsalted, params).unwrap();
        let v = sns.check();
        assert_eq!(v.c_salted, v.c_unsalted);
        assert!(!v.attacked);
        assert_eq!(v.normalized_diff, 0.0);
        assert_eq!(v.trusted_estimate, v.c_salted);
    }

    #[test]
    fn small_streams_are_indeterminate() {
        let attack = craft_m1(&HashConfig::default(), 10, 3000, elements(6, u64::MAX))
            .unwrap()
            .set;
        let mut sns = SnsSketch::new(1024, 1024, 1e-3, &mut rng(6)).unwrap();
        sns.insert_all(attack.elements());
        let v = sns.check();
        assert!(v.indeterminate);
        assert!(!v.attacked);
    }

    #[test]
    fn two_sided_catches_inflation() {
        let mut regs = vec![12u8; 1024];
        regs[..512].fill(10);
        let salted = Sketch::from_registers(10, HashConfig::default().with_salt(1), vec![10; 1024]).unwrap();
        let unsalted = Sketch::from_registers(10, HashConfig::default(), regs).unwrap();
        let params = DetectionParams::calibrate(1024, 1024, 1e-3).unwrap();
        let mut sns = SnsSketch::from_parts(salted, unsalted, params).unwrap();
        assert!(!sns.check().attacked);
        sns.set_two_sided(true);
        assert!(sns.check().attacked);
    }

    #[test]
    fn check_is_read_only() {
        let mut sns = SnsSketch::new(256, 1024, 1e-4, &mut rng(7)).unwrap();
        sns.insert_all(elements(7, 50_000));
        assert_eq!(sns.check(), sns.check());
    }

    #[test]
    fn from_parts_enforces_salting() {
        let p = DetectionParams::calibrate(1024, 1024, 1e-3).unwrap();
        let plain = Sketch::new(10, HashConfig::default()).unwrap();
        let salted = Sketch::new(10, HashConfig::default().with_salt(3)).unwrap();
        assert!(SnsSketch::from_parts(plain.clone(), plain.clone(), p).is_err());
        assert!(SnsSketch::from_parts(salted.clone(), salted.clone(), p).is_err());
        assert!(SnsSketch::from_parts(salted, plain, p).is_ok());
    }

    #[test]
    fn clean_nodes_merge() {
        let mut a = SnsSketch::new(1024, 1024, normal_cdf(-5.0), &mut rng(8)).unwrap();
        let mut b = SnsSketch::new(1024, 1024, normal_cdf(-5.0), &mut rng(9)).unwrap();
        a.insert_all(elements(10, 10_000));
        b.insert_all(elements(11, 10_000));
        let merged = sns_merge(&a, &b).unwrap();
        assert!(!merged.is_protected());
        let band = 4.0 * 1.04 / 32.0 * 20_000.0;
        assert!((merged.unsalted.estimate() - 20_000.0).abs() < band);
    }

    #[test]
    fn attacked_node_blocks_merge() {
        let mut a = SnsSketch::new(1024, 1024, normal_cdf(-5.0), &mut rng(12)).unwrap();
        let mut b = SnsSketch::new(1024, 1024, normal_cdf(-5.0), &mut rng(13)).unwrap();
        a.insert_all(elements(14, 20_000));
        let attack = craft_m1(&HashConfig::default(), 10, 100_000, elements(15, u64::MAX))
            .unwrap()
            .set;
        b.insert_all(attack.elements());
        match sns_merge(&a, &b) {
            Err(Error::AttackDetected { verdicts }) => {
                assert!(!verdicts[0].attacked);
                assert!(verdicts[1].attacked);
            }
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn self_merge_stays_protected() {
        let mut a = SnsSketch::new(1024, 1024, 1e-3, &mut rng(16)).unwrap();
        a.insert_all(elements(17, 30_000));
        let merged = sns_merge(&a, &a).unwrap();
        let full = merged.protected.expect("shared salt keeps protection");
        assert_eq!(full, a);
    }

    #[test]
    fn mismatched_public_configs_refused() {
        let p = DetectionParams::calibrate(1024, 1024, 1e-3).unwrap();
        let a = SnsSketch::with_params(1024, 1024, HashConfig::unsalted(1), p, &mut rng(1)).unwrap();
        let b = SnsSketch::with_params(1024, 1024, HashConfig::unsalted(2), p, &mut rng(2)).unwrap();
        assert!(matches!(sns_merge(&a, &b), Err(Error::ConfigMismatch { .. })));
    }

    #[test]
    fn serialization_roundtrip() {
        let mut a = SnsSketch::new(512, 2048, 1e-4, &mut rng(18)).unwrap();
        a.set_two_sided(true);
        a.insert_all(elements(19, 5000));
        let bytes = a.to_bytes();
        assert_eq!(&bytes[..4], b"SNS1");
        assert_eq!(SnsSketch::from_bytes(&bytes).unwrap(), a);

        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(matches!(
            SnsSketch::from_bytes(&bad),
            Err(Error::Decode(DecodeError::BadMagic(_)))
        ));
        assert!(SnsSketch::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }
}
