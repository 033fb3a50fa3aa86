use std::fmt;

use crate::hll::HashConfig;
use crate::sns::Verdict;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("precision {0} outside supported range [4, 18]")]
    InvalidPrecision(u8),

    #[error("register count {0} is not a power of two in [16, 262144]")]
    InvalidRegisterCount(usize),

    #[error("sketch precisions differ ({left} vs {right})")]
    PrecisionMismatch { left: u8, right: u8 },

    #[error("hash configurations differ: {}", describe_mismatch(.left, .right))]
    ConfigMismatch { left: HashConfig, right: HashConfig },

    #[error("invalid sketch encoding: {0}")]
    Decode(#[from] DecodeError),

    #[error("false-positive target {0} outside (0, 0.5)")]
    InvalidFpTarget(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("candidate source exhausted after {found} of {requested} elements")]
    TemplateExhausted { found: usize, requested: usize },

    #[error("template admits only {capacity} distinct flows, {requested} requested")]
    TemplateOverConstrained { requested: u64, capacity: u128 },

    #[error("source and destination address families differ")]
    MixedAddressFamilies,

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("merge refused: manipulation detected ({})", AttackSides(.verdicts))]
    AttackDetected { verdicts: Box<[Verdict; 2]> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown flag bits {0:#04x}")]
    UnknownFlags(u8),
    #[error("truncated payload: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("register {index} holds {value}, above rank cap {cap}")]
    RegisterOutOfRange { index: usize, value: u8, cap: u8 },
    #[error("precision {0} outside supported range [4, 18]")]
    Precision(u8),
    #[error("{0}")]
    Field(String),
}

fn describe_mismatch(left: &HashConfig, right: &HashConfig) -> String {
    let salt = |c: &HashConfig| match c.salt {
        Some(s) => format!("{s:#018x}"),
        None => "none".to_string(),
    };
    if left.salt != right.salt {
        format!("salt {} vs salt {}", salt(left), salt(right))
    } else {
        format!(
            "seeds ({:#x}, {:#x}) vs ({:#x}, {:#x})",
            left.index_seed, left.value_seed, right.index_seed, right.value_seed
        )
    }
}

struct AttackSides<'a>(&'a [Verdict; 2]);

impl fmt::Display for AttackSides<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (side, v) in ["left", "right"].iter().zip(self.0.iter()) {
            if v.attacked {
                if !first {
                    write!(f, ", ")?;
                }
                write!(f, "{side} input diff {:.4}", v.normalized_diff)?;
                first = false;
            }
        }
        Ok(())
    }
}
