//! HyperLogLog cardinality estimation under adversarial input.
//!
//! - [`hll`]: the dense sketch, its hashing, estimation, merging and file format.
//! - [`attack`]: construction of evasion and inflation sets against a sketch
//!   whose hash is known, and black-box filtering against one that is not.
//! - [`sns`]: a salted/unsalted sketch pair that detects such sets while the
//!   unsalted half stays mergeable.
//! - [`stats`]: normal tail probabilities and threshold calibration.
//! - [`flows`]: 5-tuple encoding and synthetic flow streams.
//! - [`experiment`]: seeded, parallel experiment drivers.

pub mod attack;
pub mod error;
pub mod experiment;
pub mod flows;
pub mod hll;
pub mod sns;
pub mod stats;

pub use attack::{craft_inflation, craft_m1, filter_m2, AttackModel, AttackSet, CardinalityOracle, OracleBudget};
pub use error::{DecodeError, Error, Result};
pub use flows::{encode_flow, generate_flows, read_elements, FlowTemplate, FlowTuple};
pub use hll::{hash_element, merge, HashConfig, HashOutcome, Sketch};
pub use sns::{sns_check, sns_merge, SnsSketch, Verdict};
pub use stats::{normal_cdf, sns_sigma, threshold_for_fp, DetectionParams};
