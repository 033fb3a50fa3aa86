//! Attack-set construction against unprotected sketches.
//!
//! Two attacker models are covered. A known-hash attacker (M1) evaluates the
//! sketch's hash offline and keeps candidates whose rank is 1: such elements
//! can never lift a register that is already non-zero. A black-box attacker
//! (M2) only sees `insert` and `estimate`; it replays candidates into a fresh
//! victim and keeps those that leave the estimate unchanged.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hll::{check_precision, hash_element, max_rank, HashConfig, Sketch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackModel {
    /// Known hash configuration, rank-1 elements.
    M1,
    /// Black-box insert-and-observe filtering.
    M2,
    /// Known hash configuration, high-rank elements.
    Inflation,
}

impl AttackModel {
    pub fn target_config_known(self) -> bool {
        !matches!(self, AttackModel::M2)
    }
}

/// Distinct elements engineered against a target sketch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSet {
    elements: Vec<Vec<u8>>,
    model: AttackModel,
    fingerprint: Option<String>,
}

/// First line of an attack-set file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSetHeader {
    pub count: usize,
    pub model: AttackModel,
    pub config_fingerprint: Option<String>,
}

impl AttackSet {
    /// Panics in debug builds if `elements` contains duplicates.
    fn from_distinct(elements: Vec<Vec<u8>>, model: AttackModel, fingerprint: Option<String>) -> Self {
        debug_assert_eq!(elements.iter().collect::<HashSet<_>>().len(), elements.len());
        AttackSet {
            elements,
            model,
            fingerprint,
        }
    }

    /// Builds a set from arbitrary elements, dropping repeats.
    pub fn new(elements: impl IntoIterator<Item = Vec<u8>>, model: AttackModel, fingerprint: Option<String>) -> Self {
        let mut seen = HashSet::new();
        let elements = elements.into_iter().filter(|e| seen.insert(e.clone())).collect();
        AttackSet {
            elements,
            model,
            fingerprint,
        }
    }

    pub fn elements(&self) -> &[Vec<u8>] {
        &self.elements
    }

    pub fn into_elements(self) -> Vec<Vec<u8>> {
        self.elements
    }

    pub fn true_cardinality(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn model(&self) -> AttackModel {
        self.model
    }

    pub fn target_config_known(&self) -> bool {
        self.model.target_config_known()
    }

    pub fn config_fingerprint(&self) -> Option<&str> {
        self.fingerprint.as_deref()
    }

    pub fn header(&self) -> AttackSetHeader {
        AttackSetHeader {
            count: self.elements.len(),
            model: self.model,
            config_fingerprint: self.fingerprint.clone(),
        }
    }

    /// JSON header line followed by one lowercase hex element per line.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header()).map_err(std::io::Error::other)?;
        writeln!(out)?;
        crate::flows::write_hex_lines(out, &self.elements)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let header: AttackSetHeader = serde_json::from_str(first.trim()).map_err(|e| Error::Parse {
            line: 1,
            message: format!("attack-set header: {e}"),
        })?;
        let mut elements = Vec::with_capacity(header.count);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            elements.push(hex::decode(text).map_err(|e| Error::Parse {
                line: i as u64 + 2,
                message: e.to_string(),
            })?);
        }
        if elements.len() != header.count {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "header declares {} elements, file holds {}",
                    header.count,
                    elements.len()
                ),
            });
        }
        let set = AttackSet::new(elements, header.model, header.config_fingerprint);
        if set.true_cardinality() != header.count {
            return Err(Error::Parse {
                line: 1,
                message: "attack set contains duplicate elements".into(),
            });
        }
        Ok(set)
    }
}

/// Attack set plus the number of candidates it took to find it.
#[derive(Debug, Clone)]
pub struct Crafted {
    pub set: AttackSet,
    pub candidates_examined: u64,
}

/// First `count` distinct candidates whose rank is exactly 1 under `config`.
pub fn craft_m1<I, E>(config: &HashConfig, precision: u8, count: usize, candidates: I) -> Result<Crafted>
where
    I: IntoIterator<Item = E>,
    E: AsRef<[u8]>,
{
    check_precision(precision)?;
    let mut seen = HashSet::with_capacity(count);
    let mut found = Vec::with_capacity(count);
    let mut examined = 0u64;
    if count > 0 {
        for candidate in candidates {
            examined += 1;
            let e = candidate.as_ref();
            if hash_element(e, config, precision)?.value == 1 && seen.insert(e.to_vec()) {
                found.push(e.to_vec());
                if found.len() == count {
                    break;
                }
            }
        }
    }
    if found.len() < count {
        return Err(Error::TemplateExhausted {
            found: found.len(),
            requested: count,
        });
    }
    Ok(Crafted {
        set: AttackSet::from_distinct(found, AttackModel::M1, Some(config.fingerprint(precision))),
        candidates_examined: examined,
    })
}

/// Every distinct candidate among the first `budget` whose rank is at least `min_rank`.
pub fn craft_inflation<I, E>(
    config: &HashConfig,
    precision: u8,
    min_rank: u8,
    budget: u64,
    candidates: I,
) -> Result<Crafted>
where
    I: IntoIterator<Item = E>,
    E: AsRef<[u8]>,
{
    check_precision(precision)?;
    let cap = max_rank(precision);
    if min_rank == 0 || min_rank > cap {
        return Err(Error::InvalidParameter(format!(
            "min_rank {min_rank} outside [1, {cap}] at precision {precision}"
        )));
    }
    let mut seen = HashSet::new();
    let mut found = Vec::new();
    let mut examined = 0u64;
    for candidate in candidates.into_iter().take(budget as usize) {
        examined += 1;
        let e = candidate.as_ref();
        if hash_element(e, config, precision)?.value >= min_rank && seen.insert(e.to_vec()) {
            found.push(e.to_vec());
        }
    }
    Ok(Crafted {
        set: AttackSet::from_distinct(found, AttackModel::Inflation, Some(config.fingerprint(precision))),
        candidates_examined: examined,
    })
}

/// The only view an M2 attacker has of a sketch.
pub trait CardinalityOracle {
    fn insert(&mut self, element: &[u8]);
    fn estimate(&self) -> f64;
}

impl CardinalityOracle for Sketch {
    fn insert(&mut self, element: &[u8]) {
        Sketch::insert(self, element);
    }

    fn estimate(&self) -> f64 {
        Sketch::estimate(self)
    }
}

/// A sketch that exposes nothing but the oracle interface.
pub struct BlackBox(Sketch);

impl BlackBox {
    pub fn new(sketch: Sketch) -> Self {
        BlackBox(sketch)
    }
}

impl CardinalityOracle for BlackBox {
    fn insert(&mut self, element: &[u8]) {
        self.0.insert(element);
    }

    fn estimate(&self) -> f64 {
        self.0.estimate()
    }
}

/// Oracle calls spent by an M2 attacker.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleBudget {
    insert_calls: u64,
    estimate_calls: u64,
}

impl OracleBudget {
    pub fn insert_calls(&self) -> u64 {
        self.insert_calls
    }

    pub fn estimate_calls(&self) -> u64 {
        self.estimate_calls
    }
}

struct Metered<'a, O> {
    oracle: O,
    budget: &'a mut OracleBudget,
}

impl<O: CardinalityOracle> Metered<'_, O> {
    fn insert(&mut self, element: &[u8]) {
        self.budget.insert_calls += 1;
        self.oracle.insert(element);
    }

    fn estimate(&mut self) -> f64 {
        self.budget.estimate_calls += 1;
        self.oracle.estimate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: u32,
    pub input: usize,
    pub retained: usize,
}

#[derive(Debug, Clone)]
pub struct M2Outcome {
    pub set: AttackSet,
    pub rounds: Vec<RoundStats>,
}

/// Black-box filtering over `rounds` passes.
///
/// Each pass opens a fresh victim from `new_victim`, inserts the current
/// candidates in order, reads the estimate after every insertion and keeps
/// the candidates that left it unchanged. The kept elements, in their
/// original order, are the next pass's candidates. Repeated candidates are
/// dropped up front.
pub fn filter_m2<O, F, I, E>(
    mut new_victim: F,
    candidates: I,
    rounds: u32,
    budget: &mut OracleBudget,
) -> Result<M2Outcome>
where
    O: CardinalityOracle,
    F: FnMut() -> O,
    I: IntoIterator<Item = E>,
    E: AsRef<[u8]>,
{
    if rounds == 0 {
        return Err(Error::InvalidParameter("rounds must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    let mut current: Vec<Vec<u8>> = candidates
        .into_iter()
        .map(|e| e.as_ref().to_vec())
        .filter(|e| seen.insert(e.clone()))
        .collect();
    drop(seen);

    let mut stats = Vec::with_capacity(rounds as usize);
    for round in 1..=rounds {
        let input = current.len();
        let mut victim = Metered {
            oracle: new_victim(),
            budget: &mut *budget,
        };
        let mut last = victim.estimate();
        current.retain(|e| {
            victim.insert(e);
            let now = victim.estimate();
            let unchanged = now == last;
            last = now;
            unchanged
        });
        stats.push(RoundStats {
            round,
            input,
            retained: current.len(),
        });
    }
    Ok(M2Outcome {
        set: AttackSet::from_distinct(current, AttackModel::M2, None),
        rounds: stats,
    })
}

/// Estimate of a fresh copy of `template` fed `elements`.
pub fn fresh_estimate<E: AsRef<[u8]>>(template: &Sketch, elements: &[E]) -> f64 {
    let mut s = template.empty_like();
    s.insert_all(elements);
    s.estimate()
}
