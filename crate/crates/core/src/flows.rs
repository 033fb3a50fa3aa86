//! Flow identifiers, their canonical byte encoding, and element streams.
//!
//! Encoding of a 5-tuple (all integers big-endian):
//!
//! ```text
//! family (1: 4 or 6) | src_addr (4 or 16) | dst_addr (4 or 16)
//!   | src_port (2) | dst_port (2) | protocol (1)
//! ```
//!
//! IPv4 tuples encode to 14 bytes and IPv6 tuples to 38.
//!
//! Synthetic flows are drawn from ChaCha8 seeded with `seed_from_u64(seed)`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowTuple {
    pub src_addr: IpAddr,
    pub dst_addr: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

pub const IPV4_ENCODED_LEN: usize = 14;
pub const IPV6_ENCODED_LEN: usize = 38;

impl FlowTuple {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(IPV6_ENCODED_LEN);
        match (self.src_addr, self.dst_addr) {
            (IpAddr::V4(s), IpAddr::V4(d)) => {
                out.push(4);
                out.extend_from_slice(&s.octets());
                out.extend_from_slice(&d.octets());
            }
            (IpAddr::V6(s), IpAddr::V6(d)) => {
                out.push(6);
                out.extend_from_slice(&s.octets());
                out.extend_from_slice(&d.octets());
            }
            _ => return Err(Error::MixedAddressFamilies),
        }
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.push(self.protocol);
        Ok(out)
    }
}

pub fn encode_flow(flow: &FlowTuple) -> Result<Vec<u8>> {
    flow.encode()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AddressFamily {
    #[default]
    V4,
    V6,
}

/// Fixed fields for synthetic flows; `None` fields are drawn at random.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlowTemplate {
    pub family: AddressFamily,
    pub src_addr: Option<IpAddr>,
    pub dst_addr: Option<IpAddr>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub protocol: Option<u8>,
}

impl FlowTemplate {
    fn check_families(&self) -> Result<()> {
        let matches = |a: Option<IpAddr>| {
            matches!(
                (a, self.family),
                (None, _) | (Some(IpAddr::V4(_)), AddressFamily::V4) | (Some(IpAddr::V6(_)), AddressFamily::V6)
            )
        };
        if matches(self.src_addr) && matches(self.dst_addr) {
            Ok(())
        } else {
            Err(Error::MixedAddressFamilies)
        }
    }

    fn addr_bits(&self) -> u32 {
        match self.family {
            AddressFamily::V4 => 32,
            AddressFamily::V6 => 128,
        }
    }

    /// Bit widths of the free fields, in tuple order.
    fn free_widths(&self) -> Vec<(Field, u32)> {
        let a = self.addr_bits();
        [
            (Field::SrcAddr, self.src_addr.is_none(), a),
            (Field::DstAddr, self.dst_addr.is_none(), a),
            (Field::SrcPort, self.src_port.is_none(), 16),
            (Field::DstPort, self.dst_port.is_none(), 16),
            (Field::Protocol, self.protocol.is_none(), 8),
        ]
        .into_iter()
        .filter(|&(_, free, _)| free)
        .map(|(f, _, w)| (f, w))
        .collect()
    }

    /// Number of distinct tuples the template admits, saturating at `u128::MAX`.
    pub fn capacity(&self) -> u128 {
        let bits: u32 = self.free_widths().iter().map(|&(_, w)| w).sum();
        if bits >= 128 {
            u128::MAX
        } else {
            1u128 << bits
        }
    }

    fn build(&self, values: &[(Field, u128)]) -> FlowTuple {
        let zero = match self.family {
            AddressFamily::V4 => IpAddr::V4(Ipv4Addr::UNSPECIFIED),
            AddressFamily::V6 => IpAddr::V6(Ipv6Addr::UNSPECIFIED),
        };
        let mut flow = FlowTuple {
            src_addr: self.src_addr.unwrap_or(zero),
            dst_addr: self.dst_addr.unwrap_or(zero),
            src_port: self.src_port.unwrap_or(0),
            dst_port: self.dst_port.unwrap_or(0),
            protocol: self.protocol.unwrap_or(0),
        };
        let addr = |v: u128| match self.family {
            AddressFamily::V4 => IpAddr::V4(Ipv4Addr::from(v as u32)),
            AddressFamily::V6 => IpAddr::V6(Ipv6Addr::from(v)),
        };
        for &(field, v) in values {
            match field {
                Field::SrcAddr => flow.src_addr = addr(v),
                Field::DstAddr => flow.dst_addr = addr(v),
                Field::SrcPort => flow.src_port = v as u16,
                Field::DstPort => flow.dst_port = v as u16,
                Field::Protocol => flow.protocol = v as u8,
            }
        }
        flow
    }

    fn random(&self, rng: &mut ChaCha8Rng, widths: &[(Field, u32)]) -> FlowTuple {
        let values: Vec<(Field, u128)> = widths
            .iter()
            .map(|&(f, w)| {
                let v: u128 = rng.random();
                (f, if w == 128 { v } else { v & ((1u128 << w) - 1) })
            })
            .collect();
        self.build(&values)
    }

    /// Tuple number `index` in mixed-radix order over the free fields (last field fastest).
    fn nth(&self, mut index: u128, widths: &[(Field, u32)]) -> FlowTuple {
        let mut values = Vec::with_capacity(widths.len());
        for &(f, w) in widths.iter().rev() {
            values.push((f, index & ((1u128 << w) - 1)));
            index >>= w;
        }
        self.build(&values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    SrcAddr,
    DstAddr,
    SrcPort,
    DstPort,
    Protocol,
}

/// `count` distinct flows honoring the template, deterministic in `seed`.
///
/// Sparse templates are sampled with rejection of repeats. When the template
/// admits at most four times `count` tuples, the whole space is enumerated
/// and a seeded partial shuffle picks the subset.
pub fn generate_flows(seed: u64, count: usize, template: &FlowTemplate) -> Result<Vec<FlowTuple>> {
    template.check_families()?;
    let capacity = template.capacity();
    if count as u128 > capacity {
        return Err(Error::TemplateOverConstrained {
            requested: count as u64,
            capacity,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = template.free_widths();
    if capacity <= 4 * count as u128 {
        let mut indices: Vec<u128> = (0..capacity).collect();
        for i in 0..count {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        return Ok(indices[..count].iter().map(|&i| template.nth(i, &widths)).collect());
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let flow = template.random(&mut rng, &widths);
        if seen.insert(flow) {
            out.push(flow);
        }
    }
    Ok(out)
}

/// Endless sweep from `base`: source port climbs through every value, then
/// the source address advances by one and the ports repeat.
pub fn port_sweep(base: FlowTuple) -> impl Iterator<Item = FlowTuple> {
    let start = base.src_port as u64;
    (0u64..).map(move |i| {
        let step = start + i;
        let port = (step & 0xffff) as u16;
        let carry = step >> 16;
        let src_addr = match base.src_addr {
            IpAddr::V4(a) => IpAddr::V4(Ipv4Addr::from(u32::from(a).wrapping_add(carry as u32))),
            IpAddr::V6(a) => IpAddr::V6(Ipv6Addr::from(u128::from(a).wrapping_add(carry as u128))),
        };
        FlowTuple {
            src_addr,
            src_port: port,
            ..base
        }
    })
}

/// Random IPv4 base tuple with destination port 443 and TCP.
pub fn random_base_flow(seed: u64) -> FlowTuple {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FlowTuple {
        src_addr: IpAddr::V4(Ipv4Addr::from(rng.random::<u32>())),
        dst_addr: IpAddr::V4(Ipv4Addr::from(rng.random::<u32>())),
        src_port: 0,
        dst_port: 443,
        protocol: 6,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementFormat {
    Csv,
    HexLines,
}

pub fn write_flows_csv(path: &Path, flows: &[FlowTuple]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_to_io)?;
    for f in flows {
        w.serialize(f).map_err(csv_to_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_hex_lines<W: Write, E: AsRef<[u8]>>(mut out: W, elements: &[E]) -> Result<()> {
    for e in elements {
        writeln!(out, "{}", hex::encode(e.as_ref()))?;
    }
    Ok(())
}

fn csv_to_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

const CSV_HEADER: [&str; 5] = ["src_addr", "dst_addr", "src_port", "dst_port", "protocol"];

pub fn read_flows_csv(path: &Path) -> Result<Vec<FlowTuple>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_to_io)?;
    let headers = reader.headers().map_err(|e| parse_error(1, e))?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut flows = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(parse_error(line, e)),
        }
        let line = record.position().map_or(line, |p| p.line());
        let flow: FlowTuple = record.deserialize(Some(&headers)).map_err(|e| parse_error(line, e))?;
        flow.encode().map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        flows.push(flow);
    }
    Ok(flows)
}

fn parse_error(line: u64, e: csv::Error) -> Error {
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    };
    Error::Parse { line, message }
}

/// Reads hex-encoded elements, one per line. A leading JSON header line
/// (as written for attack sets) and blank lines are skipped.
pub fn read_hex_lines(path: &Path) -> Result<Vec<Vec<u8>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || (i == 0 && text.starts_with('{')) {
            continue;
        }
        let bytes = hex::decode(text).map_err(|e| Error::Parse {
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(bytes);
    }
    Ok(out)
}

pub fn read_elements(path: &Path, format: ElementFormat) -> Result<Vec<Vec<u8>>> {
    match format {
        ElementFormat::Csv => read_flows_csv(path)?.iter().map(FlowTuple::encode).collect(),
        ElementFormat::HexLines => read_hex_lines(path),
    }
}

pub fn write_hex_file<E: AsRef<[u8]>>(path: &Path, elements: &[E]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_hex_lines(&mut w, elements)?;
    w.flush()?;
    Ok(())
}
