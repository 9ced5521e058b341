//! Hash-chained, append-only audit logs.
//!
//! Two sinks exist on the platform: the management syslog (authentication,
//! system, export and administrative events) and the filesystem-level log
//! (data access). Each sink is one [`AuditChain`]. Every record commits to its
//! predecessor through `prev_hash`, so any edit to a sealed record is detected
//! by [`AuditChain::verify`].
//!
//! Records serialize to JSON lines with hashes as lowercase hex:
//!
//! ```json
//! {"seq":0,"tick":3,"category":"auth","actor":"researcher:p1:alice","detail":"login","prev_hash":"00..","hash":"9f.."}
//! ```

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// A 256-bit digest.
pub type Digest32 = [u8; 32];

/// Genesis predecessor of record 0.
pub const ZERO_HASH: Digest32 = [0u8; 32];

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("category {category} cannot be written to the {sink} sink")]
    WrongSink { category: Category, sink: Sink },
    #[error("malformed log line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Auth,
    Syslog,
    DataAccess,
    Export,
    Admin,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Auth,
        Category::Syslog,
        Category::DataAccess,
        Category::Export,
        Category::Admin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Auth => "auth",
            Category::Syslog => "syslog",
            Category::DataAccess => "data_access",
            Category::Export => "export",
            Category::Admin => "admin",
        }
    }

    /// The only sink a record of this category may be written to.
    pub fn sink(self) -> Sink {
        match self {
            Category::DataAccess => Sink::FilesystemLog,
            _ => Sink::ManagementSyslog,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown audit category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sink {
    ManagementSyslog,
    FilesystemLog,
}

impl fmt::Display for Sink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sink::ManagementSyslog => "management-syslog",
            Sink::FilesystemLog => "filesystem-log",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub tick: u64,
    pub category: Category,
    pub actor: String,
    pub detail: String,
    #[serde(with = "hex_digest")]
    pub prev_hash: Digest32,
    #[serde(with = "hex_digest")]
    pub hash: Digest32,
}

impl AuditRecord {
    /// Hash this record's content would seal to, given its stored `prev_hash`.
    pub fn compute_hash(&self) -> Digest32 {
        seal(
            &self.prev_hash,
            self.seq,
            self.tick,
            self.category,
            &self.actor,
            &self.detail,
        )
    }
}

/// Length-prefixed field concatenation: fixed-width integers, then
/// `u64` big-endian length + bytes for each string field.
fn canonical_bytes(seq: u64, tick: u64, category: Category, actor: &str, detail: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 24 + actor.len() + detail.len() + 16);
    out.extend_from_slice(&seq.to_be_bytes());
    out.extend_from_slice(&tick.to_be_bytes());
    for field in [category.as_str(), actor, detail] {
        out.extend_from_slice(&(field.len() as u64).to_be_bytes());
        out.extend_from_slice(field.as_bytes());
    }
    out
}

fn seal(
    prev: &Digest32,
    seq: u64,
    tick: u64,
    category: Category,
    actor: &str,
    detail: &str,
) -> Digest32 {
    let mut hasher = Sha256::new();
    hasher.update(prev);
    hasher.update(canonical_bytes(seq, tick, category, actor, detail));
    hasher.finalize().into()
}

/// Outcome of [`AuditChain::verify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainStatus {
    Ok,
    FirstBadIndex(usize),
}

impl ChainStatus {
    pub fn is_ok(self) -> bool {
        matches!(self, ChainStatus::Ok)
    }
}

impl fmt::Display for ChainStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainStatus::Ok => f.write_str("ok"),
            ChainStatus::FirstBadIndex(i) => write!(f, "first bad index {i}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFilter {
    pub category: Option<Category>,
    pub actor: Option<String>,
    /// Inclusive tick range.
    pub ticks: Option<(u64, u64)>,
}

impl AuditFilter {
    pub fn matches(&self, rec: &AuditRecord) -> bool {
        self.category.is_none_or(|c| c == rec.category)
            && self.actor.as_deref().is_none_or(|a| a == rec.actor)
            && self
                .ticks
                .is_none_or(|(lo, hi)| lo <= rec.tick && rec.tick <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditChain {
    sink: Sink,
    records: Vec<AuditRecord>,
}

impl AuditChain {
    pub fn new(sink: Sink) -> Self {
        Self {
            sink,
            records: Vec::new(),
        }
    }

    pub fn sink(&self) -> Sink {
        self.sink
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn head_hash(&self) -> Digest32 {
        self.records.last().map_or(ZERO_HASH, |r| r.hash)
    }

    pub fn append(
        &mut self,
        tick: u64,
        category: Category,
        actor: impl Into<String>,
        detail: impl Into<String>,
    ) -> Result<&AuditRecord, AuditError> {
        if category.sink() != self.sink {
            return Err(AuditError::WrongSink {
                category,
                sink: self.sink,
            });
        }
        let actor = actor.into();
        let detail = detail.into();
        let seq = self.records.len() as u64;
        let prev_hash = self.head_hash();
        let hash = seal(&prev_hash, seq, tick, category, &actor, &detail);
        self.records.push(AuditRecord {
            seq,
            tick,
            category,
            actor,
            detail,
            prev_hash,
            hash,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    /// Recomputes the chain from genesis and reports the first record whose
    /// sequence number, predecessor link or stored hash disagrees.
    pub fn verify(&self) -> ChainStatus {
        verify_records(&self.records)
    }

    pub fn query(&self, filter: &AuditFilter) -> Vec<AuditRecord> {
        self.records
            .iter()
            .filter(|r| filter.matches(r))
            .cloned()
            .collect()
    }

    /// Direct mutable access to sealed records. Only meant for tamper
    /// experiments; any edit is visible to [`AuditChain::verify`].
    pub fn records_mut_unsealed(&mut self) -> &mut Vec<AuditRecord> {
        &mut self.records
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<(), AuditError> {
        write_jsonl(&self.records, out)
    }
}

pub fn verify_records(records: &[AuditRecord]) -> ChainStatus {
    let mut expected_prev = ZERO_HASH;
    for (i, rec) in records.iter().enumerate() {
        if rec.seq != i as u64 || rec.prev_hash != expected_prev || rec.compute_hash() != rec.hash {
            return ChainStatus::FirstBadIndex(i);
        }
        expected_prev = rec.hash;
    }
    ChainStatus::Ok
}

pub fn write_jsonl<W: Write>(records: &[AuditRecord], mut out: W) -> Result<(), AuditError> {
    for rec in records {
        serde_json::to_writer(&mut out, rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON-lines log. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<AuditRecord>, AuditError> {
    let mut records = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| AuditError::Parse {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub(crate) mod hex_digest {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use super::Digest32;

    pub fn serialize<S: Serializer>(d: &Digest32, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Digest32, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(D::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| D::Error::custom("digest must be 32 bytes"))
    }
}
