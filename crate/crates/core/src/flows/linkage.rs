//! Pseudonym keys, CSV datasets and the trusted-third-party join.

use std::collections::{BTreeMap, BTreeSet};

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::FlowError;
use crate::ids::{OwnerId, ProjectId};
use crate::securefs::{Principal, PrincipalClass};

pub const LINK_COLUMN: &str = "link_id";
pub const PSEUDONYM_COLUMN: &str = "pseudo_id";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyScope {
    DataOwner(OwnerId),
    Project(ProjectId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudonymKey {
    pub id: String,
    #[serde(with = "hex_bytes")]
    pub secret: Vec<u8>,
    pub scope: KeyScope,
}

impl PseudonymKey {
    /// Owner keys belong to that owner's data managers; project keys to the
    /// trusted third party only.
    pub fn readable_by(&self, p: &Principal) -> bool {
        match (&self.scope, &p.cls) {
            (KeyScope::DataOwner(o), PrincipalClass::DataManager(d)) => o == d,
            (KeyScope::Project(_), PrincipalClass::Ttp) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyStore {
    keys: BTreeMap<String, PseudonymKey>,
}

impl KeyStore {
    pub fn insert(&mut self, key: PseudonymKey) {
        self.keys.insert(key.id.clone(), key);
    }

    pub fn get(&self, id: &str, caller: &Principal) -> Result<&PseudonymKey, FlowError> {
        let key = self
            .keys
            .get(id)
            .ok_or_else(|| FlowError::UnknownKey(id.to_owned()))?;
        if !key.readable_by(caller) {
            return Err(FlowError::KeyAccessDenied {
                key: id.to_owned(),
                principal: caller.id.clone(),
            });
        }
        Ok(key)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.keys.keys().map(String::as_str)
    }
}

/// `hex(HMAC-SHA256(secret, salt || link_id))`, 64 lowercase hex chars.
pub fn pseudonym(secret: &[u8], salt: &[u8], link_id: &str) -> String {
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(secret).expect("HMAC takes any key length");
    mac.update(salt);
    mac.update(link_id.as_bytes());
    hex::encode(mac.finalize().into_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub link_id: String,
    pub attributes: BTreeMap<String, String>,
}

/// A table with one identifier column plus ordered attribute columns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub rows: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, link_id: impl Into<String>, values: &[&str]) {
        let attributes = self
            .columns
            .iter()
            .cloned()
            .zip(values.iter().map(|v| v.to_string()))
            .collect();
        self.rows.push(DatasetRecord {
            link_id: link_id.into(),
            attributes,
        });
    }

    /// Parses CSV with a header row that contains a `link_id` column.
    pub fn from_csv(bytes: &[u8]) -> Result<Self, FlowError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(bytes);
        let headers = rdr.headers().map_err(|e| FlowError::Csv(e.to_string()))?.clone();
        let link_idx = headers
            .iter()
            .position(|h| h == LINK_COLUMN)
            .ok_or_else(|| FlowError::SchemaMismatch(format!("missing `{LINK_COLUMN}` column")))?;
        let columns: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != link_idx)
            .map(|(_, h)| h.to_owned())
            .collect();
        let unique: BTreeSet<&String> = columns.iter().collect();
        if unique.len() != columns.len() {
            return Err(FlowError::SchemaMismatch("duplicate column names".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| FlowError::Csv(e.to_string()))?;
            let mut attributes = BTreeMap::new();
            let mut link_id = String::new();
            for (i, (h, v)) in headers.iter().zip(rec.iter()).enumerate() {
                if i == link_idx {
                    link_id = v.to_owned();
                } else {
                    attributes.insert(h.to_owned(), v.to_owned());
                }
            }
            rows.push(DatasetRecord {
                link_id,
                attributes,
            });
        }
        Ok(Self { columns, rows })
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![LINK_COLUMN.to_owned()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut row = vec![r.link_id.clone()];
            row.extend(
                self.columns
                    .iter()
                    .map(|c| r.attributes.get(c).cloned().unwrap_or_default()),
            );
            w.write_record(&row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn link_ids(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.link_id.as_str()).collect()
    }
}

/// Replaces every `link_id` with its keyed pseudonym. Attributes are left
/// untouched. Fails if the caller may not read the key, or if two distinct
/// identifiers would collide.
pub fn pseudonymize(
    records: &[DatasetRecord],
    key: &PseudonymKey,
    salt: &[u8],
    caller: &Principal,
) -> Result<Vec<DatasetRecord>, FlowError> {
    if !key.readable_by(caller) {
        return Err(FlowError::KeyAccessDenied {
            key: key.id.clone(),
            principal: caller.id.clone(),
        });
    }
    let mut seen: BTreeMap<String, &str> = BTreeMap::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let p = pseudonym(&key.secret, salt, &r.link_id);
        match seen.get(&p) {
            Some(prev) if *prev != r.link_id => return Err(FlowError::CollisionDetected),
            _ => {
                seen.insert(p.clone(), &r.link_id);
            }
        }
        out.push(DatasetRecord {
            link_id: p,
            attributes: r.attributes.clone(),
        });
    }
    Ok(out)
}

/// Output of a linkage: `pseudo_id` followed by owner then project
/// attribute columns. Rows are sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl LinkedTable {
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self, FlowError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(bytes);
        let columns = rdr
            .headers()
            .map_err(|e| FlowError::Csv(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let rows = rdr
            .records()
            .map(|r| {
                r.map(|rec| rec.iter().map(str::to_owned).collect())
                    .map_err(|e| FlowError::Csv(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { columns, rows })
    }
}

/// Inner join of owner and project rows on `link_id` (every matching pair of
/// rows yields one output row), with identifiers replaced by pseudonyms.
pub fn link(owner: &Dataset, project: &Dataset, key: &PseudonymKey, salt: &[u8]) -> Result<LinkedTable, FlowError> {
    let owner_cols: BTreeSet<&String> = owner.columns.iter().collect();
    if let Some(dup) = project.columns.iter().find(|c| owner_cols.contains(c)) {
        return Err(FlowError::SchemaMismatch(format!(
            "attribute `{dup}` appears in both datasets"
        )));
    }
    if owner
        .columns
        .iter()
        .chain(&project.columns)
        .any(|c| c == PSEUDONYM_COLUMN || c == LINK_COLUMN)
    {
        return Err(FlowError::SchemaMismatch(format!(
            "attribute named `{PSEUDONYM_COLUMN}` or `{LINK_COLUMN}`"
        )));
    }

    let mut by_id: BTreeMap<&str, Vec<&DatasetRecord>> = BTreeMap::new();
    for r in &project.rows {
        by_id.entry(r.link_id.as_str()).or_default().push(r);
    }
    let mut pseudonyms: BTreeMap<&str, String> = BTreeMap::new();
    let mut issued: BTreeMap<String, &str> = BTreeMap::new();
    let mut rows = Vec::new();
    for o in &owner.rows {
        let Some(matches) = by_id.get(o.link_id.as_str()) else {
            continue;
        };
        let pid = match pseudonyms.get(o.link_id.as_str()) {
            Some(p) => p.clone(),
            None => {
                let p = pseudonym(&key.secret, salt, &o.link_id);
                if issued.insert(p.clone(), &o.link_id).is_some() {
                    return Err(FlowError::CollisionDetected);
                }
                pseudonyms.insert(&o.link_id, p.clone());
                p
            }
        };
        for m in matches {
            let mut row = Vec::with_capacity(1 + owner.columns.len() + project.columns.len());
            row.push(pid.clone());
            row.extend(owner.columns.iter().map(|c| o.attributes.get(c).cloned().unwrap_or_default()));
            row.extend(project.columns.iter().map(|c| m.attributes.get(c).cloned().unwrap_or_default()));
            rows.push(row);
        }
    }
    rows.sort();

    let raw: BTreeSet<&str> = owner.link_ids().union(&project.link_ids()).copied().collect();
    if rows.iter().flatten().any(|cell| raw.contains(cell.as_str())) {
        return Err(FlowError::IdentifierLeak);
    }

    let mut columns = vec![PSEUDONYM_COLUMN.to_owned()];
    columns.extend(owner.columns.iter().cloned());
    columns.extend(project.columns.iter().cloned());
    Ok(LinkedTable { columns, rows })
}

mod hex_bytes {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(D::Error::custom)
    }
}
