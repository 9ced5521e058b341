//! Export review: automatic small-cell check, manual decision, release to
//! the outbox.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FlowError;
use crate::audit::Category;
use crate::ids::ProjectId;
use crate::platform::{Platform, PlatformError};
use crate::securefs::{layout, FsPath, Principal, PrincipalClass};

/// Minimum unit count per aggregate row for the advisory check.
pub const K_MIN: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Import,
    Export,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Draft,
    Submitted,
    Approved,
    Rejected,
    Released,
}

/// Result of the advisory disclosure check. Row numbers count data rows
/// from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub k_min: u64,
    pub count_column: Option<String>,
    pub flagged_rows: Vec<usize>,
    pub passed: bool,
}

impl CheckReport {
    pub fn run(bytes: &[u8]) -> Self {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(bytes);
        let headers = rdr.headers().ok().cloned();
        let col = headers.as_ref().and_then(|h| count_column(h.iter()));
        let mut flagged_rows = Vec::new();
        if let Some(idx) = col {
            for (i, rec) in rdr.records().enumerate() {
                let small = match rec {
                    Ok(r) => r
                        .get(idx)
                        .and_then(|v| v.trim().parse::<u64>().ok())
                        .is_none_or(|n| n < K_MIN),
                    Err(_) => true,
                };
                if small {
                    flagged_rows.push(i + 1);
                }
            }
        }
        let count_column = col.and_then(|i| headers.as_ref().and_then(|h| h.get(i)).map(str::to_owned));
        Self {
            k_min: K_MIN,
            passed: count_column.is_some() && flagged_rows.is_empty(),
            count_column,
            flagged_rows,
        }
    }

    pub fn summary(&self) -> String {
        match (&self.count_column, self.passed) {
            (None, _) => "no count column".to_owned(),
            (Some(_), true) => "pass".to_owned(),
            (Some(_), false) => format!("flagged rows {:?}", self.flagged_rows),
        }
    }
}

/// Index of the unit-count column: `count` or `n`, case-insensitive.
pub fn count_column<'a>(headers: impl Iterator<Item = &'a str>) -> Option<usize> {
    headers
        .map(|h| h.trim().to_ascii_lowercase())
        .position(|h| h == "count" || h == "n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRequest {
    pub id: String,
    pub project: ProjectId,
    pub direction: Direction,
    pub payload_path: FsPath,
    pub state: RequestState,
    pub requester: Principal,
    pub reviewer: Option<String>,
    pub auto_check: Option<CheckReport>,
    /// SHA-256 of the artifact at submission.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboxRecord {
    pub request_id: String,
    pub file_name: String,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

type Result<T> = std::result::Result<T, PlatformError>;

impl Platform {
    pub fn transfer_request(&self, id: &str) -> Result<&TransferRequest> {
        self.flows
            .requests
            .get(id)
            .ok_or_else(|| FlowError::NotFound(id.to_owned()).into())
    }

    /// Files an export request for an artifact in a project tree, runs the
    /// advisory check and submits it for review.
    pub fn request_export(&mut self, requester: &Principal, artifact: &FsPath) -> Result<TransferRequest> {
        let project = self
            .projects
            .keys()
            .find(|p| artifact.is_within(&layout::project_root(p)))
            .cloned()
            .ok_or_else(|| FlowError::OutsideProject(artifact.clone()))?;
        let bytes = self.read_file(requester, artifact)?;
        self.flows.next_request += 1;
        let id = format!("req-{:06}", self.flows.next_request);
        let mut req = TransferRequest {
            id: id.clone(),
            project,
            direction: Direction::Export,
            payload_path: artifact.clone(),
            state: RequestState::Draft,
            requester: requester.clone(),
            reviewer: None,
            auto_check: None,
            digest: digest(&bytes),
        };
        let report = CheckReport::run(&bytes);
        let summary = report.summary();
        req.auto_check = Some(report);
        req.state = RequestState::Submitted;
        self.flows.requests.insert(id.clone(), req.clone());
        self.log(
            Category::Export,
            &requester.id,
            format!("export {id} submitted {artifact} check={summary}"),
        );
        Ok(req)
    }

    /// Manual decision. Only data-manager staff may review.
    pub fn review_export(&mut self, reviewer: &Principal, id: &str, approve: bool) -> Result<TransferRequest> {
        let state = self.transfer_request(id)?.state;
        if !matches!(reviewer.cls, PrincipalClass::DataManager(_)) {
            return Err(FlowError::NotReviewer(reviewer.id.clone()).into());
        }
        if state != RequestState::Submitted {
            return Err(FlowError::WrongState {
                id: id.to_owned(),
                state,
                op: "review",
            }
            .into());
        }
        let req = self.flows.requests.get_mut(id).expect("checked above");
        req.state = if approve {
            RequestState::Approved
        } else {
            RequestState::Rejected
        };
        req.reviewer = Some(reviewer.id.clone());
        let req = req.clone();
        let verdict = if approve { "approved" } else { "rejected" };
        self.log(Category::Export, &reviewer.id, format!("export {id} {verdict}"));
        Ok(req)
    }

    /// Copies an approved artifact to the outbox. The artifact must be
    /// byte-identical to what was reviewed.
    pub fn release_export(&mut self, actor: &str, id: &str) -> Result<OutboxRecord> {
        let req = self.transfer_request(id)?.clone();
        if req.state != RequestState::Approved {
            return Err(FlowError::WrongState {
                id: id.to_owned(),
                state: req.state,
                op: "release",
            }
            .into());
        }
        let bytes = self.read_file(&req.requester, &req.payload_path)?;
        if digest(&bytes) != req.digest {
            return Err(FlowError::ArtifactModified(id.to_owned()).into());
        }
        let record = OutboxRecord {
            request_id: id.to_owned(),
            file_name: req.payload_path.file_name().to_owned(),
            bytes,
        };
        self.flows.outbox.push(record.clone());
        self.flows
            .requests
            .get_mut(id)
            .expect("checked above")
            .state = RequestState::Released;
        self.log(
            Category::Export,
            actor,
            format!("export {id} released {} sha256={}", record.file_name, req.digest),
        );
        Ok(record)
    }

    /// Writes the outbox as `<dir>/<request-id>/<file>`.
    pub fn write_outbox(&self, dir: &Path) -> std::io::Result<()> {
        for rec in &self.flows.outbox {
            let sub = dir.join(&rec.request_id);
            std::fs::create_dir_all(&sub)?;
            std::fs::write(sub.join(&rec.file_name), &rec.bytes)?;
        }
        Ok(())
    }
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
