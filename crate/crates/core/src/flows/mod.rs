//! Data movement: VPN-only import, trusted-third-party linkage and the
//! disclosure-checked export pipeline.

mod export;
mod linkage;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{
    count_column, CheckReport, Direction, OutboxRecord, RequestState, TransferRequest, K_MIN,
};
pub use linkage::{
    link, pseudonym, pseudonymize, Dataset, DatasetRecord, KeyScope, KeyStore, LinkedTable,
    PseudonymKey, LINK_COLUMN, PSEUDONYM_COLUMN,
};

use crate::audit::Category;
use crate::ids::{HostId, OwnerId, ProjectId};
use crate::platform::{Platform, PlatformError};
use crate::securefs::{layout, AccessOp, AccessOutcome, FsError, FsPath, Principal, PrincipalClass};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Fs(#[from] FsError),
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("{principal} may not read key {key}")]
    KeyAccessDenied { key: String, principal: String },
    #[error("pseudonym collision")]
    CollisionDetected,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("raw identifier would appear in linkage output")]
    IdentifierLeak,
    #[error("csv: {0}")]
    Csv(String),
    #[error("{0} is not the trusted third party")]
    NotTtp(String),
    #[error("session is not authenticated")]
    NotAuthenticated,
    #[error("no vpn edge from {site} to the work environment of {project}")]
    NoVpnEdge { site: HostId, project: ProjectId },
    #[error("{0} is not a staging location")]
    NotStaging(FsPath),
    #[error("{0} is not inside a project tree")]
    OutsideProject(FsPath),
    #[error("unknown transfer request {0}")]
    NotFound(String),
    #[error("request {id} is {state:?}; cannot {op}")]
    WrongState {
        id: String,
        state: RequestState,
        op: &'static str,
    },
    #[error("{0} is not an export reviewer")]
    NotReviewer(String),
    #[error("artifact of request {0} changed after submission")]
    ArtifactModified(String),
}

/// Workflow state carried by the platform.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowState {
    pub keys: KeyStore,
    pub requests: std::collections::BTreeMap<String, TransferRequest>,
    pub outbox: Vec<OutboxRecord>,
    pub(crate) next_request: u64,
}

/// An interactive or transfer session. `authenticated` stands for a
/// completed multi-factor login; `site` is the remote end of the transfer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub principal: Principal,
    pub authenticated: bool,
    pub site: HostId,
}

/// Salt for a linkage output, fixed per (project, output file).
pub fn linkage_salt(project: &ProjectId, out_name: &str) -> Vec<u8> {
    format!("{project}/{out_name}").into_bytes()
}

type Result<T> = std::result::Result<T, PlatformError>;

fn content(outcome: AccessOutcome) -> Vec<u8> {
    match outcome {
        AccessOutcome::Content(bytes) => bytes,
        _ => Vec::new(),
    }
}

impl Platform {
    /// Reads a file through the access-checked entry point.
    pub fn read_file(&mut self, principal: &Principal, path: &FsPath) -> Result<Vec<u8>> {
        let tick = self.clock();
        Ok(content(self.fs.fs_access(tick, principal, path, AccessOp::Read)?))
    }

    pub fn write_file(&mut self, principal: &Principal, path: &FsPath, bytes: Vec<u8>) -> Result<()> {
        let tick = self.clock();
        self.fs.fs_access(tick, principal, path, AccessOp::Write(bytes))?;
        Ok(())
    }

    /// Ingress over a site-to-site VPN into a project's staging area.
    pub fn import_via_vpn(&mut self, session: &Session, payload: Vec<u8>, dest: &FsPath) -> Result<FsPath> {
        let actor = session.principal.id.clone();
        if !session.authenticated {
            self.log(
                Category::Auth,
                &actor,
                format!("vpn login from {} rejected: not authenticated", session.site),
            );
            return Err(FlowError::NotAuthenticated.into());
        }
        let project = self
            .projects
            .keys()
            .find(|p| dest.is_within(&layout::project_staging(p)) && dest != &layout::project_staging(p))
            .cloned()
            .ok_or_else(|| FlowError::NotStaging(dest.clone()))?;
        let edge = self
            .active_work_env(&project)
            .and_then(|w| w.vms.first())
            .is_some_and(|vm| self.net.vpn_edges.contains(&(session.site.clone(), vm.id.clone())));
        if !edge {
            self.log(
                Category::Auth,
                &actor,
                format!("transfer from {} refused: no vpn edge", session.site),
            );
            return Err(FlowError::NoVpnEdge {
                site: session.site.clone(),
                project,
            }
            .into());
        }
        self.log(
            Category::Auth,
            &actor,
            format!("vpn session from {} authenticated", session.site),
        );
        self.write_file(&session.principal, dest, payload)?;
        self.log_admin(&actor, format!("import {dest} via {}", session.site));
        Ok(dest.clone())
    }

    /// A data manager places owner data in the owner staging area from
    /// inside the data-manager environment. The ACL decides who may write.
    pub fn stage_owner_data(
        &mut self,
        principal: &Principal,
        owner: &OwnerId,
        file_name: &str,
        bytes: Vec<u8>,
    ) -> Result<FsPath> {
        self.require_owner(owner)?;
        let dest = layout::owner_staging(owner).join(file_name);
        self.write_file(principal, &dest, bytes)?;
        self.log_admin(&principal.id, format!("staged {dest}"));
        Ok(dest)
    }

    /// Joins a staged owner dataset with a staged project dataset on
    /// `link_id`, replacing identifiers with project-key pseudonyms. The
    /// result lands in the project's `linked` directory and the project's
    /// staged input is consumed so no raw identifiers stay project-readable.
    pub fn ttp_link(
        &mut self,
        caller: &Principal,
        owner_file: &FsPath,
        project_file: &FsPath,
        project: &ProjectId,
        out_name: &str,
    ) -> Result<FsPath> {
        if caller.cls != PrincipalClass::Ttp {
            self.log_admin(&caller.id, format!("ttp_link refused for {project}"));
            return Err(FlowError::NotTtp(caller.id.clone()).into());
        }
        let key_id = self.require_project(project)?.key_id.clone();
        let key = self.flows.keys.get(&key_id, caller)?.clone();
        if !project_file.is_within(&layout::project_staging(project)) {
            return Err(FlowError::NotStaging(project_file.clone()).into());
        }
        if !self.owners.iter().any(|o| owner_file.is_within(&layout::owner_staging(o))) {
            return Err(FlowError::NotStaging(owner_file.clone()).into());
        }
        let owner_ds = Dataset::from_csv(&self.read_file(caller, owner_file)?)?;
        let project_ds = Dataset::from_csv(&self.read_file(caller, project_file)?)?;
        let table = link(&owner_ds, &project_ds, &key, &linkage_salt(project, out_name))?;
        let out = layout::project_linked(project).join(out_name);
        self.write_file(caller, &out, table.to_csv())?;
        self.fs.remove_subtree(project_file)?;
        self.log_admin(
            &caller.id,
            format!(
                "ttp_link {owner_file} x {project_file} -> {out}: {} row(s); consumed {project_file}",
                table.rows.len()
            ),
        );
        Ok(out)
    }
}
