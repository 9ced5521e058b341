//! The whole platform as one state value.
//!
//! All operations are serialized through [`Platform`]; there is no internal
//! sharing. A platform starts with the fileserver, the storage partition and
//! a running management environment.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit::{AuditChain, AuditError, Category, ChainStatus, Sink};
use crate::flows::{FlowError, FlowState, KeyScope, PseudonymKey};
use crate::hostsched::{Event, EventKind, SchedError, Scheduler, SchedulerConfig, Topology};
use crate::ids::{EnvId, EnvKind, HostId, JobId, OwnerId, Phase, ProjectId, Tenant};
use crate::netmodel::{self, HostRole, Membership, NetError, NetState, PartitionKind, STORAGE_PARTITION};
use crate::provisioner::{self, ConfigManifest, Environment, MetadataStore, ProvisionError};
use crate::securefs::{acl, layout, Acl, FsError, FsPath, Grantee, Perms, SecureFs, StorageClass, WipeReport};

pub const FILESERVER: &str = "fileserver";
pub const CONFIG_MASTER: &str = "config-master";
pub const SYSLOG_SINK: &str = "syslog-sink";
pub const PLATFORM_ADMIN: &str = "system";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Provision(#[from] ProvisionError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Fs(#[from] FsError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("audit: {0}")]
    Audit(String),
    #[error("project {0} already exists")]
    ProjectExists(ProjectId),
    #[error("unknown project {0}")]
    UnknownProject(ProjectId),
    #[error("data owner {0} already exists")]
    OwnerExists(OwnerId),
    #[error("unknown data owner {0}")]
    UnknownOwner(OwnerId),
}

impl From<AuditError> for PlatformError {
    fn from(e: AuditError) -> Self {
        PlatformError::Audit(e.to_string())
    }
}

impl PlatformError {
    /// Variant name of the innermost error, e.g. `WalltimeExceeded`.
    pub fn kind(&self) -> String {
        fn variant<T: std::fmt::Debug>(e: &T) -> String {
            let dbg = format!("{e:?}");
            dbg.split(|c: char| !c.is_alphanumeric() && c != '_')
                .next()
                .unwrap_or_default()
                .to_owned()
        }
        match self {
            PlatformError::Sched(e) => variant(e),
            PlatformError::Provision(e) => variant(e),
            PlatformError::Net(e) => variant(e),
            PlatformError::Fs(e) => variant(e),
            PlatformError::Flow(FlowError::Fs(e)) => variant(e),
            PlatformError::Flow(e) => variant(e),
            other => variant(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, PlatformError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlatformEvent {
    Host { tick: u64, event: Event },
    Inner { tick: u64, env: EnvId, event: Event },
    Phase { tick: u64, env: EnvId, phase: Phase },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub topology: Topology,
    pub sched: SchedulerConfig,
    pub seed: u64,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            topology: Topology::default(),
            sched: SchedulerConfig::default(),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub id: ProjectId,
    pub created_tick: u64,
    pub key_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Platform {
    pub config: PlatformConfig,
    pub host: Scheduler,
    pub envs: BTreeMap<EnvId, Environment>,
    pub(crate) job_env: BTreeMap<JobId, EnvId>,
    pub(crate) next_env: u64,
    pub metadata: MetadataStore,
    pub net: NetState,
    pub fs: SecureFs,
    pub syslog: AuditChain,
    pub projects: BTreeMap<ProjectId, Project>,
    pub owners: BTreeSet<OwnerId>,
    pub(crate) inner: BTreeMap<EnvId, Scheduler>,
    pub(crate) retired_inner: BTreeMap<EnvId, Scheduler>,
    pub events: Vec<PlatformEvent>,
    host_events_seen: usize,
    pub flows: FlowState,
    pub config_manifest: ConfigManifest,
}

impl Platform {
    /// An empty platform with shared infrastructure but no management
    /// environment yet.
    pub fn bare(config: PlatformConfig) -> Self {
        let mut net = NetState::new();
        net.add_host(HostId::from(FILESERVER), HostRole::Fileserver)
            .expect("fresh state");
        net.ensure_partition(STORAGE_PARTITION, PartitionKind::Storage, None);
        net.set_membership(STORAGE_PARTITION, &HostId::from(FILESERVER), Membership::Full)
            .expect("fileserver exists");

        let mut fs = SecureFs::new();
        let sys = acl([(Grantee::System, Perms::rl())]);
        for root in ["/projects", "/owners"] {
            fs.create_dir(
                &FsPath::parse(root).expect("static path"),
                PLATFORM_ADMIN,
                StorageClass::LustrePersistent,
                sys.clone(),
            )
            .expect("fresh tree");
        }

        Self {
            host: Scheduler::with_config(config.topology.build_nodes(), config.sched, "job"),
            config,
            envs: BTreeMap::new(),
            job_env: BTreeMap::new(),
            next_env: 0,
            metadata: MetadataStore::new(),
            net,
            fs,
            syslog: AuditChain::new(Sink::ManagementSyslog),
            projects: BTreeMap::new(),
            owners: BTreeSet::new(),
            inner: BTreeMap::new(),
            retired_inner: BTreeMap::new(),
            events: Vec::new(),
            host_events_seen: 0,
            flows: FlowState::default(),
            config_manifest: ConfigManifest::platform_default(),
        }
    }

    /// A platform with its management environment launched and running.
    pub fn new(config: PlatformConfig) -> Result<Self> {
        let mut p = Self::bare(config);
        p.launch_and_run(Tenant::Platform, EnvKind::Management, None, None, PLATFORM_ADMIN)?;
        Ok(p)
    }

    pub fn clock(&self) -> u64 {
        self.host.clock()
    }

    pub(crate) fn log_admin(&mut self, actor: &str, detail: String) {
        let tick = self.clock();
        self.syslog
            .append(tick, Category::Admin, actor, detail)
            .expect("admin routes to management syslog");
    }

    pub(crate) fn log_syslog(&mut self, host: &HostId, detail: &str) {
        let tick = self.clock();
        self.syslog
            .append(tick, Category::Syslog, host.as_str(), detail)
            .expect("syslog routes to management syslog");
    }

    pub(crate) fn log(&mut self, category: Category, actor: &str, detail: String) {
        let tick = self.clock();
        match category.sink() {
            Sink::ManagementSyslog => self.syslog.append(tick, category, actor, detail),
            Sink::FilesystemLog => self.fs.access_log_mut().append(tick, category, actor, detail),
        }
        .expect("category routed to its own sink");
    }

    pub(crate) fn require_project(&self, p: &ProjectId) -> Result<&Project> {
        self.projects
            .get(p)
            .ok_or_else(|| PlatformError::UnknownProject(p.clone()))
    }

    pub(crate) fn require_owner(&self, o: &OwnerId) -> Result<()> {
        if self.owners.contains(o) {
            Ok(())
        } else {
            Err(PlatformError::UnknownOwner(o.clone()))
        }
    }

    fn derive_secret(&self, label: &str) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(b"pseudonym-key");
        h.update(self.config.seed.to_be_bytes());
        h.update(label.as_bytes());
        h.finalize().to_vec()
    }

    /// Creates the project's storage tree, metadata record and pseudonym key.
    pub fn create_project(&mut self, id: &ProjectId, actor: &str) -> Result<()> {
        if self.projects.contains_key(id) {
            return Err(PlatformError::ProjectExists(id.clone()));
        }
        let r = Grantee::Researchers(id.clone());
        let dirs: [(FsPath, Acl); 5] = [
            (
                layout::project_root(id),
                acl([(r.clone(), Perms::LIST), (Grantee::System, Perms::rl())]),
            ),
            (
                layout::project_data(id),
                acl([(r.clone(), Perms::rwl()), (Grantee::System, Perms::rl())]),
            ),
            (
                layout::project_staging(id),
                acl([(r.clone(), Perms::rwl()), (Grantee::Ttp, Perms::rl())]),
            ),
            (
                layout::project_linked(id),
                acl([
                    (r.clone(), Perms::rl()),
                    (Grantee::Ttp, Perms::WRITE),
                    (Grantee::System, Perms::rl()),
                ]),
            ),
            (
                layout::project_vms(id),
                acl([(r, Perms::LIST), (Grantee::System, Perms::rl())]),
            ),
        ];
        for (path, perms) in dirs {
            self.fs
                .create_dir(&path, PLATFORM_ADMIN, StorageClass::LustrePersistent, perms)?;
        }
        let key_id = format!("key-project-{id}");
        let key = PseudonymKey {
            id: key_id.clone(),
            secret: self.derive_secret(&key_id),
            scope: KeyScope::Project(id.clone()),
        };
        self.flows.keys.insert(key);
        let tick = self.clock();
        self.projects.insert(
            id.clone(),
            Project {
                id: id.clone(),
                created_tick: tick,
                key_id,
            },
        );
        let record = serde_json::json!({"id": id, "created_tick": tick, "state": "active"});
        self.metadata.put(
            &provisioner::project_key(id),
            serde_json::to_vec(&record).expect("json"),
        );
        self.log_admin(actor, format!("created project {id}"));
        Ok(())
    }

    pub fn create_owner(&mut self, id: &OwnerId, actor: &str) -> Result<()> {
        if !self.owners.insert(id.clone()) {
            return Err(PlatformError::OwnerExists(id.clone()));
        }
        let dm = Grantee::DataManagers(id.clone());
        self.fs.create_dir(
            &layout::owner_root(id),
            PLATFORM_ADMIN,
            StorageClass::LustrePersistent,
            acl([(dm.clone(), Perms::LIST)]),
        )?;
        self.fs.create_dir(
            &layout::owner_staging(id),
            PLATFORM_ADMIN,
            StorageClass::LustrePersistent,
            acl([(dm.clone(), Perms::rwl()), (Grantee::Ttp, Perms::rl())]),
        )?;
        self.fs.create_dir(
            &layout::owner_root(id).join("vm"),
            PLATFORM_ADMIN,
            StorageClass::LustrePersistent,
            acl([(dm, Perms::LIST)]),
        )?;
        let key_id = format!("key-owner-{id}");
        let key = PseudonymKey {
            id: key_id.clone(),
            secret: self.derive_secret(&key_id),
            scope: KeyScope::DataOwner(id.clone()),
        };
        self.flows.keys.insert(key);
        self.log_admin(actor, format!("registered data owner {id}"));
        Ok(())
    }

    /// End-of-project wipe: destroys the project's environments and removes
    /// its entire storage tree. Audit logs are retained.
    pub fn wipe_project(&mut self, id: &ProjectId, actor: &str) -> Result<WipeReport> {
        self.require_project(id)?;
        let tenant = Tenant::Project(id.clone());
        let live: Vec<EnvId> = self
            .envs
            .values()
            .filter(|e| e.tenant == tenant && e.is_active() && e.kind == EnvKind::Work)
            .map(|e| e.id.clone())
            .chain(
                self.envs
                    .values()
                    .filter(|e| e.tenant == tenant && e.is_active() && e.kind == EnvKind::Compute)
                    .map(|e| e.id.clone()),
            )
            .collect();
        let mut removed = Vec::new();
        for env in live {
            if self.environment(&env)?.is_active() {
                removed.extend(self.destroy_environment(&env)?.removed);
            }
        }
        removed.extend(self.fs.wipe_project(id)?.removed);
        removed.sort();
        removed.dedup();
        self.projects.remove(id);
        let record = serde_json::json!({"id": id, "state": "wiped", "tick": self.clock()});
        self.metadata.put(
            &provisioner::project_key(id),
            serde_json::to_vec(&record).expect("json"),
        );
        self.log_admin(actor, format!("wiped project {id}: {} file(s)", removed.len()));
        self.sync_host_events();
        Ok(WipeReport { removed })
    }

    fn sync_host_events(&mut self) {
        let log = self.host.event_log();
        for event in &log[self.host_events_seen..] {
            self.events.push(PlatformEvent::Host {
                tick: event.tick,
                event: event.clone(),
            });
        }
        self.host_events_seen = log.len();
    }

    /// Advances platform time. Environments whose host job expires are torn
    /// down; running work environments tick their inner schedulers.
    pub fn tick(&mut self, n: u64) -> Vec<PlatformEvent> {
        let first = self.events.len();
        for _ in 0..n {
            self.sync_host_events();
            let host_events = self.host.tick(1);
            self.sync_host_events();
            for ev in host_events {
                if ev.kind != EventKind::Expire {
                    continue;
                }
                let Some(env_id) = self.job_env.get(&ev.job).cloned() else {
                    continue;
                };
                let live = self
                    .envs
                    .get(&env_id)
                    .is_some_and(|e| e.is_active() && e.phase != Phase::Destroying);
                if live && self.envs[&env_id].kind != EnvKind::Management {
                    self.destroy_environment(&env_id)
                        .expect("expired environment can be destroyed");
                    self.sync_host_events();
                }
            }
            let clock = self.clock();
            let running: Vec<EnvId> = self
                .inner
                .keys()
                .filter(|id| self.envs.get(*id).map(|e| e.phase) == Some(Phase::Running))
                .cloned()
                .collect();
            for env in running {
                let inner = self.inner.get_mut(&env).expect("listed");
                for event in inner.tick(1) {
                    self.events.push(PlatformEvent::Inner {
                        tick: clock,
                        env: env.clone(),
                        event,
                    });
                }
            }
        }
        self.events[first..].to_vec()
    }

    pub fn verify_isolation(&self) -> Vec<netmodel::Violation> {
        netmodel::verify_isolation(&self.net, &self.phases())
    }

    /// Verification status of the management syslog and filesystem log.
    pub fn verify_audit(&self) -> (ChainStatus, ChainStatus) {
        (self.syslog.verify(), self.fs.access_log().verify())
    }

    /// Enrolls a site-to-site VPN between a remote site and the project's
    /// work environment.
    pub fn enroll_vpn(&mut self, site: &HostId, project: &ProjectId, actor: &str) -> Result<()> {
        let work = self
            .active_work_env(project)
            .filter(|w| w.phase == Phase::Running)
            .ok_or_else(|| ProvisionError::NoWorkEnv(project.clone()))?;
        let work_host = work.vms[0].id.clone();
        if !self.net.hosts.contains_key(site) {
            self.net.add_host(site.clone(), HostRole::RemoteSite)?;
        }
        self.net.enroll_vpn(site, &work_host)?;
        self.log_admin(actor, format!("enrolled vpn {site} -> {work_host}"));
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("platform serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_platform_is_clean() {
        let p = Platform::new(PlatformConfig::default()).unwrap();
        let mgmt = p.management_env().unwrap();
        assert_eq!(mgmt.phase, Phase::Running);
        assert!(p.verify_isolation().is_empty());
        assert_eq!(p.verify_audit(), (ChainStatus::Ok, ChainStatus::Ok));
        assert!(p.net.hosts.contains_key(&HostId::from(CONFIG_MASTER)));
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut p = Platform::new(PlatformConfig::default()).unwrap();
        p.create_project(&"p1".into(), "system").unwrap();
        let back = Platform::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn error_kind_names_leaf_variant() {
        let e: PlatformError = SchedError::WalltimeExceeded {
            requested: "121".into(),
            max: 120,
        }
        .into();
        assert_eq!(e.kind(), "WalltimeExceeded");
        let e: PlatformError = ProvisionError::DuplicateWorkEnv("p".into()).into();
        assert_eq!(e.kind(), "DuplicateWorkEnv");
        assert_eq!(PlatformError::UnknownProject("x".into()).kind(), "UnknownProject");
        let e: PlatformError = FlowError::Fs(FsError::NotFound(FsPath::root())).into();
        assert_eq!(e.kind(), "NotFound");
    }
}
