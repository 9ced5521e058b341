//! Virtual-cluster lifecycle.
//!
//! An environment is requested as a host-scheduler job, gets VMs once that
//! job is allocated, has its technical record written to the metadata store,
//! is initialized, configured from the management environment, locked down
//! and finally runs. Destroying an environment clears every VM-local file;
//! persistent project storage outlives it.
//!
//! ```text
//! Requested -> Allocated -> Initializing -> Configured -> LockedDown -> Running
//!      \___________\_____________\______________\____________\____________\
//!                                                                    Destroying -> Destroyed
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hostsched::{JobSpec, JobState, Node, SchedError, Scheduler, SchedulerConfig, Walltime};
use crate::ids::{EnvId, EnvKind, HostId, JobId, NodeId, OwnerId, Phase, ProjectId, Tenant};
use crate::netmodel::{self, HostRole, Membership, STORAGE_PARTITION};
use crate::platform::{Platform, PlatformEvent, CONFIG_MASTER, SYSLOG_SINK};
use crate::securefs::{acl, layout, FsPath, Grantee, Perms, StorageClass, WipeReport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProvisionError {
    #[error("project {0} already has an active work environment")]
    DuplicateWorkEnv(ProjectId),
    #[error("project {0} has no running work environment")]
    NoWorkEnv(ProjectId),
    #[error("data owner {0} already has an active data-manager environment")]
    DuplicateDataManagerEnv(OwnerId),
    #[error("the platform already has a management environment")]
    DuplicateManagementEnv,
    #[error("the management environment is not running")]
    NoManagementEnv,
    #[error("the management environment is permanent")]
    ManagementPermanent,
    #[error("environment {env} cannot advance from phase {phase}: {reason}")]
    InvalidPhase {
        env: EnvId,
        phase: Phase,
        reason: String,
    },
    #[error("environment {0} not found")]
    NotFound(EnvId),
    #[error("metadata key {0} not found")]
    KeyNotFound(String),
    #[error("invalid environment size: {0}")]
    InvalidSize(String),
    #[error("{kind} environments cannot belong to {tenant}")]
    WrongTenant { kind: EnvKind, tenant: Tenant },
    #[error("environment {0} is not running")]
    EnvNotRunning(EnvId),
    #[error("compute environment {0} is already joined")]
    AlreadyJoined(EnvId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSize {
    pub vm_count: u32,
    pub cores: u32,
    pub memory_gb: u32,
}

impl EnvSize {
    pub fn new(vm_count: u32, cores: u32, memory_gb: u32) -> Self {
        Self {
            vm_count,
            cores,
            memory_gb,
        }
    }
}

/// Default shape for each kind; compute VMs always take whole nodes.
pub fn default_size(kind: EnvKind, node_cores: u32, node_memory: u32) -> EnvSize {
    match kind {
        EnvKind::Work | EnvKind::DataManager => EnvSize::new(1, 4, 16),
        EnvKind::Management => EnvSize::new(2, 2, 8),
        EnvKind::Compute => EnvSize::new(1, node_cores, node_memory),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vm {
    pub id: HostId,
    pub host_node: NodeId,
    pub cores: u32,
    pub memory_gb: u32,
    pub exclusive: bool,
}

/// What the management environment pushes to every tenant VM during
/// configuration. Applying the same manifest twice changes nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigManifest {
    pub accounts: Vec<String>,
    pub software: Vec<String>,
    pub firewall_rules: Vec<String>,
}

impl ConfigManifest {
    pub fn platform_default() -> Self {
        Self {
            accounts: vec!["svc-monitor".into()],
            software: vec![
                "gcc".into(),
                "openmpi".into(),
                "python3".into(),
                "R".into(),
                "slurm".into(),
            ],
            firewall_rules: vec![
                "drop all egress except overlay".into(),
                "allow ib-storage to fileserver".into(),
                "allow syslog to sink".into(),
                "drop config-master after lockdown".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub id: EnvId,
    pub tenant: Tenant,
    pub kind: EnvKind,
    pub phase: Phase,
    pub host_job: JobId,
    pub vms: Vec<Vm>,
    pub owner_principal: String,
    pub size: EnvSize,
    pub walltime: Walltime,
    /// Compute environments: the work environment they extend.
    pub attached_to: Option<EnvId>,
    pub joined: bool,
    pub applied_config: Option<ConfigManifest>,
    pub history: Vec<(u64, Phase)>,
}

impl Environment {
    pub fn project(&self) -> Option<&ProjectId> {
        match &self.tenant {
            Tenant::Project(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.phase.is_active()
    }

    /// JSON record stored under `/clusters/<id>` and returned by `env status`.
    pub fn to_record(&self) -> serde_json::Value {
        serde_json::json!({
            "id": self.id,
            "kind": self.kind,
            "tenant": self.tenant.to_string(),
            "phase": self.phase,
            "host_job": self.host_job,
            "vms": self.vms,
            "owner": self.owner_principal,
            "attached_to": self.attached_to,
            "joined": self.joined,
        })
    }
}

/// In-process versioned key/value store. Versions start at 1 and increase by
/// one per write to the same key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataStore {
    entries: BTreeMap<String, (Vec<u8>, u64)>,
}

impl MetadataStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: &str, value: Vec<u8>) -> u64 {
        let version = self.entries.get(key).map_or(0, |(_, v)| *v) + 1;
        self.entries.insert(key.to_owned(), (value, version));
        version
    }

    pub fn read(&self, key: &str) -> std::result::Result<(&[u8], u64), ProvisionError> {
        self.entries
            .get(key)
            .map(|(v, ver)| (v.as_slice(), *ver))
            .ok_or_else(|| ProvisionError::KeyNotFound(key.to_owned()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

pub fn cluster_key(env: &EnvId) -> String {
    format!("/clusters/{env}")
}

pub fn project_key(p: &ProjectId) -> String {
    format!("/projects/{p}")
}

fn map_sched(e: SchedError) -> crate::platform::PlatformError {
    e.into()
}

fn invalid(env: &Environment, reason: impl Into<String>) -> ProvisionError {
    ProvisionError::InvalidPhase {
        env: env.id.clone(),
        phase: env.phase,
        reason: reason.into(),
    }
}

type Result<T> = std::result::Result<T, crate::platform::PlatformError>;

impl Platform {
    pub fn environment(&self, id: &EnvId) -> Result<&Environment> {
        self.envs
            .get(id)
            .ok_or_else(|| ProvisionError::NotFound(id.clone()).into())
    }

    pub fn environments(&self) -> impl Iterator<Item = &Environment> {
        self.envs.values()
    }

    pub fn active_work_env(&self, p: &ProjectId) -> Option<&Environment> {
        let tenant = Tenant::Project(p.clone());
        self.envs
            .values()
            .find(|e| e.kind == EnvKind::Work && e.tenant == tenant && e.is_active())
    }

    pub fn management_env(&self) -> Option<&Environment> {
        self.envs
            .values()
            .find(|e| e.kind == EnvKind::Management && e.is_active())
    }

    pub fn phases(&self) -> BTreeMap<EnvId, Phase> {
        self.envs
            .iter()
            .map(|(id, e)| (id.clone(), e.phase))
            .collect()
    }

    pub fn read_metadata(&self, key: &str) -> Result<(Vec<u8>, u64)> {
        let (v, ver) = self.metadata.read(key)?;
        Ok((v.to_vec(), ver))
    }

    /// Submits the host job for a new environment. The environment starts
    /// in `Requested`; it gets VMs once [`Platform::advance_phase`] finds its
    /// job allocated.
    pub fn launch_environment(
        &mut self,
        tenant: Tenant,
        kind: EnvKind,
        size: Option<EnvSize>,
        walltime: Option<u64>,
        principal: &str,
    ) -> Result<EnvId> {
        let topo = self.config.topology;
        let mut attached_to = None;
        match (&kind, &tenant) {
            (EnvKind::Management, Tenant::Platform) => {
                if self.management_env().is_some() {
                    return Err(ProvisionError::DuplicateManagementEnv.into());
                }
            }
            (EnvKind::Work, Tenant::Project(p)) => {
                self.require_project(p)?;
                if self.active_work_env(p).is_some() {
                    return Err(ProvisionError::DuplicateWorkEnv(p.clone()).into());
                }
            }
            (EnvKind::Compute, Tenant::Project(p)) => {
                self.require_project(p)?;
                match self.active_work_env(p) {
                    Some(w) if w.phase == Phase::Running => attached_to = Some(w.id.clone()),
                    _ => return Err(ProvisionError::NoWorkEnv(p.clone()).into()),
                }
            }
            (EnvKind::DataManager, Tenant::Owner(o)) => {
                self.require_owner(o)?;
                let dup = self.envs.values().any(|e| {
                    e.kind == EnvKind::DataManager && e.tenant == tenant && e.is_active()
                });
                if dup {
                    return Err(ProvisionError::DuplicateDataManagerEnv(o.clone()).into());
                }
            }
            _ => {
                return Err(ProvisionError::WrongTenant {
                    kind,
                    tenant: tenant.clone(),
                }
                .into())
            }
        }

        let size = size.unwrap_or_else(|| default_size(kind, topo.cores, topo.memory_gb));
        if size.vm_count == 0 || size.cores == 0 {
            return Err(ProvisionError::InvalidSize("VM count and cores must be positive".into()).into());
        }
        let spec = match kind {
            EnvKind::Compute => {
                let wt = walltime.unwrap_or(self.host.config().max_walltime);
                JobSpec::batch(size.vm_count, size.cores.min(topo.cores), wt).exclusive()
            }
            _ => {
                // All VMs of a shared-node environment sit on one physical node
                // and together use only part of it.
                let total = size.vm_count * size.cores;
                if total >= topo.cores {
                    return Err(ProvisionError::InvalidSize(format!(
                        "{kind} environment needs {total} cores; must stay below a full {}-core node",
                        topo.cores
                    ))
                    .into());
                }
                let mut spec = JobSpec::service(1, total);
                if let Some(w) = walltime {
                    spec.walltime = Walltime::Ticks(w);
                }
                spec
            }
        };
        let walltime = spec.walltime;
        let job = self.host.submit_job(spec).map_err(map_sched)?;

        self.next_env += 1;
        let prefix = match kind {
            EnvKind::Work => "work",
            EnvKind::Compute => "compute",
            EnvKind::Management => "mgmt",
            EnvKind::DataManager => "dm",
        };
        let id = EnvId(format!("{prefix}-{:03}", self.next_env));
        let tick = self.clock();
        let env = Environment {
            id: id.clone(),
            tenant,
            kind,
            phase: Phase::Requested,
            host_job: job.clone(),
            vms: Vec::new(),
            owner_principal: principal.to_owned(),
            size,
            walltime,
            attached_to,
            joined: false,
            applied_config: None,
            history: vec![(tick, Phase::Requested)],
        };
        self.job_env.insert(job, id.clone());
        self.envs.insert(id.clone(), env);
        self.log_admin(principal, format!("launch {kind} environment {id}"));
        self.events.push(PlatformEvent::Phase {
            tick,
            env: id.clone(),
            phase: Phase::Requested,
        });
        Ok(id)
    }

    /// Moves an environment one phase forward once that phase's
    /// precondition holds.
    pub fn advance_phase(&mut self, id: &EnvId) -> Result<Environment> {
        let env = self.environment(id)?.clone();
        let next = match env.phase.next() {
            Some(n) if env.phase != Phase::Destroying => n,
            _ => return Err(invalid(&env, "no further phase").into()),
        };
        match next {
            Phase::Allocated => self.allocate(&env)?,
            Phase::Initializing => {
                if !self.metadata.contains(&cluster_key(id)) {
                    return Err(invalid(&env, "cluster record missing from metadata store").into());
                }
                for vm in &env.vms {
                    self.log_syslog(&vm.id, "cloud-config applied");
                }
            }
            Phase::Configured => self.configure(&env)?,
            Phase::LockedDown => {
                for vm in &env.vms {
                    self.net.lock_down(&vm.id);
                }
            }
            Phase::Running => {
                if env.kind == EnvKind::Work {
                    let nodes = env
                        .vms
                        .iter()
                        .map(|vm| Node::new(vm.id.as_str(), vm.cores, vm.memory_gb))
                        .collect();
                    let sched = Scheduler::with_config(
                        nodes,
                        SchedulerConfig {
                            cap_service_jobs: true,
                            ..self.host.config()
                        },
                        &format!("{id}-job"),
                    )
                    .starting_at(self.clock());
                    self.inner.insert(id.clone(), sched);
                }
            }
            _ => unreachable!("handled above"),
        }
        self.set_phase(id, next);
        Ok(self.envs[id].clone())
    }

    fn allocate(&mut self, env: &Environment) -> Result<()> {
        let job = self
            .host
            .job(&env.host_job)
            .cloned()
            .ok_or_else(|| invalid(env, "host job missing"))?;
        if job.state != JobState::Running {
            return Err(invalid(env, format!("host job {} is {:?}", job.id, job.state)).into());
        }
        let mut vms = Vec::new();
        if env.kind == EnvKind::Compute {
            for (i, node_id) in job.allocated_nodes.iter().enumerate() {
                let node = self.host.node(node_id).expect("allocated node exists");
                vms.push(Vm {
                    id: HostId(format!("{}-vm{i}", env.id)),
                    host_node: node_id.clone(),
                    cores: node.cores,
                    memory_gb: node.memory_gb.min(env.size.memory_gb.max(1)),
                    exclusive: true,
                });
            }
        } else {
            let node = job.allocated_nodes[0].clone();
            for i in 0..env.size.vm_count {
                let id = match (env.kind, i) {
                    (EnvKind::Management, 0) => HostId::from(CONFIG_MASTER),
                    (EnvKind::Management, 1) => HostId::from(SYSLOG_SINK),
                    _ => HostId(format!("{}-vm{i}", env.id)),
                };
                vms.push(Vm {
                    id,
                    host_node: node.clone(),
                    cores: env.size.cores,
                    memory_gb: env.size.memory_gb,
                    exclusive: false,
                });
            }
        }

        for vm in &vms {
            self.attach_vm(env, vm)?;
        }
        let env_mut = self.envs.get_mut(&env.id).expect("exists");
        env_mut.vms = vms;
        Ok(())
    }

    fn attach_vm(&mut self, env: &Environment, vm: &Vm) -> Result<()> {
        if env.kind == EnvKind::Management {
            let role = if vm.id.as_str() == CONFIG_MASTER {
                HostRole::ConfigMaster
            } else if vm.id.as_str() == SYSLOG_SINK {
                HostRole::SyslogSink
            } else {
                // Extra management VMs only talk to the sink.
                HostRole::Vm {
                    tenant: Tenant::Platform,
                    env: env.id.clone(),
                    kind: env.kind,
                }
            };
            let is_service = !matches!(role, HostRole::Vm { .. });
            self.net.add_host(vm.id.clone(), role)?;
            if !is_service {
                self.net
                    .add_to_overlay(&netmodel::overlay_id(&env.id), &Tenant::Platform, &vm.id)?;
            }
            self.log_syslog(&vm.id, "booted");
            return Ok(());
        }

        self.net.add_host(
            vm.id.clone(),
            HostRole::Vm {
                tenant: env.tenant.clone(),
                env: env.id.clone(),
                kind: env.kind,
            },
        )?;
        self.net
            .add_to_overlay(&netmodel::overlay_id(&env.id), &env.tenant, &vm.id)?;
        self.net
            .set_membership(STORAGE_PARTITION, &vm.id, Membership::Limited)?;
        if self.net.hosts.contains_key(&HostId::from(CONFIG_MASTER)) {
            self.net.add_mgmt_edge(&vm.id, &CONFIG_MASTER.into(), true)?;
        }
        if self.net.hosts.contains_key(&HostId::from(SYSLOG_SINK)) {
            self.net.add_mgmt_edge(&vm.id, &SYSLOG_SINK.into(), true)?;
        }
        if let Some(scratch) = self.vm_scratch(env, &vm.id) {
            let grantee = match &env.tenant {
                Tenant::Project(p) => Grantee::Researchers(p.clone()),
                Tenant::Owner(o) => Grantee::DataManagers(o.clone()),
                Tenant::Platform => Grantee::System,
            };
            self.fs.create_dir_all(
                &scratch,
                "system",
                StorageClass::VmEphemeral,
                acl([(grantee, Perms::rwl()), (Grantee::System, Perms::rl())]),
            )?;
        }
        self.log_syslog(&vm.id, "booted");
        Ok(())
    }

    /// VM-local scratch directory, if the tenant has a storage tree.
    pub fn vm_scratch(&self, env: &Environment, vm: &HostId) -> Option<FsPath> {
        match &env.tenant {
            Tenant::Project(p) => Some(layout::vm_scratch(p, vm.as_str())),
            Tenant::Owner(o) => Some(layout::owner_root(o).join("vm").join(vm.as_str())),
            Tenant::Platform => None,
        }
    }

    /// Files currently held on a VM's local disk.
    pub fn ephemeral_data(&self, env: &Environment, vm: &HostId) -> Vec<FsPath> {
        self.vm_scratch(env, vm)
            .map(|root| {
                self.fs
                    .subtree(&root)
                    .filter(|n| {
                        n.storage_class == StorageClass::VmEphemeral
                            && n.kind == crate::securefs::NodeKind::File
                    })
                    .map(|n| n.path.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn configure(&mut self, env: &Environment) -> Result<()> {
        let manifest = if env.kind == EnvKind::Management {
            self.config_manifest.clone()
        } else {
            match self.management_env() {
                Some(m) if m.phase == Phase::Running => {}
                _ => return Err(ProvisionError::NoManagementEnv.into()),
            }
            let master = HostId::from(CONFIG_MASTER);
            for vm in &env.vms {
                if !self.net.reachable(&vm.id, &master, netmodel::Channel::Mgmt)? {
                    return Err(invalid(env, format!("{} cannot reach the config master", vm.id)).into());
                }
            }
            self.config_manifest.clone()
        };
        let e = self.envs.get_mut(&env.id).expect("exists");
        e.applied_config = Some(manifest);
        Ok(())
    }

    fn set_phase(&mut self, id: &EnvId, phase: Phase) {
        let tick = self.clock();
        let env = self.envs.get_mut(id).expect("exists");
        env.phase = phase;
        env.history.push((tick, phase));
        let record = serde_json::to_vec(&env.to_record()).expect("record serializes");
        let owner = env.owner_principal.clone();
        if phase >= Phase::Allocated {
            self.metadata.put(&cluster_key(id), record);
        }
        self.log_admin(&owner, format!("environment {id} -> {phase}"));
        self.events.push(PlatformEvent::Phase {
            tick,
            env: id.clone(),
            phase,
        });
    }

    /// Advances an environment as far as it can go without moving the clock.
    pub fn bring_up(&mut self, id: &EnvId) -> Result<Phase> {
        loop {
            let env = self.environment(id)?;
            if env.phase >= Phase::Running {
                return Ok(env.phase);
            }
            if env.phase == Phase::Requested
                && self.host.job(&env.host_job).map(|j| j.state) != Some(JobState::Running)
            {
                return Ok(Phase::Requested);
            }
            self.advance_phase(id)?;
        }
    }

    /// Launches an environment, lets the host scheduler place it on the next
    /// tick and drives it to `Running`.
    pub fn launch_and_run(
        &mut self,
        tenant: Tenant,
        kind: EnvKind,
        size: Option<EnvSize>,
        walltime: Option<u64>,
        principal: &str,
    ) -> Result<EnvId> {
        let id = self.launch_environment(tenant, kind, size, walltime, principal)?;
        self.tick(1);
        self.bring_up(&id)?;
        Ok(id)
    }

    /// Tears an environment down: cancels its host job, deletes every
    /// VM-local file, removes its hosts from the network. Destroying a work
    /// environment also destroys the compute environments attached to it.
    pub fn destroy_environment(&mut self, id: &EnvId) -> Result<WipeReport> {
        let env = self.environment(id)?.clone();
        if env.kind == EnvKind::Management {
            return Err(ProvisionError::ManagementPermanent.into());
        }
        if !env.is_active() || env.phase == Phase::Destroying {
            return Err(invalid(&env, "already destroyed").into());
        }
        let mut removed = Vec::new();
        if env.kind == EnvKind::Work {
            let attached: Vec<EnvId> = self
                .envs
                .values()
                .filter(|e| e.attached_to.as_ref() == Some(id) && e.is_active())
                .map(|e| e.id.clone())
                .collect();
            for c in attached {
                removed.extend(self.destroy_environment(&c)?.removed);
            }
        }
        self.set_phase(id, Phase::Destroying);

        if let Some(job) = self.host.job(&env.host_job) {
            if !job.state.is_terminal() {
                self.host.cancel_job(&env.host_job).map_err(map_sched)?;
            }
        }
        if env.kind == EnvKind::Work {
            if let Some(mut inner) = self.inner.remove(id) {
                let live: Vec<JobId> = inner
                    .jobs()
                    .filter(|j| !j.state.is_terminal())
                    .map(|j| j.id.clone())
                    .collect();
                for j in live {
                    inner.cancel_job(&j).map_err(map_sched)?;
                }
                self.retired_inner.insert(id.clone(), inner);
            }
        }
        if env.kind == EnvKind::Compute && env.joined {
            if let Some(work) = &env.attached_to {
                if let Some(inner) = self.inner.get_mut(work) {
                    for vm in &env.vms {
                        let evs = inner
                            .remove_node(&NodeId(vm.id.0.clone()))
                            .map_err(map_sched)?;
                        let tick = self.host.clock();
                        for event in evs {
                            self.events.push(PlatformEvent::Inner {
                                tick,
                                env: work.clone(),
                                event,
                            });
                        }
                    }
                }
            }
        }
        for vm in &env.vms {
            if let Some(scratch) = self.vm_scratch(&env, &vm.id) {
                if self.fs.exists(&scratch) {
                    removed.extend(self.fs.remove_ephemeral(&scratch).removed);
                }
            }
            if self.net.hosts.contains_key(&vm.id) {
                self.net.remove_host(&vm.id)?;
            }
        }
        removed.sort();
        self.log_admin(
            &env.owner_principal,
            format!("destroyed {id}; wiped {} ephemeral file(s)", removed.len()),
        );
        self.set_phase(id, Phase::Destroyed);
        Ok(WipeReport { removed })
    }

    /// Attaches a compute environment's VMs to its project's work
    /// environment: network join plus inner-scheduler nodes.
    pub fn join_environments(&mut self, compute_id: &EnvId) -> Result<()> {
        let compute = self.environment(compute_id)?.clone();
        if compute.joined {
            return Err(ProvisionError::AlreadyJoined(compute_id.clone()).into());
        }
        let project = compute
            .project()
            .cloned()
            .ok_or_else(|| ProvisionError::WrongTenant {
                kind: compute.kind,
                tenant: compute.tenant.clone(),
            })?;
        let work = self
            .active_work_env(&project)
            .cloned()
            .ok_or(ProvisionError::NoWorkEnv(project))?;
        self.net = netmodel::join_environments(&self.net, &work, &compute)?;
        let inner = self
            .inner
            .get_mut(&work.id)
            .ok_or_else(|| ProvisionError::EnvNotRunning(work.id.clone()))?;
        for vm in &compute.vms {
            inner
                .add_node(Node::new(vm.id.as_str(), vm.cores, vm.memory_gb))
                .map_err(map_sched)?;
        }
        let c = self.envs.get_mut(compute_id).expect("exists");
        c.joined = true;
        c.attached_to = Some(work.id.clone());
        let owner = c.owner_principal.clone();
        self.log_admin(&owner, format!("joined {compute_id} into {}", work.id));
        Ok(())
    }

    /// Submits a job to a project's inner scheduler.
    pub fn submit_inner_job(&mut self, project: &ProjectId, spec: JobSpec) -> Result<JobId> {
        let work = self
            .active_work_env(project)
            .ok_or_else(|| ProvisionError::NoWorkEnv(project.clone()))?;
        let work_id = work.id.clone();
        let inner = self
            .inner
            .get_mut(&work_id)
            .ok_or(ProvisionError::EnvNotRunning(work_id))?;
        inner.submit_job(spec).map_err(map_sched)
    }

    pub fn cancel_inner_job(&mut self, project: &ProjectId, job: &JobId) -> Result<()> {
        let work = self
            .active_work_env(project)
            .ok_or_else(|| ProvisionError::NoWorkEnv(project.clone()))?;
        let work_id = work.id.clone();
        let inner = self
            .inner
            .get_mut(&work_id)
            .ok_or_else(|| ProvisionError::EnvNotRunning(work_id.clone()))?;
        inner.cancel_job(job).map_err(map_sched)?;
        let event = inner.event_log().last().cloned().expect("cancel logs an event");
        let tick = self.clock();
        self.events.push(PlatformEvent::Inner {
            tick,
            env: work_id,
            event,
        });
        Ok(())
    }

    pub fn inner_scheduler(&self, work: &EnvId) -> Option<&Scheduler> {
        self.inner.get(work)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Channel;
    use crate::platform::PlatformConfig;
    use crate::securefs::Principal;

    fn platform() -> Platform {
        let mut p = Platform::new(PlatformConfig::default()).unwrap();
        p.create_project(&"p1".into(), "system").unwrap();
        p.create_project(&"p2".into(), "system").unwrap();
        p
    }

    fn proj(p: &str) -> Tenant {
        Tenant::Project(p.into())
    }

    #[test]
    fn second_work_env_is_rejected() {
        let mut p = platform();
        p.launch_and_run(proj("p1"), EnvKind::Work, None, None, "system").unwrap();
        let err = p
            .launch_environment(proj("p1"), EnvKind::Work, None, None, "system")
            .unwrap_err();
        assert_eq!(err.kind(), "DuplicateWorkEnv");
    }

    #[test]
    fn compute_needs_running_work_env() {
        let mut p = platform();
        let err = p
            .launch_environment(proj("p1"), EnvKind::Compute, None, None, "system")
            .unwrap_err();
        assert_eq!(err.kind(), "NoWorkEnv");
    }

    #[test]
    fn two_work_envs_share_a_node() {
        let mut p = platform();
        let a = p.launch_and_run(proj("p1"), EnvKind::Work, None, None, "system").unwrap();
        let b = p.launch_and_run(proj("p2"), EnvKind::Work, None, None, "system").unwrap();
        let node = |id: &EnvId| p.envs[id].vms[0].host_node.clone();
        assert_eq!(node(&a), node(&b));
        assert!(p.verify_isolation().is_empty());
        let (va, vb) = (&p.envs[&a].vms[0].id, &p.envs[&b].vms[0].id);
        assert!(!p.net.reachable(va, vb, Channel::OverlayEthernet).unwrap());
    }

    #[test]
    fn lockdown_severs_config_master() {
        let mut p = platform();
        let id = p.launch_environment(proj("p1"), EnvKind::Work, None, None, "system").unwrap();
        p.tick(1);
        for _ in 0..3 {
            p.advance_phase(&id).unwrap();
        }
        assert_eq!(p.envs[&id].phase, Phase::Configured);
        let vm = p.envs[&id].vms[0].id.clone();
        let master = HostId::from(CONFIG_MASTER);
        let sink = HostId::from(SYSLOG_SINK);
        assert!(p.net.reachable(&vm, &master, Channel::Mgmt).unwrap());
        p.advance_phase(&id).unwrap();
        assert_eq!(p.envs[&id].phase, Phase::LockedDown);
        assert!(!p.net.reachable(&vm, &master, Channel::Mgmt).unwrap());
        assert!(p.net.reachable(&vm, &sink, Channel::Mgmt).unwrap());
    }

    #[test]
    fn requested_env_waits_for_host_job() {
        let mut p = platform();
        let id = p.launch_environment(proj("p1"), EnvKind::Work, None, None, "system").unwrap();
        assert_eq!(p.advance_phase(&id).unwrap_err().kind(), "InvalidPhase");
        assert_eq!(p.bring_up(&id).unwrap(), Phase::Requested);
    }

    #[test]
    fn destroyed_env_cannot_advance() {
        let mut p = platform();
        let id = p.launch_and_run(proj("p1"), EnvKind::Work, None, None, "system").unwrap();
        p.destroy_environment(&id).unwrap();
        assert_eq!(p.advance_phase(&id).unwrap_err().kind(), "InvalidPhase");
        assert_eq!(p.destroy_environment(&id).unwrap_err().kind(), "InvalidPhase");
        let mgmt = p.management_env().unwrap().id.clone();
        assert_eq!(p.destroy_environment(&mgmt).unwrap_err().kind(), "ManagementPermanent");
    }

    #[test]
    fn destroy_removes_only_ephemeral_files() {
        let mut p = platform();
        let id = p.launch_and_run(proj("p1"), EnvKind::Work, None, None, "system").unwrap();
        let alice = Principal::researcher("p1", "alice");
        let env = p.envs[&id].clone();
        let scratch = p.vm_scratch(&env, &env.vms[0].id).unwrap();
        for i in 0..3 {
            p.write_file(&alice, &scratch.join(&format!("tmp{i}")), vec![i]).unwrap();
        }
        let data = layout::project_data(&"p1".into());
        for i in 0..2 {
            p.write_file(&alice, &data.join(&format!("keep{i}")), vec![i]).unwrap();
        }
        let before = p.fs.snapshot();
        let report = p.destroy_environment(&id).unwrap();
        let after = p.fs.snapshot();
        let gone: Vec<FsPath> = before.keys().filter(|k| !after.contains_key(*k)).cloned().collect();
        assert_eq!(report.removed.len(), 3);
        assert!(gone.iter().all(|g| g.is_within(&scratch)));
        assert_eq!(gone.iter().filter(|g| before[*g].0 == StorageClass::VmEphemeral).count(), gone.len());
        assert!(report.removed.iter().all(|r| gone.contains(r)));
        assert!(p.fs.exists(&data.join("keep0")) && p.fs.exists(&data.join("keep1")));
        assert!(p.ephemeral_data(&env, &env.vms[0].id).is_empty());
    }

    #[test]
    fn metadata_record_versions() {
        let mut p = platform();
        let id = p.launch_environment(proj("p1"), EnvKind::Work, None, None, "system").unwrap();
        assert_eq!(p.read_metadata(&cluster_key(&id)).unwrap_err().kind(), "KeyNotFound");
        p.tick(1);
        p.advance_phase(&id).unwrap();
        let (bytes, v) = p.read_metadata(&cluster_key(&id)).unwrap();
        assert_eq!(v, 1);
        let rec: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(rec["phase"], "allocated");
        p.advance_phase(&id).unwrap();
        assert_eq!(p.read_metadata(&cluster_key(&id)).unwrap().1, 2);
        let (_, pv) = p.read_metadata(&project_key(&"p1".into())).unwrap();
        assert_eq!(pv, 1);
    }

    #[test]
    fn inner_jobs_need_running_work_env() {
        let mut p = platform();
        let id = p.launch_environment(proj("p1"), EnvKind::Work, None, None, "system").unwrap();
        p.tick(1);
        p.advance_phase(&id).unwrap();
        let err = p.submit_inner_job(&"p1".into(), JobSpec::batch(1, 1, 2)).unwrap_err();
        assert_eq!(err.kind(), "EnvNotRunning");
        p.bring_up(&id).unwrap();
        p.submit_inner_job(&"p1".into(), JobSpec::batch(1, 1, 2)).unwrap();
    }

    #[test]
    fn compute_join_and_cascade_destroy() {
        let mut p = platform();
        let work = p.launch_and_run(proj("p1"), EnvKind::Work, None, None, "system").unwrap();
        let compute = p
            .launch_and_run(proj("p1"), EnvKind::Compute, None, Some(10), "system")
            .unwrap();
        p.join_environments(&compute).unwrap();
        assert_eq!(p.join_environments(&compute).unwrap_err().kind(), "AlreadyJoined");
        assert!(p.verify_isolation().is_empty());
        let inner = p.inner_scheduler(&work).unwrap();
        assert_eq!(inner.nodes().len(), 2);
        let job = p
            .submit_inner_job(&"p1".into(), JobSpec::batch(1, 32, 5))
            .unwrap();
        p.tick(1);
        assert_eq!(p.inner_scheduler(&work).unwrap().job(&job).unwrap().state, JobState::Running);
        p.destroy_environment(&work).unwrap();
        assert_eq!(p.envs[&compute].phase, Phase::Destroyed);
        assert!(p.verify_isolation().is_empty());
    }

    #[test]
    fn compute_env_expires_at_walltime() {
        let mut p = platform();
        p.launch_and_run(proj("p1"), EnvKind::Work, None, None, "system").unwrap();
        let compute = p
            .launch_and_run(proj("p1"), EnvKind::Compute, None, Some(3), "system")
            .unwrap();
        p.tick(3);
        assert_eq!(p.envs[&compute].phase, Phase::Destroyed);
    }

    #[test]
    fn dm_env_is_owner_tenant() {
        let mut p = platform();
        let err = p
            .launch_environment(Tenant::Owner("cbs".into()), EnvKind::DataManager, None, None, "system")
            .unwrap_err();
        assert_eq!(err.kind(), "UnknownOwner");
        p.create_owner(&"cbs".into(), "system").unwrap();
        p.launch_and_run(Tenant::Owner("cbs".into()), EnvKind::DataManager, None, None, "system")
            .unwrap();
        let err = p
            .launch_environment(proj("p1"), EnvKind::DataManager, None, None, "system")
            .unwrap_err();
        assert_eq!(err.kind(), "WrongTenant");
        assert!(p.verify_isolation().is_empty());
    }
}
