//! Network isolation model and reachability oracle.
//!
//! Five channels exist and reachability is evaluated per channel with no
//! routing between them:
//!
//! | channel            | rule                                                        |
//! |--------------------|-------------------------------------------------------------|
//! | `OverlayEthernet`  | both hosts in the same overlay                              |
//! | `IbCompute`        | both Full members of the same project compute partition     |
//! | `IbStorage`        | both members of the same storage partition, one of them Full|
//! | `Vpn`              | the pair is an enrolled VPN edge                            |
//! | `Mgmt`             | an enabled management edge joins the pair                   |
//!
//! All rules are symmetric. [`verify_isolation`] enumerates every host pair on
//! every channel and reports reachable pairs that are not on the allow-list,
//! plus structural breaches of the membership invariants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{EnvId, EnvKind, HostId, Phase, Tenant};
use crate::provisioner::Environment;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("host {0} already exists")]
    DuplicateHost(HostId),
    #[error("unknown overlay {0}")]
    UnknownOverlay(String),
    #[error("unknown partition {0}")]
    UnknownPartition(String),
    #[error("VPN edges must terminate at a work-environment host, not {0}")]
    VpnEndpointNotWork(HostId),
    #[error("{0} is not a remote site")]
    NotRemoteSite(HostId),
    #[error("environments belong to different tenants")]
    ProjectMismatch,
    #[error("work environment {0} is not running")]
    WorkNotRunning(EnvId),
    #[error("compute environment {0} has not reached lockdown")]
    ComputeNotLockedDown(EnvId),
    #[error("environment {0} has the wrong kind for this operation")]
    WrongKind(EnvId),
    #[error("work environment {0} has no overlay")]
    NoOverlay(EnvId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "overlay")]
    OverlayEthernet,
    #[serde(rename = "ib-compute")]
    IbCompute,
    #[serde(rename = "ib-storage")]
    IbStorage,
    #[serde(rename = "vpn")]
    Vpn,
    #[serde(rename = "mgmt")]
    Mgmt,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::OverlayEthernet,
        Channel::IbCompute,
        Channel::IbStorage,
        Channel::Vpn,
        Channel::Mgmt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::OverlayEthernet => "overlay",
            Channel::IbCompute => "ib-compute",
            Channel::IbStorage => "ib-storage",
            Channel::Vpn => "vpn",
            Channel::Mgmt => "mgmt",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "overlay" | "ethernet" | "overlay-ethernet" => Ok(Channel::OverlayEthernet),
            "ib-compute" | "ibcompute" => Ok(Channel::IbCompute),
            "ib-storage" | "ibstorage" => Ok(Channel::IbStorage),
            "vpn" => Ok(Channel::Vpn),
            "mgmt" | "management" => Ok(Channel::Mgmt),
            _ => Err(format!("unknown channel `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostRole {
    Vm {
        tenant: Tenant,
        env: EnvId,
        kind: EnvKind,
    },
    Fileserver,
    ConfigMaster,
    SyslogSink,
    RemoteSite,
}

impl HostRole {
    pub fn tenant(&self) -> Option<&Tenant> {
        match self {
            HostRole::Vm { tenant, .. } => Some(tenant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlay {
    pub tenant: Tenant,
    pub members: BTreeSet<HostId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    ProjectCompute,
    Storage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Full,
    Limited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IbPartition {
    pub kind: PartitionKind,
    /// Owning tenant of a compute partition; `None` for storage.
    pub tenant: Option<Tenant>,
    pub members: BTreeMap<HostId, Membership>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetState {
    pub hosts: BTreeMap<HostId, HostRole>,
    pub overlays: BTreeMap<String, Overlay>,
    pub ib_partitions: BTreeMap<String, IbPartition>,
    /// `(remote_site, work_host)` pairs.
    pub vpn_edges: BTreeSet<(HostId, HostId)>,
    /// host → management target → enabled.
    pub mgmt_edges: BTreeMap<HostId, BTreeMap<HostId, bool>>,
}

pub const STORAGE_PARTITION: &str = "ib-storage";

pub fn compute_partition_id(tenant: &Tenant) -> String {
    match tenant {
        Tenant::Project(p) => format!("ibc-{p}"),
        Tenant::Owner(o) => format!("ibc-owner-{o}"),
        Tenant::Platform => "ibc-platform".into(),
    }
}

pub fn overlay_id(env: &EnvId) -> String {
    format!("ov-{env}")
}

impl NetState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn role(&self, h: &HostId) -> Result<&HostRole, NetError> {
        self.hosts
            .get(h)
            .ok_or_else(|| NetError::UnknownHost(h.clone()))
    }

    pub fn hosts_with_role(&self, pred: impl Fn(&HostRole) -> bool) -> Vec<HostId> {
        self.hosts
            .iter()
            .filter(|(_, r)| pred(r))
            .map(|(h, _)| h.clone())
            .collect()
    }

    pub fn add_host(&mut self, id: HostId, role: HostRole) -> Result<(), NetError> {
        if self.hosts.contains_key(&id) {
            return Err(NetError::DuplicateHost(id));
        }
        self.hosts.insert(id, role);
        Ok(())
    }

    /// Removes a host and every membership or edge that mentions it. Empty
    /// overlays are dropped.
    pub fn remove_host(&mut self, id: &HostId) -> Result<(), NetError> {
        self.hosts
            .remove(id)
            .ok_or_else(|| NetError::UnknownHost(id.clone()))?;
        for ov in self.overlays.values_mut() {
            ov.members.remove(id);
        }
        self.overlays.retain(|_, ov| !ov.members.is_empty());
        for part in self.ib_partitions.values_mut() {
            part.members.remove(id);
        }
        self.vpn_edges.retain(|(a, b)| a != id && b != id);
        self.mgmt_edges.remove(id);
        for targets in self.mgmt_edges.values_mut() {
            targets.remove(id);
        }
        Ok(())
    }

    pub fn add_to_overlay(&mut self, overlay: &str, tenant: &Tenant, host: &HostId) -> Result<(), NetError> {
        self.role(host)?;
        self.overlays
            .entry(overlay.to_owned())
            .or_insert_with(|| Overlay {
                tenant: tenant.clone(),
                members: BTreeSet::new(),
            })
            .members
            .insert(host.clone());
        Ok(())
    }

    pub fn ensure_partition(&mut self, id: &str, kind: PartitionKind, tenant: Option<Tenant>) {
        self.ib_partitions
            .entry(id.to_owned())
            .or_insert_with(|| IbPartition {
                kind,
                tenant,
                members: BTreeMap::new(),
            });
    }

    pub fn set_membership(&mut self, partition: &str, host: &HostId, m: Membership) -> Result<(), NetError> {
        self.role(host)?;
        let part = self
            .ib_partitions
            .get_mut(partition)
            .ok_or_else(|| NetError::UnknownPartition(partition.to_owned()))?;
        part.members.insert(host.clone(), m);
        Ok(())
    }

    pub fn enroll_vpn(&mut self, site: &HostId, work_host: &HostId) -> Result<(), NetError> {
        if self.role(site)? != &HostRole::RemoteSite {
            return Err(NetError::NotRemoteSite(site.clone()));
        }
        match self.role(work_host)? {
            HostRole::Vm {
                kind: EnvKind::Work,
                ..
            } => {}
            _ => return Err(NetError::VpnEndpointNotWork(work_host.clone())),
        }
        self.vpn_edges.insert((site.clone(), work_host.clone()));
        Ok(())
    }

    pub fn add_mgmt_edge(&mut self, host: &HostId, target: &HostId, enabled: bool) -> Result<(), NetError> {
        self.role(host)?;
        self.role(target)?;
        self.mgmt_edges
            .entry(host.clone())
            .or_default()
            .insert(target.clone(), enabled);
        Ok(())
    }

    /// Firewall lockdown: severs every management edge from `host` to a
    /// configuration master. Log-routing edges stay up.
    pub fn lock_down(&mut self, host: &HostId) {
        let masters: BTreeSet<HostId> = self
            .hosts_with_role(|r| *r == HostRole::ConfigMaster)
            .into_iter()
            .collect();
        if let Some(targets) = self.mgmt_edges.get_mut(host) {
            for (t, enabled) in targets.iter_mut() {
                if masters.contains(t) {
                    *enabled = false;
                }
            }
        }
    }

    fn mgmt_enabled(&self, a: &HostId, b: &HostId) -> bool {
        let edge = |x: &HostId, y: &HostId| {
            self.mgmt_edges
                .get(x)
                .and_then(|t| t.get(y))
                .copied()
                .unwrap_or(false)
        };
        edge(a, b) || edge(b, a)
    }

    /// The reachability oracle.
    pub fn reachable(&self, src: &HostId, dst: &HostId, ch: Channel) -> Result<bool, NetError> {
        self.role(src)?;
        self.role(dst)?;
        Ok(match ch {
            Channel::OverlayEthernet => self
                .overlays
                .values()
                .any(|ov| ov.members.contains(src) && ov.members.contains(dst)),
            Channel::IbCompute => self.ib_partitions.values().any(|p| {
                p.kind == PartitionKind::ProjectCompute
                    && p.members.get(src) == Some(&Membership::Full)
                    && p.members.get(dst) == Some(&Membership::Full)
            }),
            Channel::IbStorage => self.ib_partitions.values().any(|p| {
                p.kind == PartitionKind::Storage
                    && match (p.members.get(src), p.members.get(dst)) {
                        (Some(a), Some(b)) => *a == Membership::Full || *b == Membership::Full,
                        _ => false,
                    }
            }),
            Channel::Vpn => {
                self.vpn_edges.contains(&(src.clone(), dst.clone()))
                    || self.vpn_edges.contains(&(dst.clone(), src.clone()))
            }
            Channel::Mgmt => self.mgmt_enabled(src, dst),
        })
    }

    /// Every reachable unordered pair `(a, b, channel)` with `a < b` among
    /// the hosts accepted by `keep`, found by querying the oracle for all
    /// pairs.
    pub fn reachability_relation(&self, keep: impl Fn(&HostId) -> bool) -> BTreeSet<(HostId, HostId, Channel)> {
        let hosts: Vec<&HostId> = self.hosts.keys().filter(|h| keep(h)).collect();
        let mut out = BTreeSet::new();
        for (i, a) in hosts.iter().enumerate() {
            for b in &hosts[i + 1..] {
                for ch in Channel::ALL {
                    if self.reachable(a, b, ch).expect("hosts come from the state") {
                        out.insert(((*a).clone(), (*b).clone(), ch));
                    }
                }
            }
        }
        out
    }
}

/// Per-host membership lookup tables; answers the same questions as
/// [`NetState::reachable`] without scanning every overlay and partition.
struct ReachIndex<'a> {
    overlays: BTreeMap<&'a HostId, Vec<&'a str>>,
    compute_full: BTreeMap<&'a HostId, Vec<&'a str>>,
    storage: BTreeMap<&'a HostId, Vec<(&'a str, Membership)>>,
}

impl<'a> ReachIndex<'a> {
    fn build(net: &'a NetState) -> Self {
        let mut overlays: BTreeMap<&HostId, Vec<&str>> = BTreeMap::new();
        for (id, ov) in &net.overlays {
            for m in &ov.members {
                overlays.entry(m).or_default().push(id);
            }
        }
        let mut compute_full: BTreeMap<&HostId, Vec<&str>> = BTreeMap::new();
        let mut storage: BTreeMap<&HostId, Vec<(&str, Membership)>> = BTreeMap::new();
        for (id, p) in &net.ib_partitions {
            for (h, m) in &p.members {
                match p.kind {
                    PartitionKind::ProjectCompute if *m == Membership::Full => {
                        compute_full.entry(h).or_default().push(id)
                    }
                    PartitionKind::ProjectCompute => {}
                    PartitionKind::Storage => storage.entry(h).or_default().push((id, *m)),
                }
            }
        }
        Self {
            overlays,
            compute_full,
            storage,
        }
    }

    fn reachable(&self, net: &NetState, a: &HostId, b: &HostId, ch: Channel) -> bool {
        fn share(x: Option<&Vec<&str>>, y: Option<&Vec<&str>>) -> bool {
            match (x, y) {
                (Some(x), Some(y)) => x.iter().any(|i| y.contains(i)),
                _ => false,
            }
        }
        match ch {
            Channel::OverlayEthernet => share(self.overlays.get(a), self.overlays.get(b)),
            Channel::IbCompute => share(self.compute_full.get(a), self.compute_full.get(b)),
            Channel::IbStorage => match (self.storage.get(a), self.storage.get(b)) {
                (Some(x), Some(y)) => x.iter().any(|(pa, ma)| {
                    y.iter().any(|(pb, mb)| {
                        pa == pb && (*ma == Membership::Full || *mb == Membership::Full)
                    })
                }),
                _ => false,
            },
            Channel::Vpn => {
                net.vpn_edges.contains(&(a.clone(), b.clone()))
                    || net.vpn_edges.contains(&(b.clone(), a.clone()))
            }
            Channel::Mgmt => net.mgmt_enabled(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReachRule {
    CrossTenantOverlay,
    OverlayNonTenantHost,
    CrossTenantIbCompute,
    IbComputeNonTenantHost,
    StorageBypassesFileserver,
    MgmtAfterLockdown,
    MgmtNotAllowed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Breach {
    StoragePartitionNoFullMember,
    StoragePartitionExtraFullMember,
    ComputePartitionMixedTenants,
    ComputePartitionLimitedMember,
    ComputePartitionNonVmMember,
    VmNotInExactlyOneOverlay,
    OverlayForeignMember,
    VpnEndpointNotWork,
    DanglingHostReference,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    /// A reachable pair that the allow-list does not admit.
    Unallowed {
        src: HostId,
        dst: HostId,
        channel: Channel,
        rule: ReachRule,
    },
    InvariantBreach { subject: String, breach: Breach },
}

#[derive(Serialize, Deserialize)]
struct ViolationLine {
    src: String,
    dst: Option<String>,
    channel: Option<Channel>,
    rule: String,
}

impl Violation {
    pub fn names_pair(&self, a: &HostId, b: &HostId) -> bool {
        matches!(self, Violation::Unallowed { src, dst, .. }
            if (src == a && dst == b) || (src == b && dst == a))
    }

    pub fn to_json_line(&self) -> String {
        let line = match self {
            Violation::Unallowed {
                src,
                dst,
                channel,
                rule,
            } => ViolationLine {
                src: src.to_string(),
                dst: Some(dst.to_string()),
                channel: Some(*channel),
                rule: serde_json::to_value(rule)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default(),
            },
            Violation::InvariantBreach { subject, breach } => ViolationLine {
                src: subject.clone(),
                dst: None,
                channel: None,
                rule: format!("InvariantBreach({breach:?})"),
            },
        };
        serde_json::to_string(&line).expect("violation serializes")
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Unallowed {
                src,
                dst,
                channel,
                rule,
            } => write!(f, "{src} <-> {dst} over {channel}: {rule:?}"),
            Violation::InvariantBreach { subject, breach } => {
                write!(f, "{subject}: InvariantBreach({breach:?})")
            }
        }
    }
}

/// Whether a reachable pair is admitted, and if not, which rule it breaks.
fn allow(
    net: &NetState,
    phases: &BTreeMap<EnvId, Phase>,
    a: &HostId,
    b: &HostId,
    ch: Channel,
) -> Result<(), ReachRule> {
    let ra = &net.hosts[a];
    let rb = &net.hosts[b];
    let same_tenant_vms = || match (ra, rb) {
        (HostRole::Vm { tenant: ta, .. }, HostRole::Vm { tenant: tb, .. }) => Some(ta == tb),
        _ => None,
    };
    match ch {
        Channel::OverlayEthernet => match same_tenant_vms() {
            Some(true) => Ok(()),
            Some(false) => Err(ReachRule::CrossTenantOverlay),
            None => Err(ReachRule::OverlayNonTenantHost),
        },
        Channel::IbCompute => match same_tenant_vms() {
            Some(true) => Ok(()),
            Some(false) => Err(ReachRule::CrossTenantIbCompute),
            None => Err(ReachRule::IbComputeNonTenantHost),
        },
        Channel::IbStorage => {
            if *ra == HostRole::Fileserver || *rb == HostRole::Fileserver {
                Ok(())
            } else {
                Err(ReachRule::StorageBypassesFileserver)
            }
        }
        // Reachable over VPN means enrolled; endpoint shape is a breach check.
        Channel::Vpn => Ok(()),
        Channel::Mgmt => {
            if *ra == HostRole::SyslogSink || *rb == HostRole::SyslogSink {
                return Ok(());
            }
            let vm_env = match (ra, rb) {
                (HostRole::Vm { env, .. }, HostRole::ConfigMaster)
                | (HostRole::ConfigMaster, HostRole::Vm { env, .. }) => env,
                _ => return Err(ReachRule::MgmtNotAllowed),
            };
            match phases.get(vm_env) {
                Some(p) if p.pre_lockdown() => Ok(()),
                _ => Err(ReachRule::MgmtAfterLockdown),
            }
        }
    }
}

fn membership_breaches(net: &NetState) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |subject: String, breach| out.push(Violation::InvariantBreach { subject, breach });

    let mut overlay_count: BTreeMap<&HostId, usize> = BTreeMap::new();
    for (id, ov) in &net.overlays {
        for m in &ov.members {
            *overlay_count.entry(m).or_default() += 1;
            match net.hosts.get(m) {
                None => push(format!("{id}:{m}"), Breach::DanglingHostReference),
                Some(r) if r.tenant() != Some(&ov.tenant) => {
                    push(format!("{id}:{m}"), Breach::OverlayForeignMember)
                }
                _ => {}
            }
        }
    }
    for (h, role) in &net.hosts {
        if matches!(role, HostRole::Vm { .. }) && overlay_count.get(h).copied().unwrap_or(0) != 1 {
            push(h.to_string(), Breach::VmNotInExactlyOneOverlay);
        }
    }
    for (id, p) in &net.ib_partitions {
        if p.members.keys().any(|h| !net.hosts.contains_key(h)) {
            push(id.clone(), Breach::DanglingHostReference);
        }
        match p.kind {
            PartitionKind::Storage => {
                let full: Vec<&HostId> = p
                    .members
                    .iter()
                    .filter(|(_, m)| **m == Membership::Full)
                    .map(|(h, _)| h)
                    .collect();
                let fileserver_full = full
                    .iter()
                    .any(|h| net.hosts.get(*h) == Some(&HostRole::Fileserver));
                if !fileserver_full {
                    push(id.clone(), Breach::StoragePartitionNoFullMember);
                }
                if full.len() > 1 || (!fileserver_full && !full.is_empty()) {
                    push(id.clone(), Breach::StoragePartitionExtraFullMember);
                }
            }
            PartitionKind::ProjectCompute => {
                if p.members.values().any(|m| *m != Membership::Full) {
                    push(id.clone(), Breach::ComputePartitionLimitedMember);
                }
                let tenants: BTreeSet<Option<&Tenant>> = p
                    .members
                    .keys()
                    .filter_map(|h| net.hosts.get(h))
                    .map(|r| r.tenant())
                    .collect();
                if tenants.contains(&None) {
                    push(id.clone(), Breach::ComputePartitionNonVmMember);
                }
                if tenants.iter().flatten().any(|t| Some(*t) != p.tenant.as_ref()) {
                    push(id.clone(), Breach::ComputePartitionMixedTenants);
                }
            }
        }
    }
    for (site, host) in &net.vpn_edges {
        let ok = net.hosts.get(site) == Some(&HostRole::RemoteSite)
            && matches!(
                net.hosts.get(host),
                Some(HostRole::Vm {
                    kind: EnvKind::Work,
                    ..
                })
            );
        if !ok {
            push(format!("{site}->{host}"), Breach::VpnEndpointNotWork);
        }
    }
    out
}

/// Checks every unordered host pair on every channel against the allow-list
/// and scans partition/overlay membership for structural breaches. An empty
/// result means the state is well formed. Unreachability is never a
/// violation.
pub fn verify_isolation(net: &NetState, phases: &BTreeMap<EnvId, Phase>) -> Vec<Violation> {
    let index = ReachIndex::build(net);
    let hosts: Vec<&HostId> = net.hosts.keys().collect();
    let mut out = Vec::new();
    for (i, a) in hosts.iter().enumerate() {
        for b in &hosts[i + 1..] {
            for ch in Channel::ALL {
                if index.reachable(net, a, b, ch) {
                    if let Err(rule) = allow(net, phases, a, b, ch) {
                        out.push(Violation::Unallowed {
                            src: (*a).clone(),
                            dst: (*b).clone(),
                            channel: ch,
                            rule,
                        });
                    }
                }
            }
        }
    }
    out.extend(membership_breaches(net));
    out
}

/// Merges a compute environment into its project's work environment network:
/// compute VMs move into the work overlay and become Full members of the
/// project compute partition. Returns the new state; `net` is untouched.
pub fn join_environments(
    net: &NetState,
    work: &Environment,
    compute: &Environment,
) -> Result<NetState, NetError> {
    if work.kind != EnvKind::Work {
        return Err(NetError::WrongKind(work.id.clone()));
    }
    if compute.kind != EnvKind::Compute {
        return Err(NetError::WrongKind(compute.id.clone()));
    }
    if work.tenant != compute.tenant {
        return Err(NetError::ProjectMismatch);
    }
    if work.phase != Phase::Running {
        return Err(NetError::WorkNotRunning(work.id.clone()));
    }
    if compute.phase < Phase::LockedDown || !compute.phase.is_active() || compute.phase == Phase::Destroying {
        return Err(NetError::ComputeNotLockedDown(compute.id.clone()));
    }
    let work_overlay = overlay_id(&work.id);
    if !net.overlays.contains_key(&work_overlay) {
        return Err(NetError::NoOverlay(work.id.clone()));
    }
    let mut next = net.clone();
    let partition = compute_partition_id(&work.tenant);
    next.ensure_partition(&partition, PartitionKind::ProjectCompute, Some(work.tenant.clone()));
    for vm in &compute.vms {
        next.role(&vm.id)?;
        for ov in next.overlays.values_mut() {
            ov.members.remove(&vm.id);
        }
        next.overlays
            .get_mut(&work_overlay)
            .expect("checked above")
            .members
            .insert(vm.id.clone());
        next.set_membership(&partition, &vm.id, Membership::Full)?;
    }
    next.overlays.retain(|_, ov| !ov.members.is_empty());
    Ok(next)
}
