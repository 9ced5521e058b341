//! ACL-controlled storage tree with filesystem-level access logging.
//!
//! Nodes are either persistent (shared parallel filesystem) or VM-ephemeral
//! (local to one virtual machine, cleared when its environment is destroyed).
//! Permissions are a flat ACL per node: access is granted only by an entry on
//! the node itself, never by an ancestor.
//!
//! Every call to [`SecureFs::fs_access`], granted or not, appends one
//! `data_access` record to the filesystem log. That log belongs to the
//! filesystem, so it keeps recording regardless of which environments exist.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditChain, Category, Sink};
use crate::ids::{OwnerId, ProjectId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FsError {
    #[error("permission denied: {principal} cannot {op} {path}")]
    PermissionDenied {
        principal: String,
        op: &'static str,
        path: FsPath,
    },
    #[error("{0}: no such file or directory")]
    NotFound(FsPath),
    #[error("{0} already exists")]
    AlreadyExists(FsPath),
    #[error("{0} is a directory")]
    IsADirectory(FsPath),
    #[error("{0} is not a directory")]
    NotADirectory(FsPath),
    #[error("invalid path `{0}`")]
    InvalidPath(String),
    #[error("invalid principal `{0}`")]
    InvalidPrincipal(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

/// Absolute, normalized path (`/a/b/c`, no trailing slash except the root).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FsPath(String);

impl FsPath {
    pub fn root() -> Self {
        FsPath("/".into())
    }

    pub fn parse(s: &str) -> Result<Self, FsError> {
        if !s.starts_with('/') {
            return Err(FsError::InvalidPath(s.into()));
        }
        let parts: Vec<&str> = s.split('/').filter(|p| !p.is_empty()).collect();
        if parts.iter().any(|p| *p == "." || *p == "..") {
            return Err(FsError::InvalidPath(s.into()));
        }
        Ok(FsPath(format!("/{}", parts.join("/"))))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0 == "/"
    }

    pub fn parent(&self) -> Option<FsPath> {
        if self.is_root() {
            return None;
        }
        let idx = self.0.rfind('/').expect("absolute path");
        Some(if idx == 0 {
            FsPath::root()
        } else {
            FsPath(self.0[..idx].to_owned())
        })
    }

    pub fn file_name(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or("")
    }

    pub fn join(&self, name: &str) -> FsPath {
        let name = name.trim_matches('/');
        if self.is_root() {
            FsPath(format!("/{name}"))
        } else {
            FsPath(format!("{}/{name}", self.0))
        }
    }

    /// True if `self` equals `ancestor` or lies below it.
    pub fn is_within(&self, ancestor: &FsPath) -> bool {
        ancestor.is_root()
            || self.0 == ancestor.0
            || (self.0.starts_with(&ancestor.0) && self.0.as_bytes()[ancestor.0.len()] == b'/')
    }
}

impl fmt::Display for FsPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for FsPath {
    type Error = FsError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        FsPath::parse(&s)
    }
}

impl From<FsPath> for String {
    fn from(p: FsPath) -> Self {
        p.0
    }
}

impl FromStr for FsPath {
    type Err = FsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FsPath::parse(s)
    }
}

/// Canonical locations in the platform tree.
pub mod layout {
    use super::FsPath;
    use crate::ids::{OwnerId, ProjectId};

    pub fn project_root(p: &ProjectId) -> FsPath {
        FsPath(format!("/projects/{p}"))
    }
    pub fn project_data(p: &ProjectId) -> FsPath {
        project_root(p).join("data")
    }
    pub fn project_staging(p: &ProjectId) -> FsPath {
        project_root(p).join("staging")
    }
    /// Where trusted-third-party outputs land.
    pub fn project_linked(p: &ProjectId) -> FsPath {
        project_root(p).join("linked")
    }
    pub fn project_vms(p: &ProjectId) -> FsPath {
        project_root(p).join("vm")
    }
    pub fn vm_scratch(p: &ProjectId, vm: &str) -> FsPath {
        project_vms(p).join(vm)
    }
    pub fn owner_root(o: &OwnerId) -> FsPath {
        FsPath(format!("/owners/{o}"))
    }
    pub fn owner_staging(o: &OwnerId) -> FsPath {
        owner_root(o).join("staging")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipalClass {
    Researcher(ProjectId),
    DataManager(OwnerId),
    Ttp,
    System,
}

/// An acting identity. String form: `researcher:<project>:<name>`,
/// `dm:<owner>:<name>`, `ttp[:<name>]` or `system`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Principal {
    pub id: String,
    pub cls: PrincipalClass,
}

impl Principal {
    pub fn researcher(project: impl Into<ProjectId>, name: &str) -> Self {
        let p = project.into();
        Self {
            id: format!("researcher:{p}:{name}"),
            cls: PrincipalClass::Researcher(p),
        }
    }

    pub fn data_manager(owner: impl Into<OwnerId>, name: &str) -> Self {
        let o = owner.into();
        Self {
            id: format!("dm:{o}:{name}"),
            cls: PrincipalClass::DataManager(o),
        }
    }

    pub fn ttp() -> Self {
        Self {
            id: "ttp".into(),
            cls: PrincipalClass::Ttp,
        }
    }

    pub fn system() -> Self {
        Self {
            id: "system".into(),
            cls: PrincipalClass::System,
        }
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

impl FromStr for Principal {
    type Err = FsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FsError::InvalidPrincipal(s.into());
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["researcher", p, n] if !p.is_empty() && !n.is_empty() => {
                Ok(Principal::researcher(*p, n))
            }
            ["dm", o, n] if !o.is_empty() && !n.is_empty() => Ok(Principal::data_manager(*o, n)),
            ["ttp"] => Ok(Principal::ttp()),
            ["ttp", n] if !n.is_empty() => Ok(Principal {
                id: s.into(),
                cls: PrincipalClass::Ttp,
            }),
            ["system"] => Ok(Principal::system()),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Principal {
    type Error = FsError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Principal> for String {
    fn from(p: Principal) -> Self {
        p.id
    }
}

/// ACL subject. One entry covers every principal of the matching class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Grantee {
    Researchers(ProjectId),
    DataManagers(OwnerId),
    Ttp,
    System,
}

impl Grantee {
    pub fn covers(&self, cls: &PrincipalClass) -> bool {
        match (self, cls) {
            (Grantee::Researchers(a), PrincipalClass::Researcher(b)) => a == b,
            (Grantee::DataManagers(a), PrincipalClass::DataManager(b)) => a == b,
            (Grantee::Ttp, PrincipalClass::Ttp) | (Grantee::System, PrincipalClass::System) => {
                true
            }
            _ => false,
        }
    }
}

impl fmt::Display for Grantee {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grantee::Researchers(p) => write!(f, "researchers:{p}"),
            Grantee::DataManagers(o) => write!(f, "dm:{o}"),
            Grantee::Ttp => f.write_str("ttp"),
            Grantee::System => f.write_str("system"),
        }
    }
}

impl FromStr for Grantee {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("researchers", p)) if !p.is_empty() => Ok(Grantee::Researchers(p.into())),
            Some(("dm", o)) if !o.is_empty() => Ok(Grantee::DataManagers(o.into())),
            None if s == "ttp" => Ok(Grantee::Ttp),
            None if s == "system" => Ok(Grantee::System),
            _ => Err(format!("unknown grantee `{s}`")),
        }
    }
}

impl TryFrom<String> for Grantee {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Grantee> for String {
    fn from(g: Grantee) -> Self {
        g.to_string()
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
    pub struct Perms: u8 {
        const READ = 0b001;
        const WRITE = 0b010;
        const LIST = 0b100;
    }
}

impl Perms {
    pub fn rwl() -> Self {
        Perms::all()
    }

    pub fn rl() -> Self {
        Perms::READ | Perms::LIST
    }

    pub fn code(self) -> String {
        let mut s = String::new();
        for (flag, c) in [(Perms::READ, 'r'), (Perms::WRITE, 'w'), (Perms::LIST, 'l')] {
            if self.contains(flag) {
                s.push(c);
            }
        }
        s
    }

    pub fn from_code(code: &str) -> Result<Self, String> {
        code.chars().try_fold(Perms::empty(), |acc, c| match c {
            'r' => Ok(acc | Perms::READ),
            'w' => Ok(acc | Perms::WRITE),
            'l' => Ok(acc | Perms::LIST),
            _ => Err(format!("bad permission letter `{c}`")),
        })
    }
}

pub type Acl = BTreeMap<Grantee, Perms>;

/// Builds an ACL from `(grantee, perms)` pairs.
pub fn acl<I: IntoIterator<Item = (Grantee, Perms)>>(entries: I) -> Acl {
    entries.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageClass {
    LustrePersistent,
    VmEphemeral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Dir,
    File,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsNode {
    pub path: FsPath,
    pub owner: String,
    pub kind: NodeKind,
    pub perms: Acl,
    pub storage_class: StorageClass,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub content: Vec<u8>,
}

impl FsNode {
    pub fn allows(&self, principal: &Principal, want: Perms) -> bool {
        self.perms
            .iter()
            .filter(|(g, _)| g.covers(&principal.cls))
            .fold(Perms::empty(), |acc, (_, p)| acc | *p)
            .contains(want)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccessOp {
    Read,
    Write(Vec<u8>),
    List,
}

impl AccessOp {
    fn name(&self) -> &'static str {
        match self {
            AccessOp::Read => "read",
            AccessOp::Write(_) => "write",
            AccessOp::List => "list",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccessOutcome {
    Content(Vec<u8>),
    Written,
    Listing(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WipeReport {
    /// Removed file paths, sorted.
    pub removed: Vec<FsPath>,
}

pub type FsSnapshot = BTreeMap<FsPath, (StorageClass, Vec<u8>)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecureFs {
    nodes: BTreeMap<FsPath, FsNode>,
    access_log: AuditChain,
}

impl Default for SecureFs {
    fn default() -> Self {
        Self::new()
    }
}

impl SecureFs {
    pub fn new() -> Self {
        let root = FsNode {
            path: FsPath::root(),
            owner: "system".into(),
            kind: NodeKind::Dir,
            perms: acl([(Grantee::System, Perms::rl())]),
            storage_class: StorageClass::LustrePersistent,
            content: Vec::new(),
        };
        Self {
            nodes: BTreeMap::from([(FsPath::root(), root)]),
            access_log: AuditChain::new(Sink::FilesystemLog),
        }
    }

    pub fn access_log(&self) -> &AuditChain {
        &self.access_log
    }

    pub fn access_log_mut(&mut self) -> &mut AuditChain {
        &mut self.access_log
    }

    pub fn node(&self, path: &FsPath) -> Option<&FsNode> {
        self.nodes.get(path)
    }

    pub fn exists(&self, path: &FsPath) -> bool {
        self.nodes.contains_key(path)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &FsNode> {
        self.nodes.values()
    }

    /// All nodes at or below `root`.
    pub fn subtree<'a>(&'a self, root: &'a FsPath) -> impl Iterator<Item = &'a FsNode> + 'a {
        self.nodes
            .range(root.clone()..)
            .take_while(move |(p, _)| p.0.starts_with(&root.0))
            .filter(move |(p, _)| p.is_within(root))
            .map(|(_, n)| n)
    }

    /// Platform-internal directory creation; not an access attempt.
    pub fn create_dir(
        &mut self,
        path: &FsPath,
        owner: &str,
        class: StorageClass,
        perms: Acl,
    ) -> Result<(), FsError> {
        self.insert_node(path, owner, NodeKind::Dir, class, perms, Vec::new())
    }

    /// Creates any missing directories on the way to `path`, each with the
    /// given ACL.
    pub fn create_dir_all(
        &mut self,
        path: &FsPath,
        owner: &str,
        class: StorageClass,
        perms: Acl,
    ) -> Result<(), FsError> {
        let mut chain = vec![path.clone()];
        while let Some(parent) = chain.last().and_then(|p| p.parent()) {
            chain.push(parent);
        }
        for p in chain.into_iter().rev() {
            match self.nodes.get(&p) {
                Some(n) if n.kind == NodeKind::Dir => {}
                Some(_) => return Err(FsError::NotADirectory(p)),
                None => self.create_dir(&p, owner, class, perms.clone())?,
            }
        }
        Ok(())
    }

    /// Platform-internal file creation; not an access attempt.
    pub fn create_file(
        &mut self,
        path: &FsPath,
        owner: &str,
        class: StorageClass,
        perms: Acl,
        content: Vec<u8>,
    ) -> Result<(), FsError> {
        self.insert_node(path, owner, NodeKind::File, class, perms, content)
    }

    fn insert_node(
        &mut self,
        path: &FsPath,
        owner: &str,
        kind: NodeKind,
        class: StorageClass,
        perms: Acl,
        content: Vec<u8>,
    ) -> Result<(), FsError> {
        if self.nodes.contains_key(path) {
            return Err(FsError::AlreadyExists(path.clone()));
        }
        let parent = path.parent().ok_or_else(|| FsError::AlreadyExists(path.clone()))?;
        match self.nodes.get(&parent) {
            None => return Err(FsError::NotFound(parent)),
            Some(p) if p.kind != NodeKind::Dir => return Err(FsError::NotADirectory(parent)),
            _ => {}
        }
        self.nodes.insert(
            path.clone(),
            FsNode {
                path: path.clone(),
                owner: owner.into(),
                kind,
                perms,
                storage_class: class,
                content,
            },
        );
        Ok(())
    }

    /// The single access entry point for principals. Logs every attempt.
    pub fn fs_access(
        &mut self,
        tick: u64,
        principal: &Principal,
        path: &FsPath,
        op: AccessOp,
    ) -> Result<AccessOutcome, FsError> {
        let op_name = op.name();
        let result = self.check_and_apply(principal, path, op);
        let verdict = match &result {
            Ok(_) => "granted".to_owned(),
            Err(FsError::PermissionDenied { .. }) => "denied".to_owned(),
            Err(e) => format!("failed: {e}"),
        };
        self.access_log
            .append(
                tick,
                Category::DataAccess,
                principal.id.clone(),
                format!("{op_name} {path} {verdict}"),
            )
            .expect("data_access always routes to the filesystem log");
        result
    }

    fn check_and_apply(
        &mut self,
        principal: &Principal,
        path: &FsPath,
        op: AccessOp,
    ) -> Result<AccessOutcome, FsError> {
        let denied = |op: &'static str| FsError::PermissionDenied {
            principal: principal.id.clone(),
            op,
            path: path.clone(),
        };
        match op {
            AccessOp::Read => {
                let node = self
                    .nodes
                    .get(path)
                    .ok_or_else(|| FsError::NotFound(path.clone()))?;
                if !node.allows(principal, Perms::READ) {
                    return Err(denied("read"));
                }
                if node.kind == NodeKind::Dir {
                    return Err(FsError::IsADirectory(path.clone()));
                }
                Ok(AccessOutcome::Content(node.content.clone()))
            }
            AccessOp::List => {
                let node = self
                    .nodes
                    .get(path)
                    .ok_or_else(|| FsError::NotFound(path.clone()))?;
                if !node.allows(principal, Perms::LIST) {
                    return Err(denied("list"));
                }
                if node.kind != NodeKind::Dir {
                    return Err(FsError::NotADirectory(path.clone()));
                }
                let children = self
                    .subtree(path)
                    .filter(|n| n.path.parent().as_ref() == Some(path))
                    .map(|n| n.path.file_name().to_owned())
                    .collect();
                Ok(AccessOutcome::Listing(children))
            }
            AccessOp::Write(bytes) => {
                if let Some(node) = self.nodes.get_mut(path) {
                    if !node.allows(principal, Perms::WRITE) {
                        return Err(denied("write"));
                    }
                    if node.kind == NodeKind::Dir {
                        return Err(FsError::IsADirectory(path.clone()));
                    }
                    node.content = bytes;
                    return Ok(AccessOutcome::Written);
                }
                let parent_path = path.parent().ok_or_else(|| FsError::IsADirectory(path.clone()))?;
                let parent = self
                    .nodes
                    .get(&parent_path)
                    .ok_or_else(|| FsError::NotFound(parent_path.clone()))?;
                if !parent.allows(principal, Perms::WRITE) {
                    return Err(denied("write"));
                }
                if parent.kind != NodeKind::Dir {
                    return Err(FsError::NotADirectory(parent_path));
                }
                // New files take their ACL and storage class from the directory.
                let (perms, class) = (parent.perms.clone(), parent.storage_class);
                self.insert_node(path, &principal.id, NodeKind::File, class, perms, bytes)?;
                Ok(AccessOutcome::Written)
            }
        }
    }

    /// Removes `root` and everything below it. Returns the removed files.
    pub fn remove_subtree(&mut self, root: &FsPath) -> Result<WipeReport, FsError> {
        if !self.nodes.contains_key(root) {
            return Err(FsError::NotFound(root.clone()));
        }
        let doomed: Vec<FsPath> = self.subtree(root).map(|n| n.path.clone()).collect();
        let mut removed = Vec::new();
        for p in doomed {
            if let Some(n) = self.nodes.remove(&p) {
                if n.kind == NodeKind::File {
                    removed.push(p);
                }
            }
        }
        Ok(WipeReport { removed })
    }

    /// Removes only `VmEphemeral` nodes at or below `root`. Directories are
    /// removed along with their contents only when they are ephemeral.
    pub fn remove_ephemeral(&mut self, root: &FsPath) -> WipeReport {
        let doomed: Vec<(FsPath, NodeKind)> = self
            .subtree(root)
            .filter(|n| n.storage_class == StorageClass::VmEphemeral)
            .map(|n| (n.path.clone(), n.kind))
            .collect();
        let mut removed = Vec::new();
        for (p, kind) in doomed {
            self.nodes.remove(&p);
            if kind == NodeKind::File {
                removed.push(p);
            }
        }
        // A persistent node under a removed ephemeral directory would be
        // orphaned; drop the branch so the tree stays well formed.
        let orphans: Vec<FsPath> = self
            .nodes
            .keys()
            .filter(|p| p.parent().is_some_and(|pp| !self.nodes.contains_key(&pp)))
            .cloned()
            .collect();
        for o in orphans {
            if let Ok(extra) = self.remove_subtree(&o) {
                removed.extend(extra.removed);
            }
        }
        removed.sort();
        WipeReport { removed }
    }

    /// Removes the whole project tree, both storage classes.
    pub fn wipe_project(&mut self, project: &ProjectId) -> Result<WipeReport, FsError> {
        self.remove_subtree(&layout::project_root(project))
    }

    pub fn snapshot(&self) -> FsSnapshot {
        self.nodes
            .values()
            .filter(|n| n.kind == NodeKind::File)
            .map(|n| (n.path.clone(), (n.storage_class, n.content.clone())))
            .collect()
    }

    pub fn snapshot_under(&self, root: &FsPath) -> FsSnapshot {
        self.subtree(root)
            .filter(|n| n.kind == NodeKind::File)
            .map(|n| (n.path.clone(), (n.storage_class, n.content.clone())))
            .collect()
    }

    /// One node per line: `<path> <dir|file> <persistent|ephemeral> <owner> <acl>`
    /// where `<acl>` is `grantee=perms` entries joined by commas, or `-`.
    pub fn export_manifest(&self) -> String {
        let mut out = String::new();
        for n in self.nodes.values() {
            let kind = match n.kind {
                NodeKind::Dir => "dir",
                NodeKind::File => "file",
            };
            let class = match n.storage_class {
                StorageClass::LustrePersistent => "persistent",
                StorageClass::VmEphemeral => "ephemeral",
            };
            let acl = if n.perms.is_empty() {
                "-".to_owned()
            } else {
                n.perms
                    .iter()
                    .map(|(g, p)| format!("{g}={}", p.code()))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            out.push_str(&format!("{} {kind} {class} {} {acl}\n", n.path, n.owner));
        }
        out
    }

    /// Rebuilds a tree from a manifest. File contents start empty; the
    /// access log starts fresh.
    pub fn import_manifest(text: &str) -> Result<Self, FsError> {
        let mut fs = SecureFs {
            nodes: BTreeMap::new(),
            access_log: AuditChain::new(Sink::FilesystemLog),
        };
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| FsError::Manifest {
                line: idx + 1,
                reason,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [path, kind, class, owner, acl_text] = fields.as_slice() else {
                return Err(bad(format!("expected 5 fields, got {}", fields.len())));
            };
            let path = FsPath::parse(path)?;
            let kind = match *kind {
                "dir" => NodeKind::Dir,
                "file" => NodeKind::File,
                other => return Err(bad(format!("unknown kind `{other}`"))),
            };
            let class = match *class {
                "persistent" => StorageClass::LustrePersistent,
                "ephemeral" => StorageClass::VmEphemeral,
                other => return Err(bad(format!("unknown class `{other}`"))),
            };
            let mut perms = Acl::new();
            if *acl_text != "-" {
                for entry in acl_text.split(',') {
                    let (g, p) = entry
                        .split_once('=')
                        .ok_or_else(|| bad(format!("bad acl entry `{entry}`")))?;
                    perms.insert(g.parse().map_err(bad)?, Perms::from_code(p).map_err(bad)?);
                }
            }
            if path.is_root() {
                if kind != NodeKind::Dir {
                    return Err(bad("root must be a directory".into()));
                }
                fs.nodes.insert(
                    path.clone(),
                    FsNode {
                        path,
                        owner: owner.to_string(),
                        kind,
                        perms,
                        storage_class: class,
                        content: Vec::new(),
                    },
                );
            } else {
                fs.insert_node(&path, owner, kind, class, perms, Vec::new())
                    .map_err(|e| bad(e.to_string()))?;
            }
        }
        if !fs.nodes.contains_key(&FsPath::root()) {
            return Err(FsError::Manifest {
                line: 0,
                reason: "manifest has no root entry".into(),
            });
        }
        Ok(fs)
    }
}
