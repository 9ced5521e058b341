//! Operator command grammar and its execution against a [`Platform`].
//!
//! The same grammar drives the `enclave` binary and scenario files, so a
//! scenario step is exactly a command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use crate::audit::{self, AuditFilter, Category, ChainStatus};
use crate::bench::{self, BenchError, BenchmarkResult, IoMode, Kernel};
use crate::flows::synthetic::{self, Side};
use crate::flows::Session;
use crate::hostsched::{JobSpec, Walltime};
use crate::ids::{EnvId, EnvKind, HostId, JobId, OwnerId, ProjectId, Tenant};
use crate::netmodel::Channel;
use crate::platform::{Platform, PlatformError, PLATFORM_ADMIN};
use crate::provisioner::EnvSize;
use crate::securefs::{AccessOp, AccessOutcome, FsPath, Principal};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("i/o: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("{} isolation violation(s):\n{}", .0.len(), .0.join("\n"))]
    Violations(Vec<String>),
    #[error("{log}: first bad index {index}")]
    ChainBroken { log: String, index: usize },
    #[error("`{0}` cannot run inside a scenario")]
    NotScriptable(String),
    #[error("scenario failed\n{0}")]
    ScenarioFailed(String),
}

impl CommandError {
    /// Name of the innermost error variant, as used in scenario files.
    pub fn kind(&self) -> String {
        match self {
            CommandError::Platform(e) => e.kind(),
            CommandError::Bench(e) => format!("{e:?}")
                .split(|c: char| !c.is_alphanumeric())
                .next()
                .unwrap_or_default()
                .to_owned(),
            CommandError::Io(_) => "Io".into(),
            CommandError::Parse(_) => "Parse".into(),
            CommandError::Violations(_) => "Violations".into(),
            CommandError::ChainBroken { .. } => "ChainBroken".into(),
            CommandError::NotScriptable(_) => "NotScriptable".into(),
            CommandError::ScenarioFailed(_) => "ScenarioFailed".into(),
        }
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Io(e.to_string())
    }
}

/// One command line without the program name, as written in scenarios.
#[derive(Debug, Parser)]
#[command(name = "step", no_binary_name = true, disable_help_subcommand = true)]
pub struct StepLine {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Create or wipe projects.
    #[command(subcommand)]
    Project(ProjectCmd),
    /// Register data owners.
    #[command(subcommand)]
    Owner(OwnerCmd),
    /// Virtual-cluster lifecycle.
    #[command(subcommand)]
    Env(EnvCmd),
    /// Jobs on a project's inner scheduler.
    #[command(subcommand)]
    Job(JobCmd),
    /// Advance platform time by `n` ticks (hours).
    Tick { n: u64 },
    /// Network reachability and isolation checks.
    #[command(subcommand)]
    Net(NetCmd),
    /// Import, staging, linkage and file access.
    #[command(subcommand)]
    Data(DataCmd),
    /// Disclosure-checked export.
    #[command(subcommand)]
    Export(ExportCmd),
    /// Audit log verification and queries.
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Benchmark kernels and efficiency reports.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Scripted scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
}

#[derive(Debug, Clone, Subcommand)]
pub enum ProjectCmd {
    /// Create a project with an empty storage area.
    Create {
        id: ProjectId,
        #[arg(long, default_value = PLATFORM_ADMIN)]
        actor: String,
    },
    /// Delete a project, its environments and its data.
    Wipe {
        id: ProjectId,
        #[arg(long, default_value = PLATFORM_ADMIN)]
        actor: String,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum OwnerCmd {
    /// Register a data owner.
    Create {
        id: OwnerId,
        #[arg(long, default_value = PLATFORM_ADMIN)]
        actor: String,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum EnvCmd {
    /// Launch an environment. `tenant` is a project, or a data owner for
    /// `dm` environments.
    Launch {
        kind: EnvKind,
        tenant: String,
        #[arg(long)]
        walltime: Option<u64>,
        #[arg(long)]
        vms: Option<u32>,
        #[arg(long)]
        cores: Option<u32>,
        #[arg(long)]
        memory: Option<u32>,
        /// Only submit the host job; do not tick or bring the environment up.
        #[arg(long)]
        pending: bool,
        #[arg(long, default_value = PLATFORM_ADMIN)]
        actor: String,
    },
    /// Move an environment one lifecycle phase forward.
    Advance { env: EnvId },
    /// Attach a compute environment to its project's work environment.
    Join { compute: EnvId },
    /// Tear down an environment and release its hosts.
    Destroy { env: EnvId },
    /// Show one environment, or all of them.
    Status { env: Option<EnvId> },
}

#[derive(Debug, Clone, Subcommand)]
pub enum JobCmd {
    /// Submit a job to a project's inner scheduler.
    Submit {
        project: ProjectId,
        #[arg(long, default_value_t = 1)]
        nodes: u32,
        #[arg(long, default_value_t = 1)]
        cores: u32,
        /// Ticks, or `unlimited`.
        #[arg(long, default_value = "1")]
        walltime: String,
        #[arg(long)]
        runtime: Option<u64>,
        #[arg(long)]
        service: bool,
        #[arg(long)]
        exclusive: bool,
    },
    /// Cancel a queued or running job.
    Cancel {
        project: ProjectId,
        job: JobId,
    },
    /// List a project's jobs.
    List {
        project: ProjectId,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum NetCmd {
    /// Prints `true` or `false`.
    Reach { a: HostId, b: HostId, channel: Channel },
    /// Full isolation sweep; fails if any violation is found.
    Verify,
    /// Enroll a remote site's VPN into a project's work environment.
    Enroll {
        site: HostId,
        project: ProjectId,
        #[arg(long, default_value = PLATFORM_ADMIN)]
        actor: String,
    },
    /// List physical hosts and their tenants.
    Hosts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SyntheticSide {
    Owner,
    Project,
}

#[derive(Debug, Clone, Args)]
pub struct Payload {
    /// Literal content; `\n` and `\t` are unescaped.
    #[arg(long, conflicts_with_all = ["file", "synthetic"])]
    pub content: Option<String>,
    #[arg(long, conflicts_with = "synthetic")]
    pub file: Option<PathBuf>,
    /// Seeded synthetic dataset.
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticSide>,
    #[arg(long, default_value_t = 100)]
    pub rows: usize,
}

#[derive(Debug, Clone, Subcommand)]
pub enum DataCmd {
    /// Transfer a file over the site VPN into project staging.
    Import {
        principal: Principal,
        site: HostId,
        dest: FsPath,
        #[command(flatten)]
        payload: Payload,
        #[arg(long)]
        unauthenticated: bool,
    },
    /// Data manager places owner data in owner staging.
    Stage {
        principal: Principal,
        owner: OwnerId,
        name: String,
        #[command(flatten)]
        payload: Payload,
    },
    /// Trusted-third-party linkage into the project's linked directory.
    Link {
        owner_file: FsPath,
        project_file: FsPath,
        project: ProjectId,
        out: String,
        #[arg(long = "as", default_value = "ttp")]
        caller: Principal,
    },
    /// Write a file as a principal.
    Write {
        principal: Principal,
        path: FsPath,
        #[command(flatten)]
        payload: Payload,
    },
    /// Read a file as a principal.
    Read {
        principal: Principal,
        path: FsPath,
    },
    /// List a directory as a principal.
    List {
        principal: Principal,
        path: FsPath,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, Subcommand)]
pub enum ExportCmd {
    /// Ask for a project file to be exported.
    Request {
        principal: Principal,
        path: FsPath,
    },
    /// Approve or reject a pending export.
    Review {
        principal: Principal,
        id: String,
        #[arg(value_enum)]
        decision: Decision,
    },
    /// Release an approved export to the outbox.
    Release {
        id: String,
        #[arg(long, default_value = PLATFORM_ADMIN)]
        actor: String,
    },
    /// List released artifacts, or write them to a directory.
    Outbox { dir: Option<PathBuf> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogName {
    Syslog,
    Fs,
}

#[derive(Debug, Clone, Subcommand)]
pub enum AuditCmd {
    /// Verify the platform logs, or a JSON-lines chain file.
    Verify { file: Option<PathBuf> },
    /// Filter audit records.
    Query {
        #[arg(long, value_enum, default_value = "syslog")]
        log: LogName,
        #[arg(long)]
        category: Option<Category>,
        #[arg(long)]
        actor: Option<String>,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
    },
    /// Write a log as JSON lines.
    Export {
        #[arg(long, value_enum, default_value = "syslog")]
        log: LogName,
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum BenchCmd {
    /// Run one benchmark kernel.
    Run {
        kernel: Kernel,
        #[arg(long, default_value_t = 2_000_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Cubic grid edge for cg.
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        #[arg(long, default_value_t = 2)]
        lanes: usize,
        #[arg(long, default_value_t = 0)]
        bytes: usize,
        #[arg(long, default_value_t = 16)]
        mb: u64,
        #[arg(long)]
        path: Option<PathBuf>,
        /// Append the result to a JSON array file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare candidate results against a baseline.
    Report { baseline: PathBuf, candidate: PathBuf },
    /// Write synthetic baseline/candidate files reproducing the reference table.
    Fixtures { dir: PathBuf },
}

#[derive(Debug, Clone, Subcommand)]
pub enum ScenarioCmd {
    /// Run a scenario file against a fresh platform.
    Run { file: PathBuf },
}

/// Result of a command: human text plus a JSON value.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub json: Value,
}

impl Outcome {
    fn new(text: impl Into<String>, json: Value) -> Self {
        Self {
            text: text.into(),
            json,
        }
    }

    fn text(text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            json: Value::String(text.clone()),
            text,
        }
    }
}

type Result<T> = std::result::Result<T, CommandError>;

pub fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn payload_bytes(p: &Platform, payload: &Payload) -> Result<Vec<u8>> {
    if let Some(c) = &payload.content {
        return Ok(unescape(c).into_bytes());
    }
    if let Some(f) = &payload.file {
        return std::fs::read(f).map_err(|e| CommandError::Io(format!("{}: {e}", f.display())));
    }
    if let Some(side) = payload.synthetic {
        let side = match side {
            SyntheticSide::Owner => Side::Owner,
            SyntheticSide::Project => Side::Project,
        };
        return Ok(synthetic::dataset(p.config.seed, side, payload.rows).to_csv());
    }
    Err(CommandError::Parse("one of --content, --file or --synthetic is required".into()))
}

fn parse_walltime(s: &str) -> Result<Walltime> {
    if s.eq_ignore_ascii_case("unlimited") {
        return Ok(Walltime::Unlimited);
    }
    s.parse::<u64>()
        .map(Walltime::Ticks)
        .map_err(|_| CommandError::Parse(format!("walltime `{s}` is neither a tick count nor `unlimited`")))
}

fn env_line(p: &Platform, id: &EnvId) -> Result<(String, Value)> {
    let env = p.environment(id)?;
    let vms: Vec<&str> = env.vms.iter().map(|v| v.id.as_str()).collect();
    let text = format!(
        "{} {} {} {} vms={}",
        env.id,
        env.kind,
        env.tenant,
        env.phase,
        if vms.is_empty() { "-".to_owned() } else { vms.join(",") }
    );
    Ok((text, env.to_record()))
}

/// Runs one command. `scripted` forbids commands whose output is not
/// deterministic or that would recurse.
pub fn execute(p: &mut Platform, cmd: &Command, scripted: bool) -> Result<Outcome> {
    match cmd {
        Command::Project(c) => project(p, c),
        Command::Owner(OwnerCmd::Create { id, actor }) => {
            p.create_owner(id, actor)?;
            Ok(Outcome::text(format!("registered owner {id}")))
        }
        Command::Env(c) => env(p, c),
        Command::Job(c) => job(p, c),
        Command::Tick { n } => {
            let events = p.tick(*n);
            let lines: Vec<String> = events
                .iter()
                .map(|e| serde_json::to_string(e).expect("event serializes"))
                .collect();
            Ok(Outcome::new(lines.join("\n"), json!(events)))
        }
        Command::Net(c) => net(p, c),
        Command::Data(c) => data(p, c),
        Command::Export(c) => export(p, c),
        Command::Audit(c) => audit_cmd(p, c),
        Command::Bench(c) => {
            if scripted && matches!(c, BenchCmd::Run { .. }) {
                return Err(CommandError::NotScriptable("bench run".into()));
            }
            bench_cmd(c)
        }
        Command::Scenario(ScenarioCmd::Run { file }) => {
            if scripted {
                return Err(CommandError::NotScriptable("scenario run".into()));
            }
            let report = crate::scenario::run_file(file, p.config)?;
            let text = report.render();
            if report.passed {
                Ok(Outcome::new(text, report.to_json()))
            } else {
                Err(CommandError::ScenarioFailed(text))
            }
        }
    }
}

fn project(p: &mut Platform, c: &ProjectCmd) -> Result<Outcome> {
    match c {
        ProjectCmd::Create { id, actor } => {
            p.create_project(id, actor)?;
            Ok(Outcome::text(format!("created project {id}")))
        }
        ProjectCmd::Wipe { id, actor } => {
            let report = p.wipe_project(id, actor)?;
            Ok(Outcome::new(
                format!("wiped project {id}: {} file(s) removed", report.removed.len()),
                json!(report),
            ))
        }
    }
}

fn env(p: &mut Platform, c: &EnvCmd) -> Result<Outcome> {
    match c {
        EnvCmd::Launch {
            kind,
            tenant,
            walltime,
            vms,
            cores,
            memory,
            pending,
            actor,
        } => {
            let tenant = match kind {
                EnvKind::DataManager => Tenant::Owner(tenant.as_str().into()),
                EnvKind::Management => Tenant::Platform,
                _ => Tenant::Project(tenant.as_str().into()),
            };
            let size = if vms.is_some() || cores.is_some() || memory.is_some() {
                let topo = p.config.topology;
                let d = crate::provisioner::default_size(*kind, topo.cores, topo.memory_gb);
                Some(EnvSize::new(
                    vms.unwrap_or(d.vm_count),
                    cores.unwrap_or(d.cores),
                    memory.unwrap_or(d.memory_gb),
                ))
            } else {
                None
            };
            let id = if *pending {
                p.launch_environment(tenant, *kind, size, *walltime, actor)?
            } else {
                p.launch_and_run(tenant, *kind, size, *walltime, actor)?
            };
            let (text, json) = env_line(p, &id)?;
            Ok(Outcome::new(text, json))
        }
        EnvCmd::Advance { env } => {
            p.advance_phase(env)?;
            let (text, json) = env_line(p, env)?;
            Ok(Outcome::new(text, json))
        }
        EnvCmd::Join { compute } => {
            p.join_environments(compute)?;
            let (text, json) = env_line(p, compute)?;
            Ok(Outcome::new(text, json))
        }
        EnvCmd::Destroy { env } => {
            let report = p.destroy_environment(env)?;
            Ok(Outcome::new(
                format!("destroyed {env}: {} ephemeral file(s) removed", report.removed.len()),
                json!(report),
            ))
        }
        EnvCmd::Status { env } => {
            let ids: Vec<EnvId> = match env {
                Some(id) => vec![id.clone()],
                None => p.environments().map(|e| e.id.clone()).collect(),
            };
            let mut lines = Vec::new();
            let mut records = Vec::new();
            for id in &ids {
                let (t, j) = env_line(p, id)?;
                lines.push(t);
                records.push(j);
            }
            Ok(Outcome::new(lines.join("\n"), Value::Array(records)))
        }
    }
}

fn job(p: &mut Platform, c: &JobCmd) -> Result<Outcome> {
    match c {
        JobCmd::Submit {
            project,
            nodes,
            cores,
            walltime,
            runtime,
            service,
            exclusive,
        } => {
            let mut spec = if *service {
                JobSpec::service(*nodes, *cores)
            } else {
                let mut s = JobSpec::batch(*nodes, *cores, 1);
                s.walltime = parse_walltime(walltime)?;
                s
            };
            if *exclusive {
                spec = spec.exclusive();
            }
            if let Some(r) = runtime {
                spec = spec.with_runtime(*r);
            }
            let id = p.submit_inner_job(project, spec)?;
            Ok(Outcome::text(id.to_string()))
        }
        JobCmd::Cancel { project, job } => {
            p.cancel_inner_job(project, job)?;
            Ok(Outcome::text(format!("cancelled {job}")))
        }
        JobCmd::List { project } => {
            let work = p
                .active_work_env(project)
                .ok_or_else(|| PlatformError::from(crate::provisioner::ProvisionError::NoWorkEnv(project.clone())))?
                .id
                .clone();
            let sched = p
                .inner_scheduler(&work)
                .ok_or_else(|| PlatformError::from(crate::provisioner::ProvisionError::EnvNotRunning(work.clone())))?;
            let lines: Vec<String> = sched
                .jobs()
                .map(|j| {
                    let nodes: Vec<&str> = j.allocated_nodes.iter().map(|n| n.as_str()).collect();
                    format!("{} {:?} nodes={}", j.id, j.state, nodes.join(","))
                })
                .collect();
            let jobs: Vec<_> = sched.jobs().collect();
            Ok(Outcome::new(lines.join("\n"), json!(jobs)))
        }
    }
}

fn net(p: &mut Platform, c: &NetCmd) -> Result<Outcome> {
    match c {
        NetCmd::Reach { a, b, channel } => {
            let r = p.net.reachable(a, b, *channel).map_err(PlatformError::from)?;
            Ok(Outcome::new(r.to_string(), json!(r)))
        }
        NetCmd::Verify => {
            let violations = p.verify_isolation();
            if violations.is_empty() {
                Ok(Outcome::text("ok"))
            } else {
                Err(CommandError::Violations(
                    violations.iter().map(|v| v.to_json_line()).collect(),
                ))
            }
        }
        NetCmd::Enroll { site, project, actor } => {
            p.enroll_vpn(site, project, actor)?;
            Ok(Outcome::text(format!("enrolled {site} for {project}")))
        }
        NetCmd::Hosts => {
            let lines: Vec<String> = p
                .net
                .hosts
                .iter()
                .map(|(h, role)| format!("{h} {}", serde_json::to_string(role).expect("role serializes")))
                .collect();
            Ok(Outcome::new(lines.join("\n"), json!(p.net.hosts)))
        }
    }
}

fn data(p: &mut Platform, c: &DataCmd) -> Result<Outcome> {
    match c {
        DataCmd::Import {
            principal,
            site,
            dest,
            payload,
            unauthenticated,
        } => {
            let bytes = payload_bytes(p, payload)?;
            let session = Session {
                principal: principal.clone(),
                authenticated: !unauthenticated,
                site: site.clone(),
            };
            let path = p.import_via_vpn(&session, bytes, dest)?;
            Ok(Outcome::text(path.to_string()))
        }
        DataCmd::Stage {
            principal,
            owner,
            name,
            payload,
        } => {
            let bytes = payload_bytes(p, payload)?;
            let path = p.stage_owner_data(principal, owner, name, bytes)?;
            Ok(Outcome::text(path.to_string()))
        }
        DataCmd::Link {
            owner_file,
            project_file,
            project,
            out,
            caller,
        } => {
            let path = p.ttp_link(caller, owner_file, project_file, project, out)?;
            let rows = p
                .fs
                .node(&path)
                .map(|n| n.content.iter().filter(|b| **b == b'\n').count().saturating_sub(1))
                .unwrap_or(0);
            Ok(Outcome::new(
                format!("{path} ({rows} row(s))"),
                json!({"path": path, "rows": rows}),
            ))
        }
        DataCmd::Write {
            principal,
            path,
            payload,
        } => {
            let bytes = payload_bytes(p, payload)?;
            let n = bytes.len();
            p.write_file(principal, path, bytes)?;
            Ok(Outcome::text(format!("wrote {n} byte(s) to {path}")))
        }
        DataCmd::Read { principal, path } => {
            let bytes = p.read_file(principal, path)?;
            let text = String::from_utf8_lossy(&bytes).into_owned();
            Ok(Outcome::new(text.trim_end().to_owned(), Value::String(text)))
        }
        DataCmd::List { principal, path } => {
            let tick = p.clock();
            let out = p
                .fs
                .fs_access(tick, principal, path, AccessOp::List)
                .map_err(PlatformError::from)?;
            let names = match out {
                AccessOutcome::Listing(n) => n,
                _ => Vec::new(),
            };
            Ok(Outcome::new(names.join("\n"), json!(names)))
        }
    }
}

fn export(p: &mut Platform, c: &ExportCmd) -> Result<Outcome> {
    match c {
        ExportCmd::Request { principal, path } => {
            let req = p.request_export(principal, path)?;
            let check = req.auto_check.as_ref().map(|c| c.summary()).unwrap_or_default();
            Ok(Outcome::new(
                format!("{} submitted; check: {check}", req.id),
                json!(req),
            ))
        }
        ExportCmd::Review {
            principal,
            id,
            decision,
        } => {
            let req = p.review_export(principal, id, *decision == Decision::Approve)?;
            Ok(Outcome::new(format!("{} {:?}", req.id, req.state).to_lowercase(), json!(req)))
        }
        ExportCmd::Release { id, actor } => {
            let rec = p.release_export(actor, id)?;
            Ok(Outcome::new(
                format!("{} released {} ({} bytes)", rec.request_id, rec.file_name, rec.bytes.len()),
                json!(rec),
            ))
        }
        ExportCmd::Outbox { dir } => {
            if let Some(d) = dir {
                p.write_outbox(d)?;
            }
            let lines: Vec<String> = p
                .flows
                .outbox
                .iter()
                .map(|r| format!("{}/{} {} bytes", r.request_id, r.file_name, r.bytes.len()))
                .collect();
            Ok(Outcome::new(lines.join("\n"), json!(p.flows.outbox)))
        }
    }
}

fn audit_cmd(p: &mut Platform, c: &AuditCmd) -> Result<Outcome> {
    match c {
        AuditCmd::Verify { file: Some(f) } => {
            let file = std::fs::File::open(f).map_err(|e| CommandError::Io(format!("{}: {e}", f.display())))?;
            let records = audit::read_jsonl(std::io::BufReader::new(file))
                .map_err(|e| CommandError::Parse(e.to_string()))?;
            match audit::verify_records(&records) {
                ChainStatus::Ok => Ok(Outcome::new(format!("ok ({} records)", records.len()), json!("ok"))),
                ChainStatus::FirstBadIndex(index) => Err(CommandError::ChainBroken {
                    log: f.display().to_string(),
                    index,
                }),
            }
        }
        AuditCmd::Verify { file: None } => {
            let (sys, fs) = p.verify_audit();
            for (log, status) in [("syslog", sys), ("fs", fs)] {
                if let ChainStatus::FirstBadIndex(index) = status {
                    return Err(CommandError::ChainBroken {
                        log: log.into(),
                        index,
                    });
                }
            }
            Ok(Outcome::new(
                format!("syslog ok ({} records)\nfs ok ({} records)", p.syslog.len(), p.fs.access_log().len()),
                json!({"syslog": "ok", "fs": "ok"}),
            ))
        }
        AuditCmd::Query {
            log,
            category,
            actor,
            from,
            to,
        } => {
            let filter = AuditFilter {
                category: *category,
                actor: actor.clone(),
                ticks: match (from, to) {
                    (None, None) => None,
                    (f, t) => Some((f.unwrap_or(0), t.unwrap_or(u64::MAX))),
                },
            };
            let chain = match log {
                LogName::Syslog => &p.syslog,
                LogName::Fs => p.fs.access_log(),
            };
            let recs = chain.query(&filter);
            let lines: Vec<String> = recs
                .iter()
                .map(|r| format!("{} {} {} {} {}", r.seq, r.tick, r.category, r.actor, r.detail))
                .collect();
            Ok(Outcome::new(lines.join("\n"), json!(recs)))
        }
        AuditCmd::Export { log, out } => {
            let chain = match log {
                LogName::Syslog => &p.syslog,
                LogName::Fs => p.fs.access_log(),
            };
            let file = std::fs::File::create(out).map_err(|e| CommandError::Io(format!("{}: {e}", out.display())))?;
            chain
                .write_jsonl(std::io::BufWriter::new(file))
                .map_err(|e| CommandError::Io(e.to_string()))?;
            Ok(Outcome::text(format!("wrote {} record(s) to {}", chain.len(), out.display())))
        }
    }
}

/// Reads a JSON array of results, or a single result.
pub fn load_results(path: &Path) -> Result<Vec<BenchmarkResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| CommandError::Io(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CommandError::Parse(format!("{}: {e}", path.display())))?;
    let results = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|r| vec![r])
    }
    .map_err(|e| CommandError::Parse(format!("{}: {e}", path.display())))?;
    Ok(results)
}

fn save_results(path: &Path, results: &[BenchmarkResult]) -> Result<()> {
    let text = serde_json::to_string_pretty(results).expect("results serialize");
    std::fs::write(path, text + "\n").map_err(|e| CommandError::Io(format!("{}: {e}", path.display())))
}

fn bench_cmd(c: &BenchCmd) -> Result<Outcome> {
    match c {
        BenchCmd::Run {
            kernel,
            n,
            threads,
            grid,
            max_iters,
            lanes,
            bytes,
            mb,
            path,
            out,
        } => {
            let io_path = path
                .clone()
                .unwrap_or_else(|| std::env::temp_dir().join(format!("enclave-io-{}.dat", std::process::id())));
            let result = match kernel {
                Kernel::StreamTriad => bench::run_stream_triad(*n, *threads)?,
                Kernel::Cg => bench::run_cg((*grid, *grid, *grid), *max_iters)?,
                Kernel::Latency => bench::run_latency(*lanes, *bytes)?,
                Kernel::AllReduce => bench::run_allreduce(*lanes)?,
                Kernel::IoWrite => bench::run_io(&io_path, *mb, *lanes, IoMode::Write)?,
                Kernel::IoRead => {
                    if !io_path.exists() {
                        bench::io::write_pattern(&io_path, *mb * bench::io::MB, *lanes)?;
                    }
                    bench::run_io(&io_path, *mb, *lanes, IoMode::Read)?
                }
            };
            if path.is_none() && io_path.exists() {
                let _ = std::fs::remove_file(&io_path);
            }
            if let Some(out) = out {
                let mut all = if out.exists() { load_results(out)? } else { Vec::new() };
                all.push(result.clone());
                save_results(out, &all)?;
            }
            let json = json!(result);
            Ok(Outcome::new(serde_json::to_string(&json).expect("json"), json))
        }
        BenchCmd::Report { baseline, candidate } => {
            let rows = bench::report(&load_results(baseline)?, &load_results(candidate)?)?;
            let json: Value = serde_json::from_str(&bench::render_json(&rows)).expect("rendered json");
            Ok(Outcome::new(bench::render_text(&rows).trim_end().to_owned(), json))
        }
        BenchCmd::Fixtures { dir } => {
            std::fs::create_dir_all(dir)?;
            let (base, cand) = bench::fixtures::table1();
            let (b, c) = (dir.join("baseline.json"), dir.join("candidate.json"));
            save_results(&b, &base)?;
            save_results(&c, &cand)?;
            Ok(Outcome::text(format!("wrote {} and {}", b.display(), c.display())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::PlatformConfig;

    fn run(p: &mut Platform, line: &str) -> Result<Outcome> {
        let words = crate::scenario::split_words(line).unwrap();
        let step = StepLine::try_parse_from(words).map_err(|e| CommandError::Parse(e.to_string()))?;
        execute(p, &step.command, true)
    }

    #[test]
    fn unescape_handles_sequences() {
        assert_eq!(unescape(r"a\nb\tc\\d\q"), "a\nb\tc\\d\\q");
    }

    #[test]
    fn walltime_parse() {
        assert_eq!(parse_walltime("unlimited").unwrap(), Walltime::Unlimited);
        assert_eq!(parse_walltime("120").unwrap(), Walltime::Ticks(120));
        assert!(parse_walltime("five").is_err());
    }

    #[test]
    fn reach_prints_bool() {
        let mut p = Platform::new(PlatformConfig::default()).unwrap();
        run(&mut p, "project create p1").unwrap();
        run(&mut p, "env launch work p1").unwrap();
        let out = run(&mut p, "net reach work-002-vm0 fileserver ib-storage").unwrap();
        assert_eq!(out.text, "true");
        let out = run(&mut p, "net reach work-002-vm0 config-master mgmt").unwrap();
        assert_eq!(out.text, "false");
        assert_eq!(run(&mut p, "net verify").unwrap().text, "ok");
    }

    #[test]
    fn errors_carry_leaf_kind() {
        let mut p = Platform::new(PlatformConfig::default()).unwrap();
        run(&mut p, "project create p1").unwrap();
        let e = run(&mut p, "project create p1").unwrap_err();
        assert_eq!(e.kind(), "ProjectExists");
        run(&mut p, "env launch work p1").unwrap();
        let e = run(&mut p, "job submit p1 --walltime 121").unwrap_err();
        assert_eq!(e.kind(), "WalltimeExceeded");
        let e = run(&mut p, "bench run triad").unwrap_err();
        assert_eq!(e.kind(), "NotScriptable");
    }
}
