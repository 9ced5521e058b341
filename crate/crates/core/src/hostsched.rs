//! Discrete-tick batch scheduler.
//!
//! The same engine runs as the host cluster scheduler (over physical nodes)
//! and as the inner scheduler of each work environment (over that
//! environment's VMs). One tick is one hour of wall time.
//!
//! Policy is FIFO first-fit without backfill: every tick, Running jobs that
//! reached their runtime complete and jobs that reached their walltime
//! expire; then the queue is scanned in submission order and each job that
//! fits the current free set starts. Jobs that do not fit are skipped but keep
//! their queue position.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{JobId, NodeId};

/// Five days at one hour per tick.
pub const MAX_WALLTIME_TICKS: u64 = 120;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedError {
    #[error("walltime {requested} exceeds the {max}-tick limit")]
    WalltimeExceeded { requested: String, max: u64 },
    #[error("request for {nodes} node(s) x {cores} core(s) exceeds cluster capacity")]
    CapacityExceeded { nodes: u32, cores: u32 },
    #[error("invalid job spec: {0}")]
    InvalidSpec(String),
    #[error("job {0} not found")]
    NotFound(JobId),
    #[error("job {0} is already in a terminal state")]
    AlreadyTerminal(JobId),
    #[error("node {0} not found")]
    UnknownNode(NodeId),
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("node {0} is busy")]
    NodeBusy(NodeId),
    #[error("invalid topology: {0}")]
    Topology(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    /// Long-lived platform service (work environments and friends).
    Service,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Walltime {
    Ticks(u64),
    Unlimited,
}

impl fmt::Display for Walltime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Walltime::Ticks(t) => write!(f, "{t}"),
            Walltime::Unlimited => f.write_str("unlimited"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    pub kind: JobKind,
    pub nodes_requested: u32,
    pub cores_per_node: u32,
    pub exclusive: bool,
    pub walltime: Walltime,
    /// Ticks of work after which the job completes on its own. `None` runs
    /// until cancelled or expired.
    pub runtime_ticks: Option<u64>,
}

impl JobSpec {
    pub fn batch(nodes: u32, cores_per_node: u32, walltime: u64) -> Self {
        Self {
            kind: JobKind::Batch,
            nodes_requested: nodes,
            cores_per_node,
            exclusive: false,
            walltime: Walltime::Ticks(walltime),
            runtime_ticks: None,
        }
    }

    pub fn service(nodes: u32, cores_per_node: u32) -> Self {
        Self {
            kind: JobKind::Service,
            nodes_requested: nodes,
            cores_per_node,
            exclusive: false,
            walltime: Walltime::Unlimited,
            runtime_ticks: None,
        }
    }

    pub fn exclusive(mut self) -> Self {
        self.exclusive = true;
        self
    }

    pub fn with_runtime(mut self, ticks: u64) -> Self {
        self.runtime_ticks = Some(ticks);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Completed,
    Cancelled,
    Expired,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            JobState::Completed | JobState::Cancelled | JobState::Expired
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub spec: JobSpec,
    pub state: JobState,
    pub allocated_nodes: Vec<NodeId>,
    pub submit_tick: u64,
    pub start_tick: Option<u64>,
    pub end_tick: Option<u64>,
    /// Submission sequence number; FIFO tie-breaker within a tick.
    pub seq: u64,
}

impl Job {
    fn cores_on_node(&self, node: &Node) -> u32 {
        if self.spec.exclusive {
            node.cores
        } else {
            self.spec.cores_per_node
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeState {
    Free,
    PartiallyAllocated,
    FullyAllocated,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub cores: u32,
    pub memory_gb: u32,
    allocated_cores: u32,
    exclusive: bool,
    down: bool,
}

impl Node {
    pub fn new(id: impl Into<NodeId>, cores: u32, memory_gb: u32) -> Self {
        Self {
            id: id.into(),
            cores,
            memory_gb,
            allocated_cores: 0,
            exclusive: false,
            down: false,
        }
    }

    pub fn allocated_cores(&self) -> u32 {
        self.allocated_cores
    }

    pub fn free_cores(&self) -> u32 {
        self.cores - self.allocated_cores
    }

    pub fn hosts_exclusive(&self) -> bool {
        self.exclusive
    }

    pub fn state(&self) -> NodeState {
        if self.down {
            NodeState::Down
        } else if self.allocated_cores == 0 {
            NodeState::Free
        } else if self.allocated_cores == self.cores {
            NodeState::FullyAllocated
        } else {
            NodeState::PartiallyAllocated
        }
    }

    fn fits(&self, spec: &JobSpec) -> bool {
        if self.down || self.exclusive || spec.cores_per_node > self.cores {
            return false;
        }
        if spec.exclusive {
            self.allocated_cores == 0
        } else {
            self.free_cores() >= spec.cores_per_node
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    Expire,
    Complete,
    Cancel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    #[serde(rename = "event")]
    pub kind: EventKind,
    pub job: JobId,
}

/// Cluster shape, read from a `key = value` topology file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub nodes: u32,
    pub cores: u32,
    pub memory_gb: u32,
}

impl Default for Topology {
    fn default() -> Self {
        Self {
            nodes: 4,
            cores: 32,
            memory_gb: 64,
        }
    }
}

impl Topology {
    pub fn parse(text: &str) -> Result<Self, SchedError> {
        let topo: Topology = toml::from_str(text).map_err(|e| SchedError::Topology(e.to_string()))?;
        if topo.nodes == 0 || topo.cores == 0 {
            return Err(SchedError::Topology(
                "node and core counts must be positive".into(),
            ));
        }
        Ok(topo)
    }

    pub fn to_text(&self) -> String {
        format!(
            "nodes = {}\ncores = {}\nmemory_gb = {}\n",
            self.nodes, self.cores, self.memory_gb
        )
    }

    pub fn build_nodes(&self) -> Vec<Node> {
        (1..=self.nodes)
            .map(|i| Node::new(format!("node{i:02}"), self.cores, self.memory_gb))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub max_walltime: u64,
    /// Pilot-era behaviour: service jobs are also bound by the walltime
    /// limit. Unlimited service requests are clamped to `max_walltime`.
    pub cap_service_jobs: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            max_walltime: MAX_WALLTIME_TICKS,
            cap_service_jobs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheduler {
    config: SchedulerConfig,
    job_prefix: String,
    clock: u64,
    nodes: Vec<Node>,
    jobs: BTreeMap<JobId, Job>,
    queue: VecDeque<JobId>,
    /// Running jobs in start order.
    running: Vec<JobId>,
    event_log: Vec<Event>,
    next_seq: u64,
}

impl Scheduler {
    pub fn new(nodes: Vec<Node>) -> Self {
        Self::with_config(nodes, SchedulerConfig::default(), "job")
    }

    pub fn from_topology(topo: &Topology) -> Self {
        Self::new(topo.build_nodes())
    }

    pub fn with_config(nodes: Vec<Node>, config: SchedulerConfig, job_prefix: &str) -> Self {
        Self {
            config,
            job_prefix: job_prefix.to_owned(),
            clock: 0,
            nodes,
            jobs: BTreeMap::new(),
            queue: VecDeque::new(),
            running: Vec::new(),
            event_log: Vec::new(),
            next_seq: 0,
        }
    }

    /// Starts the clock at `clock` instead of zero.
    pub fn starting_at(mut self, clock: u64) -> Self {
        self.clock = clock;
        self
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn config(&self) -> SchedulerConfig {
        self.config
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn job(&self, id: &JobId) -> Option<&Job> {
        self.jobs.get(id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &Job> {
        self.jobs.values()
    }

    pub fn queue(&self) -> impl Iterator<Item = &JobId> {
        self.queue.iter()
    }

    pub fn running(&self) -> &[JobId] {
        &self.running
    }

    pub fn event_log(&self) -> &[Event] {
        &self.event_log
    }

    pub fn total_cores(&self) -> u64 {
        self.nodes.iter().map(|n| n.cores as u64).sum()
    }

    pub fn allocated_cores(&self) -> u64 {
        self.nodes.iter().map(|n| n.allocated_cores as u64).sum()
    }

    pub fn submit_job(&mut self, mut spec: JobSpec) -> Result<JobId, SchedError> {
        if spec.nodes_requested == 0 || spec.cores_per_node == 0 {
            return Err(SchedError::InvalidSpec(
                "nodes_requested and cores_per_node must be at least 1".into(),
            ));
        }
        let max = self.config.max_walltime;
        let capped = spec.kind == JobKind::Batch || self.config.cap_service_jobs;
        match spec.walltime {
            Walltime::Ticks(0) => {
                return Err(SchedError::InvalidSpec("walltime must be positive".into()))
            }
            Walltime::Ticks(t) if capped && t > max => {
                return Err(SchedError::WalltimeExceeded {
                    requested: t.to_string(),
                    max,
                })
            }
            Walltime::Unlimited if spec.kind == JobKind::Batch => {
                return Err(SchedError::WalltimeExceeded {
                    requested: "unlimited".into(),
                    max,
                })
            }
            Walltime::Unlimited if capped => spec.walltime = Walltime::Ticks(max),
            _ => {}
        }
        if spec.runtime_ticks == Some(0) {
            return Err(SchedError::InvalidSpec("runtime must be positive".into()));
        }
        let eligible = self
            .nodes
            .iter()
            .filter(|n| !n.down && n.cores >= spec.cores_per_node)
            .count();
        if (eligible as u64) < spec.nodes_requested as u64 {
            return Err(SchedError::CapacityExceeded {
                nodes: spec.nodes_requested,
                cores: spec.cores_per_node,
            });
        }

        let seq = self.next_seq;
        self.next_seq += 1;
        let id = JobId(format!("{}-{:06}", self.job_prefix, seq + 1));
        self.jobs.insert(
            id.clone(),
            Job {
                id: id.clone(),
                spec,
                state: JobState::Queued,
                allocated_nodes: Vec::new(),
                submit_tick: self.clock,
                start_tick: None,
                end_tick: None,
                seq,
            },
        );
        self.queue.push_back(id.clone());
        Ok(id)
    }

    /// Advances the clock by `n` ticks and returns the events emitted.
    pub fn tick(&mut self, n: u64) -> Vec<Event> {
        let first = self.event_log.len();
        for _ in 0..n {
            self.clock += 1;
            self.retire_finished();
            self.start_queued();
        }
        self.event_log[first..].to_vec()
    }

    fn retire_finished(&mut self) {
        let clock = self.clock;
        let mut finished = Vec::new();
        for id in &self.running {
            let job = &self.jobs[id];
            let elapsed = clock - job.start_tick.expect("running job has start tick");
            if job.spec.runtime_ticks.is_some_and(|r| elapsed >= r) {
                finished.push((id.clone(), JobState::Completed));
            } else if matches!(job.spec.walltime, Walltime::Ticks(w) if elapsed >= w) {
                finished.push((id.clone(), JobState::Expired));
            }
        }
        for (id, state) in finished {
            self.finish(&id, state);
        }
    }

    fn start_queued(&mut self) {
        let mut still_queued = VecDeque::with_capacity(self.queue.len());
        while let Some(id) = self.queue.pop_front() {
            let spec = self.jobs[&id].spec.clone();
            match self.place(&spec) {
                Some(picked) => self.start(&id, picked),
                None => still_queued.push_back(id),
            }
        }
        self.queue = still_queued;
    }

    fn place(&self, spec: &JobSpec) -> Option<Vec<usize>> {
        let picked: Vec<usize> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.fits(spec))
            .map(|(i, _)| i)
            .take(spec.nodes_requested as usize)
            .collect();
        (picked.len() == spec.nodes_requested as usize).then_some(picked)
    }

    fn start(&mut self, id: &JobId, picked: Vec<usize>) {
        let job = self.jobs.get_mut(id).expect("queued job exists");
        for &i in &picked {
            let node = &mut self.nodes[i];
            node.allocated_cores += job.cores_on_node(node);
            node.exclusive |= job.spec.exclusive;
            job.allocated_nodes.push(node.id.clone());
        }
        job.state = JobState::Running;
        job.start_tick = Some(self.clock);
        self.running.push(id.clone());
        self.event_log.push(Event {
            tick: self.clock,
            kind: EventKind::Start,
            job: id.clone(),
        });
    }

    fn release(&mut self, id: &JobId) {
        let job = &self.jobs[id];
        for node_id in &job.allocated_nodes {
            if let Some(node) = self.nodes.iter_mut().find(|n| &n.id == node_id) {
                node.allocated_cores -= job.cores_on_node(node);
                if job.spec.exclusive {
                    node.exclusive = false;
                }
            }
        }
        self.running.retain(|r| r != id);
    }

    fn finish(&mut self, id: &JobId, state: JobState) {
        let was_running = self.jobs[id].state == JobState::Running;
        if was_running {
            self.release(id);
        } else {
            self.queue.retain(|q| q != id);
        }
        let job = self.jobs.get_mut(id).expect("job exists");
        job.state = state;
        job.end_tick = Some(self.clock);
        let kind = match state {
            JobState::Completed => EventKind::Complete,
            JobState::Expired => EventKind::Expire,
            JobState::Cancelled => EventKind::Cancel,
            JobState::Queued | JobState::Running => unreachable!("not a terminal state"),
        };
        self.event_log.push(Event {
            tick: self.clock,
            kind,
            job: id.clone(),
        });
    }

    pub fn cancel_job(&mut self, id: &JobId) -> Result<Job, SchedError> {
        let job = self
            .jobs
            .get(id)
            .ok_or_else(|| SchedError::NotFound(id.clone()))?;
        if job.state.is_terminal() {
            return Err(SchedError::AlreadyTerminal(id.clone()));
        }
        self.finish(id, JobState::Cancelled);
        Ok(self.jobs[id].clone())
    }

    pub fn add_node(&mut self, node: Node) -> Result<(), SchedError> {
        if self.node(&node.id).is_some() {
            return Err(SchedError::DuplicateNode(node.id));
        }
        self.nodes.push(node);
        Ok(())
    }

    /// Removes a node, cancelling every running job allocated on it.
    pub fn remove_node(&mut self, id: &NodeId) -> Result<Vec<Event>, SchedError> {
        if self.node(id).is_none() {
            return Err(SchedError::UnknownNode(id.clone()));
        }
        let first = self.event_log.len();
        let victims: Vec<JobId> = self
            .running
            .iter()
            .filter(|j| self.jobs[*j].allocated_nodes.contains(id))
            .cloned()
            .collect();
        for v in victims {
            self.finish(&v, JobState::Cancelled);
        }
        self.nodes.retain(|n| &n.id != id);
        Ok(self.event_log[first..].to_vec())
    }

    /// Marks an idle node down (or back up). Down nodes take no new work.
    pub fn set_node_down(&mut self, id: &NodeId, down: bool) -> Result<(), SchedError> {
        let node = self
            .nodes
            .iter_mut()
            .find(|n| &n.id == id)
            .ok_or_else(|| SchedError::UnknownNode(id.clone()))?;
        if down && node.allocated_cores > 0 {
            return Err(SchedError::NodeBusy(id.clone()));
        }
        node.down = down;
        Ok(())
    }

    pub fn write_event_log<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_events(&self.event_log, out)
    }
}

pub fn write_events<W: Write>(events: &[Event], mut out: W) -> std::io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
