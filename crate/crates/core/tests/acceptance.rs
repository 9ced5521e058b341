//! Acceptance suite. Prints one PASS/FAIL line per criterion with its
//! runtime against the budget, and exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::time::{Duration, Instant};

use enclave_core::audit::{self, AuditChain, Category, ChainStatus, Sink};
use enclave_core::bench::{self, cg, comm, io, BenchmarkResult, Kernel, Metric};
use enclave_core::flows::{FlowError, RequestState, Session};
use enclave_core::hostsched::{JobSpec, Scheduler, Topology, Walltime};
use enclave_core::ids::{EnvId, EnvKind, HostId, OwnerId, Phase, ProjectId, Tenant};
use enclave_core::netmodel::{self, Channel, HostRole, Membership, PartitionKind, Violation};
use enclave_core::platform::{Platform, PlatformConfig, PlatformError, PlatformEvent};
use enclave_core::provisioner::EnvSize;
use enclave_core::scenario;
use enclave_core::securefs::{layout, FsPath, NodeKind, Perms, Principal, StorageClass};
use enclave_core::{CrSolver, Triad, Triad32};
use hmac::{Hmac, KeyInit, Mac};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::Sha256;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Criterion {
    id: u8,
    title: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            title: "efficiency table reproduction",
            budget: Duration::from_secs(1),
            run: c1_table,
        },
        Criterion {
            id: 2,
            title: "implied IOR write baseline",
            budget: Duration::from_secs(1),
            run: c2_implied_baseline,
        },
        Criterion {
            id: 3,
            title: "isolation suite with injected edges",
            budget: Duration::from_secs(30),
            run: c3_isolation,
        },
        Criterion {
            id: 4,
            title: "join leaves other tenants' reachability unchanged",
            budget: Duration::from_secs(10),
            run: c4_join,
        },
        Criterion {
            id: 5,
            title: "environment lifecycle",
            budget: Duration::from_secs(10),
            run: c5_lifecycle,
        },
        Criterion {
            id: 6,
            title: "TTP linkage oracle and identifier hygiene",
            budget: Duration::from_secs(60),
            run: c6_linkage,
        },
        Criterion {
            id: 7,
            title: "export state machine",
            budget: Duration::from_secs(10),
            run: c7_export,
        },
        Criterion {
            id: 8,
            title: "audit tamper detection",
            budget: Duration::from_secs(10),
            run: c8_tamper,
        },
        Criterion {
            id: 9,
            title: "kernel correctness",
            budget: Duration::from_secs(60),
            run: c9_kernels,
        },
        Criterion {
            id: 10,
            title: "scenario corpus determinism",
            budget: Duration::from_secs(30),
            run: c10_scenarios,
        },
    ];
    let only: Option<u8> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_none_or(|o| o == c.id)) {
        let start = Instant::now();
        let result = std::panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let result = match result {
            Ok(d) if start.elapsed() > c.budget => Err(format!("{d}; over the {}s budget", c.budget.as_secs())),
            r => r,
        };
        let budget = c.budget.as_secs();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {} ({secs:.2}s of {budget}s): {detail}", c.id, c.title),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {} ({secs:.2}s of {budget}s): {why}", c.id, c.title);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1, 2

/// Efficiencies as printed in the reference table, in row order.
const REFERENCE_TABLE: [(Kernel, u32, &str); 19] = [
    (Kernel::StreamTriad, 1, "0.98"),
    (Kernel::Cg, 1, "0.96"),
    (Kernel::Cg, 2, "0.97"),
    (Kernel::Cg, 4, "0.97"),
    (Kernel::Cg, 8, "0.96"),
    (Kernel::Latency, 1, "0.95"),
    (Kernel::Latency, 2, "0.92"),
    (Kernel::AllReduce, 1, "0.95"),
    (Kernel::AllReduce, 2, "0.98"),
    (Kernel::AllReduce, 4, "0.96"),
    (Kernel::AllReduce, 8, "0.92"),
    (Kernel::IoWrite, 1, "0.98"),
    (Kernel::IoWrite, 2, "0.65"),
    (Kernel::IoWrite, 4, "0.63"),
    (Kernel::IoWrite, 8, "0.55"),
    (Kernel::IoRead, 1, "1.01"),
    (Kernel::IoRead, 2, "0.96"),
    (Kernel::IoRead, 4, "0.98"),
    (Kernel::IoRead, 8, "0.94"),
];

fn plain_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fixtures written to disk and read back, as `bench report` does.
fn fixture_files() -> (Vec<BenchmarkResult>, Vec<BenchmarkResult>) {
    let dir = tempfile::tempdir().expect("tempdir");
    let (base, cand) = bench::fixtures::table1();
    let (b, c) = (dir.path().join("b.json"), dir.path().join("c.json"));
    std::fs::write(&b, serde_json::to_string(&base).unwrap()).unwrap();
    std::fs::write(&c, serde_json::to_string(&cand).unwrap()).unwrap();
    (
        enclave_core::commands::load_results(&b).unwrap(),
        enclave_core::commands::load_results(&c).unwrap(),
    )
}

fn c1_table() -> Check {
    let (base, cand) = fixture_files();
    let rows = bench::report(&base, &cand).map_err(|e| e.to_string())?;
    ensure(rows.len() == REFERENCE_TABLE.len(), || format!("{} rows", rows.len()))?;
    let text = bench::render_text(&rows);
    let printed: Vec<&str> = text.lines().skip(1).map(|l| l.split_whitespace().last().unwrap()).collect();
    let json: serde_json::Value = serde_json::from_str(&bench::render_json(&rows)).unwrap();
    for (i, (kernel, nodes, want)) in REFERENCE_TABLE.iter().enumerate() {
        let row = &rows[i];
        ensure(row.name == *kernel && row.config.nodes == *nodes, || {
            format!("row {i} is {} {}", row.name, row.config)
        })?;
        // Independent ratio of means, inverted for time metrics.
        let (mb, mc) = (plain_mean(&base[i].runs), plain_mean(&cand[i].runs));
        let oracle = if base[i].metric == Metric::Microseconds { mb / mc } else { mc / mb };
        ensure(format!("{oracle:.2}") == *want, || format!("row {i}: oracle {oracle:.4} vs {want}"))?;
        ensure(printed[i] == *want, || format!("row {i}: printed {} vs {want}", printed[i]))?;
        let j = json["rows"][i]["efficiency"].as_f64().unwrap();
        ensure(format!("{j:.2}") == *want, || format!("row {i}: json {j} vs {want}"))?;
    }
    Ok(format!("{} rows match at 2 decimals in text and JSON", rows.len()))
}

fn c2_implied_baseline() -> Check {
    let (base, cand) = fixture_files();
    let i = REFERENCE_TABLE
        .iter()
        .position(|(k, n, _)| *k == Kernel::IoWrite && *n == 8)
        .unwrap();
    let cand_mean = plain_mean(&cand[i].runs);
    ensure((cand_mean - 11622.0).abs() < 1e-6, || format!("candidate mean {cand_mean}"))?;
    let rows = bench::report(&base, &cand).map_err(|e| e.to_string())?;
    let printed: f64 = rows[i].rounded().parse().unwrap();
    let implied = bench::implied_baseline(cand_mean, printed, Metric::MBps);
    let oracle = 11622.0 / 0.55;
    ensure((implied - oracle).abs() < 1e-9, || format!("implied {implied} vs {oracle}"))?;
    ensure((implied - 21131.0).abs() <= 40.0, || format!("implied {implied}"))?;
    let f32_implied = bench::implied_baseline(11622.0f32, 0.55f32, Metric::MBps);
    ensure((f32_implied - 21131.0).abs() <= 40.0, || format!("f32 implied {f32_implied}"))?;
    Ok(format!("11622 / {printed:.2} = {implied:.1} MB/s"))
}

// ---------------------------------------------------------------- 3, 4

fn proj(i: usize) -> ProjectId {
    format!("p{i}").as_str().into()
}

fn owner(i: usize) -> OwnerId {
    format!("o{i}").as_str().into()
}

fn big_config(seed: u64) -> PlatformConfig {
    PlatformConfig {
        topology: Topology {
            nodes: 64,
            cores: 32,
            memory_gb: 256,
        },
        seed,
        ..PlatformConfig::default()
    }
}

/// A random platform: 1-5 projects with 1-8 environments each, mixing
/// running, joined, half-provisioned, pending and destroyed environments,
/// plus one data-manager environment so every state has two tenants.
fn random_world(rng: &mut ChaCha8Rng) -> (Platform, usize) {
    let mut p = Platform::new(big_config(rng.gen())).unwrap();
    let projects = rng.gen_range(1..=5);
    p.create_owner(&owner(0), "system").unwrap();
    p.launch_and_run(Tenant::Owner(owner(0)), EnvKind::DataManager, None, None, "system")
        .unwrap();
    for i in 0..projects {
        let pid = proj(i);
        p.create_project(&pid, "system").unwrap();
        p.launch_and_run(Tenant::Project(pid.clone()), EnvKind::Work, None, None, "system")
            .unwrap();
        if rng.gen_bool(0.5) {
            p.enroll_vpn(&format!("site-{i}").as_str().into(), &pid, "system").unwrap();
        }
        let envs = rng.gen_range(1..=8);
        for _ in 1..envs {
            let size = EnvSize::new(rng.gen_range(1..=3), 32, 256);
            let tenant = Tenant::Project(pid.clone());
            match rng.gen_range(0..4) {
                0 => {
                    let id = p
                        .launch_and_run(tenant, EnvKind::Compute, Some(size), Some(rng.gen_range(5..=120)), "system")
                        .unwrap();
                    if rng.gen_bool(0.7) {
                        p.join_environments(&id).unwrap();
                    }
                }
                1 => {
                    let id = p
                        .launch_and_run(tenant, EnvKind::Compute, Some(size), None, "system")
                        .unwrap();
                    if rng.gen_bool(0.5) {
                        p.join_environments(&id).unwrap();
                    }
                    p.destroy_environment(&id).unwrap();
                }
                2 => {
                    let id = p.launch_environment(tenant, EnvKind::Compute, Some(size), None, "system").unwrap();
                    p.tick(1);
                    for _ in 0..rng.gen_range(0..=4) {
                        let _ = p.advance_phase(&id);
                    }
                }
                _ => {
                    p.launch_environment(tenant, EnvKind::Compute, Some(size), None, "system").unwrap();
                }
            }
        }
    }
    (p, projects)
}

fn tenant_of(net: &netmodel::NetState, h: &HostId) -> Option<Tenant> {
    net.hosts.get(h).and_then(|r| r.tenant().cloned())
}

fn tenant_vms(net: &netmodel::NetState) -> BTreeMap<Tenant, Vec<HostId>> {
    let mut out: BTreeMap<Tenant, Vec<HostId>> = BTreeMap::new();
    for (h, role) in &net.hosts {
        if let HostRole::Vm { tenant, .. } = role {
            out.entry(tenant.clone()).or_default().push(h.clone());
        }
    }
    out
}

/// Cross-tenant pairs over every channel, by querying the oracle for all
/// host pairs.
fn brute_force_cross_tenant(net: &netmodel::NetState) -> Vec<(HostId, HostId, Channel)> {
    let hosts: Vec<&HostId> = net.hosts.keys().collect();
    let mut out = Vec::new();
    for a in &hosts {
        for b in &hosts {
            let (ta, tb) = (tenant_of(net, a), tenant_of(net, b));
            if ta.is_none() || tb.is_none() || ta == tb {
                continue;
            }
            for ch in Channel::ALL {
                if net.reachable(a, b, ch).unwrap() {
                    out.push(((*a).clone(), (*b).clone(), ch));
                }
            }
        }
    }
    out
}

fn inject(net: &mut netmodel::NetState, a: &HostId, b: &HostId, ch: Channel) {
    match ch {
        Channel::OverlayEthernet => {
            let ov = net.overlays.values_mut().find(|o| o.members.contains(a)).unwrap();
            ov.members.insert(b.clone());
        }
        Channel::IbCompute => {
            let t = tenant_of(net, a).unwrap();
            let part = netmodel::compute_partition_id(&t);
            net.ensure_partition(&part, PartitionKind::ProjectCompute, Some(t));
            net.set_membership(&part, a, Membership::Full).unwrap();
            net.set_membership(&part, b, Membership::Full).unwrap();
        }
        Channel::IbStorage => {
            net.set_membership(netmodel::STORAGE_PARTITION, a, Membership::Full).unwrap();
            net.set_membership(netmodel::STORAGE_PARTITION, b, Membership::Limited).unwrap();
        }
        Channel::Vpn => {
            net.vpn_edges.insert((a.clone(), b.clone()));
        }
        Channel::Mgmt => net.add_mgmt_edge(a, b, true).unwrap(),
    }
}

fn detected(v: &[Violation], a: &HostId, b: &HostId, ch: Channel) -> bool {
    v.iter().any(|x| match x {
        Violation::Unallowed { channel, .. } => *channel == ch && x.names_pair(a, b),
        Violation::InvariantBreach { subject, .. } => ch == Channel::Vpn && *subject == format!("{a}->{b}"),
    })
}

fn c3_isolation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut hosts, mut injected) = (0, 0);
    for s in 0..100 {
        let (p, _) = random_world(&mut rng);
        let phases = p.phases();
        let clean = p.verify_isolation();
        ensure(clean.is_empty(), || format!("state {s}: {} violation(s), first {}", clean.len(), clean[0]))?;
        let leaks = brute_force_cross_tenant(&p.net);
        ensure(leaks.is_empty(), || format!("state {s}: oracle finds {:?}", leaks[0]))?;
        hosts += p.net.hosts.len();
        let by_tenant = tenant_vms(&p.net);
        let tenants: Vec<&Tenant> = by_tenant.keys().collect();
        ensure(tenants.len() >= 2, || format!("state {s} has one tenant"))?;
        for _ in 0..20 {
            let pair: Vec<&&Tenant> = tenants.choose_multiple(&mut rng, 2).collect();
            let a = by_tenant[*pair[0]].choose(&mut rng).unwrap().clone();
            let b = by_tenant[*pair[1]].choose(&mut rng).unwrap().clone();
            let ch = *Channel::ALL.choose(&mut rng).unwrap();
            let mut net = p.net.clone();
            inject(&mut net, &a, &b, ch);
            ensure(net.reachable(&a, &b, ch).unwrap(), || format!("injection {a}-{b} over {ch} had no effect"))?;
            let found = netmodel::verify_isolation(&net, &phases);
            ensure(detected(&found, &a, &b, ch), || format!("state {s}: injected {a}-{b} over {ch} not reported"))?;
            injected += 1;
        }
    }
    Ok(format!("100 clean states ({hosts} hosts), {injected}/2000 injected edges detected"))
}

fn c4_join() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked_pairs = 0;
    for s in 0..50 {
        let (mut p, projects) = random_world(&mut rng);
        let pid = proj(rng.gen_range(0..projects));
        let size = EnvSize::new(rng.gen_range(1..=3), 32, 256);
        let compute = p
            .launch_and_run(Tenant::Project(pid.clone()), EnvKind::Compute, Some(size), None, "system")
            .map_err(|e| format!("state {s}: {e}"))?;
        let mine = Tenant::Project(pid.clone());
        let net = p.net.clone();
        let outside = |h: &HostId| tenant_of(&net, h).as_ref() != Some(&mine);
        let before = p.net.reachability_relation(outside);
        p.join_environments(&compute).map_err(|e| format!("state {s}: {e}"))?;
        let after = p.net.reachability_relation(outside);
        ensure(before == after, || format!("state {s}: relation changed outside {pid}"))?;
        ensure(p.verify_isolation().is_empty(), || format!("state {s}: violations after join"))?;
        ensure(
            p.net.reachable(&p.environment(&compute).unwrap().vms[0].id, &p.active_work_env(&pid).unwrap().vms[0].id, Channel::OverlayEthernet).unwrap(),
            || format!("state {s}: join did not connect"),
        )?;
        checked_pairs += before.len();
    }
    Ok(format!("50 joins, {checked_pairs} outside pairs unchanged"))
}

// ---------------------------------------------------------------- 5

fn c5_lifecycle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut inner_events = 0;
    let mut destroyed_files = 0;
    for s in 0..60 {
        let mut p = Platform::new(big_config(s)).unwrap();
        let projects = rng.gen_range(1..=3);
        let mut envs = Vec::new();
        for i in 0..projects {
            p.create_project(&proj(i), "system").unwrap();
            envs.push((i, p.launch_environment(Tenant::Project(proj(i)), EnvKind::Work, None, None, "system").unwrap()));
        }
        // Interleave phase steps, ticks, submissions and compute launches.
        for _ in 0..60 {
            let (i, env) = envs.choose(&mut rng).unwrap().clone();
            match rng.gen_range(0..6) {
                0 | 1 => {
                    let _ = p.advance_phase(&env);
                }
                2 => {
                    p.tick(rng.gen_range(1..=3));
                }
                3 | 4 => {
                    let spec = JobSpec::batch(1, rng.gen_range(1..=4), rng.gen_range(1..=5)).with_runtime(rng.gen_range(1..=4));
                    match p.submit_inner_job(&proj(i), spec) {
                        Ok(_) => {}
                        Err(e) => ensure(
                            ["EnvNotRunning", "NoWorkEnv"].contains(&e.kind().as_str()),
                            || format!("unexpected submit error {e}"),
                        )?,
                    }
                }
                _ => {
                    let _ = p.launch_and_run(Tenant::Project(proj(i)), EnvKind::Compute, None, Some(rng.gen_range(1..=6)), "system");
                }
            }
        }
        let mut locked = BTreeSet::new();
        for ev in &p.events {
            match ev {
                PlatformEvent::Phase { env, phase: Phase::LockedDown, .. } => {
                    locked.insert(env.clone());
                }
                PlatformEvent::Inner { env, .. } => {
                    ensure(locked.contains(env), || format!("run {s}: inner event for {env} before lockdown"))?;
                    inner_events += 1;
                }
                _ => {}
            }
        }

        // Destroy a live environment and diff the filesystem.
        let live: Vec<EnvId> = p
            .environments()
            .filter(|e| e.kind != EnvKind::Management && e.is_active() && !e.vms.is_empty())
            .map(|e| e.id.clone())
            .collect();
        let Some(target) = live.choose(&mut rng).cloned() else { continue };
        for (pass, e) in p.environments().cloned().collect::<Vec<_>>().iter().enumerate() {
            if !live.contains(&e.id) {
                continue;
            }
            let Tenant::Project(pid) = e.tenant.clone() else { continue };
            let r = Principal::researcher(pid.clone(), "r");
            for vm in &e.vms {
                let scratch = p.vm_scratch(e, &vm.id).unwrap();
                for k in 0..rng.gen_range(0..4) {
                    p.write_file(&r, &scratch.join(&format!("t{pass}-{k}")), vec![k as u8]).unwrap();
                }
            }
            p.write_file(&r, &layout::project_data(&pid).join(&format!("keep{pass}")), vec![1]).unwrap();
        }
        let doomed: Vec<EnvId> = p
            .environments()
            .filter(|e| e.id == target || (e.attached_to.as_ref() == Some(&target) && e.is_active()))
            .map(|e| e.id.clone())
            .collect();
        let before = p.fs.snapshot();
        let mut expected = BTreeSet::new();
        for id in &doomed {
            let e = p.environment(id).unwrap().clone();
            for vm in &e.vms {
                let root = p.vm_scratch(&e, &vm.id).unwrap();
                expected.extend(
                    before
                        .iter()
                        .filter(|(path, (class, _))| *class == StorageClass::VmEphemeral && path.is_within(&root))
                        .map(|(path, _)| path.clone()),
                );
            }
        }
        p.destroy_environment(&target).map_err(|e| format!("run {s}: {e}"))?;
        let after = p.fs.snapshot();
        let gone: BTreeSet<FsPath> = before.keys().filter(|k| !after.contains_key(*k)).cloned().collect();
        let expected_files: BTreeSet<FsPath> = expected
            .iter()
            .filter(|path| p.fs.node(path).is_none_or(|n| n.kind == NodeKind::File))
            .cloned()
            .collect();
        ensure(gone.is_superset(&expected_files), || format!("run {s}: ephemeral files left behind"))?;
        ensure(gone.iter().all(|g| expected.contains(g)), || {
            format!("run {s}: removed non-ephemeral {:?}", gone.difference(&expected).next())
        })?;
        ensure(after.iter().all(|(k, v)| before.get(k) == Some(v)), || format!("run {s}: surviving file changed"))?;
        destroyed_files += expected_files.len();
    }

    // Five-day cap on environments, inner jobs and the bare scheduler.
    let mut p = Platform::new(PlatformConfig::default()).unwrap();
    p.create_project(&proj(0), "system").unwrap();
    p.launch_and_run(Tenant::Project(proj(0)), EnvKind::Work, None, None, "system").unwrap();
    let over = p.launch_environment(Tenant::Project(proj(0)), EnvKind::Compute, None, Some(121), "system");
    ensure(over.as_ref().is_err_and(|e| e.kind() == "WalltimeExceeded"), || format!("env 121: {over:?}"))?;
    p.launch_environment(Tenant::Project(proj(0)), EnvKind::Compute, None, Some(120), "system")
        .map_err(|e| format!("env 120: {e}"))?;
    let over = p.submit_inner_job(&proj(0), JobSpec::batch(1, 1, 121));
    ensure(over.as_ref().is_err_and(|e| e.kind() == "WalltimeExceeded"), || format!("job 121: {over:?}"))?;
    p.submit_inner_job(&proj(0), JobSpec::batch(1, 1, 120)).map_err(|e| format!("job 120: {e}"))?;
    let mut sched = Scheduler::from_topology(&Topology::default());
    ensure(sched.submit_job(JobSpec::batch(1, 1, 121)).is_err(), || "host 121 admitted".into())?;
    ensure(sched.submit_job(JobSpec::batch(1, 1, 120)).is_ok(), || "host 120 rejected".into())?;
    ensure(
        matches!(JobSpec::batch(1, 1, 120).walltime, Walltime::Ticks(120)),
        || "walltime encoding".into(),
    )?;
    Ok(format!(
        "60 runs, {inner_events} inner events after lockdown, {destroyed_files} ephemeral files removed exactly; 121 rejected, 120 admitted"
    ))
}

// ---------------------------------------------------------------- 6

fn oracle_pseudonym(secret: &[u8], salt: &[u8], id: &str) -> String {
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(secret).unwrap();
    mac.update(salt);
    mac.update(id.as_bytes());
    hex::encode(mac.finalize().into_bytes())
}

struct Side {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Side {
    fn random(rng: &mut ChaCha8Rng, rows: usize, pool: usize, cols: &[&str]) -> Self {
        let mut header = vec!["link_id".to_owned()];
        header.extend(cols.iter().map(|c| c.to_string()));
        let rows = (0..rows)
            .map(|_| {
                let mut r = vec![format!("ID{:06}", rng.gen_range(0..pool))];
                r.extend(cols.iter().map(|_| rng.gen_range(0..1000).to_string()));
                r
            })
            .collect();
        Self { header, rows }
    }

    fn csv(&self) -> Vec<u8> {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out.into_bytes()
    }
}

fn parse_csv(bytes: &[u8]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rd = csv::Reader::from_reader(bytes);
    let header = rd.headers().unwrap().iter().map(str::to_owned).collect();
    let rows = rd
        .records()
        .map(|r| r.unwrap().iter().map(str::to_owned).collect())
        .collect();
    (header, rows)
}

fn c6_linkage() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut p = Platform::new(PlatformConfig::default()).unwrap();
    let pid = proj(1);
    let oid = owner(1);
    p.create_project(&pid, "system").unwrap();
    p.create_owner(&oid, "system").unwrap();
    p.launch_and_run(Tenant::Project(pid.clone()), EnvKind::Work, None, None, "system").unwrap();
    let site: HostId = "site-a".into();
    p.enroll_vpn(&site, &pid, "system").unwrap();
    let dm = Principal::data_manager(oid.clone(), "dana");
    let alice = Principal::researcher(pid.clone(), "alice");
    let session = Session {
        principal: alice.clone(),
        authenticated: true,
        site,
    };
    let key_id = p.projects[&pid].key_id.clone();
    let secret = p.flows.keys.get(&key_id, &Principal::ttp()).unwrap().secret.clone();
    ensure(p.flows.keys.get(&key_id, &alice).is_err(), || "researcher can read the linkage key".into())?;

    let mut raw_ids = BTreeSet::new();
    let mut total_rows = 0usize;
    let mut max_rows = 0usize;
    for i in 0..200 {
        // Log-uniform sizes up to 10^4, with the last pair at the maximum.
        let size = |rng: &mut ChaCha8Rng| if i == 199 { 10_000 } else { 10f64.powf(rng.gen_range(0.0..4.0)) as usize };
        let (n, m) = (size(&mut rng), size(&mut rng));
        let pool = (n.max(m) as f64 * rng.gen_range(0.5..2.0)).ceil() as usize;
        let owner_side = Side::random(&mut rng, n, pool, &["age", "bmi"]);
        let project_side = Side::random(&mut rng, m, pool, &["snp1", "snp2", "snp3"]);
        for r in owner_side.rows.iter().chain(&project_side.rows) {
            raw_ids.insert(r[0].clone());
        }
        max_rows = max_rows.max(n).max(m);

        let of = p.stage_owner_data(&dm, &oid, &format!("o{i}.csv"), owner_side.csv()).map_err(|e| e.to_string())?;
        let pf = p
            .import_via_vpn(&session, project_side.csv(), &layout::project_staging(&pid).join(&format!("p{i}.csv")))
            .map_err(|e| e.to_string())?;
        let out_name = format!("l{i}.csv");
        let out = p.ttp_link(&Principal::ttp(), &of, &pf, &pid, &out_name).map_err(|e| format!("pair {i}: {e}"))?;
        let (header, mut got) = parse_csv(&p.read_file(&alice, &out).map_err(|e| e.to_string())?);

        // Brute-force nested-loop join.
        let salt = format!("{pid}/{out_name}");
        let mut want = Vec::new();
        for o in &owner_side.rows {
            for q in &project_side.rows {
                if o[0] == q[0] {
                    let mut row = vec![oracle_pseudonym(&secret, salt.as_bytes(), &o[0])];
                    row.extend(o[1..].iter().cloned());
                    row.extend(q[1..].iter().cloned());
                    want.push(row);
                }
            }
        }
        let want_header: Vec<String> = ["pseudo_id", "age", "bmi", "snp1", "snp2", "snp3"].map(String::from).to_vec();
        ensure(header == want_header, || format!("pair {i}: header {header:?}"))?;
        got.sort();
        want.sort();
        ensure(got == want, || format!("pair {i}: {} rows vs oracle {}", got.len(), want.len()))?;
        total_rows += want.len();
    }

    // No project-readable file may hold a raw identifier.
    let readers = [alice, Principal::researcher(pid.clone(), "bob")];
    let mut scanned = 0;
    for node in p.fs.nodes().filter(|n| n.kind == NodeKind::File) {
        if !readers.iter().any(|r| node.allows(r, Perms::READ)) {
            continue;
        }
        scanned += 1;
        let text = String::from_utf8_lossy(&node.content);
        let leak = text.split([',', '\n', '\r']).find(|t| raw_ids.contains(*t));
        ensure(leak.is_none(), || format!("{} exposes {}", node.path, leak.unwrap()))?;
    }
    Ok(format!(
        "200 pairs (max {max_rows} rows) match the brute-force join, {total_rows} linked rows; {scanned} project-readable files hold none of {} raw ids",
        raw_ids.len()
    ))
}

// ---------------------------------------------------------------- 7

#[derive(Clone)]
struct ModelReq {
    path: FsPath,
    content: Vec<u8>,
    state: RequestState,
}

fn random_table(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut s = String::from("group,count\n");
    for g in 0..rng.gen_range(1..5) {
        s.push_str(&format!("g{g},{}\n", rng.gen_range(1..40)));
    }
    s.into_bytes()
}

fn c7_export() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut released = 0;
    let mut steps = 0;
    for run in 0..100 {
        let mut p = Platform::new(PlatformConfig::default()).unwrap();
        let pid = proj(0);
        p.create_project(&pid, "system").unwrap();
        p.create_owner(&owner(0), "system").unwrap();
        p.launch_and_run(Tenant::Project(pid.clone()), EnvKind::Work, None, None, "system").unwrap();
        let alice = Principal::researcher(pid.clone(), "alice");
        let dm = Principal::data_manager(owner(0), "rita");
        let files: Vec<FsPath> = (0..3).map(|k| layout::project_data(&pid).join(&format!("t{k}.csv"))).collect();
        let mut contents: BTreeMap<FsPath, Vec<u8>> = BTreeMap::new();
        let mut model: BTreeMap<String, ModelReq> = BTreeMap::new();
        let mut approved_ever = BTreeSet::new();
        for _ in 0..50 {
            steps += 1;
            let ids: Vec<String> = model.keys().cloned().collect();
            match rng.gen_range(0..6) {
                0 => {
                    let f = files.choose(&mut rng).unwrap().clone();
                    let bytes = random_table(&mut rng);
                    p.write_file(&alice, &f, bytes.clone()).unwrap();
                    contents.insert(f, bytes);
                }
                1 => {
                    let f = files.choose(&mut rng).unwrap().clone();
                    match p.request_export(&alice, &f) {
                        Ok(req) => {
                            ensure(req.state == RequestState::Submitted, || "new request not submitted".into())?;
                            model.insert(
                                req.id.clone(),
                                ModelReq {
                                    path: f.clone(),
                                    content: contents[&f].clone(),
                                    state: RequestState::Submitted,
                                },
                            );
                        }
                        Err(_) => ensure(!contents.contains_key(&f), || format!("request on existing {f} failed"))?,
                    }
                }
                2 | 3 => {
                    let Some(id) = ids.choose(&mut rng) else { continue };
                    let approve = rng.gen_bool(0.6);
                    let reviewer = if rng.gen_bool(0.85) { &dm } else { &alice };
                    let r = p.review_export(reviewer, id, approve);
                    let m = model.get_mut(id).unwrap();
                    match (&r, reviewer == &alice, m.state) {
                        (Err(PlatformError::Flow(FlowError::NotReviewer(_))), true, _) => {}
                        (Ok(_), false, RequestState::Submitted) => {
                            m.state = if approve { RequestState::Approved } else { RequestState::Rejected };
                            if approve {
                                approved_ever.insert(id.clone());
                            }
                        }
                        (Err(PlatformError::Flow(FlowError::WrongState { .. })), false, s) if s != RequestState::Submitted => {}
                        _ => return Err(format!("run {run}: review {id} by {reviewer} in {:?} gave {r:?}", m.state)),
                    }
                }
                _ => {
                    let Some(id) = ids.choose(&mut rng) else { continue };
                    let m = model.get_mut(id).unwrap();
                    let current = contents[&m.path].clone();
                    let before = p.flows.outbox.len();
                    let r = p.release_export("system", id);
                    match r {
                        Ok(rec) => {
                            ensure(m.state == RequestState::Approved && approved_ever.contains(id), || {
                                format!("run {run}: released {id} from {:?}", m.state)
                            })?;
                            ensure(rec.bytes == current && rec.bytes == m.content, || {
                                format!("run {run}: released bytes differ from the project copy")
                            })?;
                            m.state = RequestState::Released;
                            released += 1;
                        }
                        Err(e) => {
                            ensure(p.flows.outbox.len() == before, || "failed release wrote outbox".into())?;
                            let ok = match m.state {
                                RequestState::Approved => current != m.content && e.kind() == "ArtifactModified",
                                _ => e.kind() == "WrongState",
                            };
                            ensure(ok, || format!("run {run}: release {id} in {:?} gave {e}", m.state))?;
                        }
                    }
                }
            }
        }
        for rec in &p.flows.outbox {
            ensure(approved_ever.contains(&rec.request_id), || {
                format!("run {run}: outbox holds unapproved {}", rec.request_id)
            })?;
            ensure(model[&rec.request_id].content == rec.bytes, || "outbox bytes differ".into())?;
        }
    }
    Ok(format!("100 sequences, {steps} commands, {released} releases all previously approved and byte-identical"))
}

// ---------------------------------------------------------------- 8

fn random_chain(rng: &mut ChaCha8Rng) -> AuditChain {
    let sink = if rng.gen_bool(0.5) { Sink::ManagementSyslog } else { Sink::FilesystemLog };
    let cats: Vec<Category> = Category::ALL.into_iter().filter(|c| c.sink() == sink).collect();
    let mut chain = AuditChain::new(sink);
    let mut tick = 0;
    for _ in 0..rng.gen_range(1..=500) {
        tick += rng.gen_range(0..3);
        let actor = format!("actor{}", rng.gen_range(0..5));
        let detail = format!("event {}", rng.gen::<u32>());
        chain.append(tick, *cats.choose(rng).unwrap(), actor, detail).unwrap();
    }
    chain
}

fn c8_tamper() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut exact = 0;
    for t in 0..1000 {
        let mut chain = random_chain(&mut rng);
        ensure(chain.verify() == ChainStatus::Ok, || format!("trial {t}: clean chain fails"))?;
        let i = rng.gen_range(0..chain.len());
        let field = rng.gen_range(0..7);
        let via_json = t % 10 == 0;
        let recs = chain.records_mut_unsealed();
        let r = &mut recs[i];
        match field {
            0 => r.seq += rng.gen_range(1..10),
            1 => r.tick += rng.gen_range(1..10),
            2 => r.category = *Category::ALL.iter().filter(|c| **c != r.category).collect::<Vec<_>>().choose(&mut rng).unwrap().to_owned(),
            3 => r.actor.push('x'),
            4 => r.detail = format!("{} forged", r.detail),
            5 => r.prev_hash[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8),
            _ => r.hash[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8),
        }
        let status = if via_json {
            let mut buf = Vec::new();
            audit::write_jsonl(recs, &mut buf).unwrap();
            audit::verify_records(&audit::read_jsonl(buf.as_slice()).unwrap())
        } else {
            chain.verify()
        };
        match status {
            ChainStatus::FirstBadIndex(j) if j <= i + 1 => exact += usize::from(j == i),
            other => return Err(format!("trial {t}: field {field} at {i} gave {other}")),
        }
    }
    Ok(format!("1000/1000 mutations caught ({exact} at the mutated index)"))
}

// ---------------------------------------------------------------- 9

/// `-Δ` with zero Dirichlet boundary, written out independently.
fn stencil(n: (usize, usize, usize), x: &[f64]) -> Vec<f64> {
    let (nx, ny, nz) = n;
    let at = |i: isize, j: isize, k: isize| -> f64 {
        if i < 0 || j < 0 || k < 0 || i >= nx as isize || j >= ny as isize || k >= nz as isize {
            0.0
        } else {
            x[(k as usize * ny + j as usize) * nx + i as usize]
        }
    };
    let mut out = vec![0.0; nx * ny * nz];
    for k in 0..nz as isize {
        for j in 0..ny as isize {
            for i in 0..nx as isize {
                out[(k as usize * ny + j as usize) * nx + i as usize] = 6.0 * at(i, j, k)
                    - at(i - 1, j, k)
                    - at(i + 1, j, k)
                    - at(i, j - 1, k)
                    - at(i, j + 1, k)
                    - at(i, j, k - 1)
                    - at(i, j, k + 1);
            }
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn c9_kernels() -> Check {
    // Triad: every element is exactly b + q c = 1 + 3 * 2.
    let n = 2_000_000;
    let mut t = Triad::new(n);
    t.sweep(4);
    ensure(t.a.iter().all(|v| *v == 7.0) && t.verify(), || "f64 triad".into())?;
    let mut t = Triad32::new(n);
    t.sweep(3);
    ensure(t.a.iter().all(|v| *v == 7.0f32) && t.verify(), || "f32 triad".into())?;

    // All-reduce: random integer contributions sum exactly on every lane.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for lanes in 2..=16 {
        let contrib: Vec<f64> = (0..lanes).map(|_| rng.gen_range(-1000..1000) as f64).collect();
        let want: f64 = contrib.iter().sum();
        let (held, _) = comm::tree_allreduce(&contrib, 5).map_err(|e| e.to_string())?;
        ensure(held.iter().all(|v| *v == want), || format!("{lanes} lanes: {held:?} vs {want}"))?;
    }
    ensure(comm::measure_allreduce::<f32>(7, 10, 5).is_ok(), || "f32 all-reduce".into())?;

    // I/O: bytes read back equal bytes written.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("io.dat");
    io::measure(&path, 8, 3, io::IoMode::Write, 5).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).unwrap();
    ensure(bytes.len() == 8 * io::MB as usize, || "file length".into())?;
    ensure(bytes.iter().enumerate().all(|(i, b)| *b == io::pattern_byte(i as u64)), || "written bytes".into())?;
    ensure(io::read_verify(&path, 8 * io::MB, 5).map_err(|e| e.to_string())?, || "read-back mismatch".into())?;

    // CG on 16^3 with an independent residual.
    let op = cg::Laplacian7::new(16, 16, 16);
    let (b, _) = cg::manufactured_rhs::<f64>(&op, 16);
    let s = CrSolver::new(op, 1e-6, 200).solve(&b).map_err(|e| e.to_string())?;
    let ax = stencil((16, 16, 16), &s.x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let rel = norm(&r) / norm(&b);
    ensure(s.converged && s.iterations <= 200 && rel < 1e-6, || {
        format!("16^3: {} iterations, residual {rel:e}", s.iterations)
    })?;

    // 8^3 against a dense direct solve.
    let op8 = cg::Laplacian7::new(8, 8, 8);
    let (b8, xs) = cg::manufactured_rhs::<f64>(&op8, 8);
    let nn = op8.rows();
    let dense: Vec<Vec<f64>> = (0..nn)
        .map(|row| {
            let mut e = vec![0.0; nn];
            (0..nn)
                .map(|c| {
                    e[c] = 1.0;
                    let v = stencil((8, 8, 8), &e)[row];
                    e[c] = 0.0;
                    v
                })
                .collect()
        })
        .collect();
    let xd = dense_solve(dense, b8.clone());
    let s8 = CrSolver::new(op8, 1e-6, 200).solve(&b8).map_err(|e| e.to_string())?;
    let diff = s8.x.iter().zip(&xd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let xd_err = xd.iter().zip(&xs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(xd_err < 1e-10, || format!("dense solve error {xd_err:e}"))?;
    ensure(diff < 1e-5, || format!("8^3 CG vs dense: {diff:e}"))?;
    Ok(format!(
        "triad exact, all-reduce exact for 2..16 lanes, I/O round-trip equal, 16^3 residual {rel:.1e} in {} iterations, 8^3 max diff vs dense {diff:.1e}",
        s.iterations
    ))
}

// ---------------------------------------------------------------- 10

fn c10_scenarios() -> Check {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    files.sort();
    for name in [
        "two_project_isolation",
        "compute_on_demand",
        "ttp_gwas_linkage",
        "rejected_export",
        "dm_access_denial",
        "project_wipe",
    ] {
        ensure(files.iter().any(|f| f.file_stem().unwrap() == name), || format!("missing {name}.scn"))?;
    }
    let config = PlatformConfig {
        seed: 2024,
        ..PlatformConfig::default()
    };
    let mut steps = 0;
    for f in &files {
        let first = scenario::run_file(f, config).map_err(|e| e.to_string())?;
        let second = scenario::run_file(f, config).map_err(|e| e.to_string())?;
        ensure(first.passed, || first.render())?;
        ensure(first.render() == second.render(), || format!("{} differs between runs", f.display()))?;
        steps += first.steps.len();
    }
    Ok(format!("{} scenarios, {steps} steps, byte-identical reports", files.len()))
}
