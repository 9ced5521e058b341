//! Scripted scenarios: one command per line with an expected outcome.
//!
//! ```text
//! # comment
//! project create p1                        => ok
//! project create p1                        => error ProjectExists
//! net reach work-002-vm0 fileserver ib-storage => assert eq true
//! audit query --category auth              => assert count 2
//! data read researcher:p1:alice /projects/p1/linked/out.csv => assert contains pseudo_id
//! ```
//!
//! Steps run in order against a fresh platform built from the given
//! config. The first failing step stops the run; the isolation sweep and
//! audit verification always run at the end and must both pass.

use std::fmt::Write as _;
use std::path::Path;

use clap::Parser;
use serde_json::json;
use thiserror::Error;

use crate::audit::ChainStatus;
use crate::commands::{execute, CommandError, StepLine};
use crate::platform::{Platform, PlatformConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    Ok,
    Error(String),
    Eq(String),
    Contains(String),
    Count(usize),
}

impl std::fmt::Display for Expect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expect::Ok => f.write_str("ok"),
            Expect::Error(k) => write!(f, "error {k}"),
            Expect::Eq(s) => write!(f, "assert eq {s}"),
            Expect::Contains(s) => write!(f, "assert contains {s}"),
            Expect::Count(n) => write!(f, "assert count {n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub line: usize,
    pub command: String,
    pub words: Vec<String>,
    pub expect: Expect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub steps: Vec<Step>,
}

/// Shell-style word splitting with single and double quotes.
pub fn split_words(s: &str) -> Option<Vec<String>> {
    shlex::split(s)
}

fn parse_expect(text: &str) -> Result<Expect, String> {
    let text = text.trim();
    let (head, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
    let rest = rest.trim();
    match head {
        "ok" if rest.is_empty() => Ok(Expect::Ok),
        "error" if !rest.is_empty() && !rest.contains(char::is_whitespace) => Ok(Expect::Error(rest.to_owned())),
        "assert" => {
            let (op, arg) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            let arg = arg.trim();
            match op {
                "eq" => Ok(Expect::Eq(arg.to_owned())),
                "contains" if !arg.is_empty() => Ok(Expect::Contains(arg.to_owned())),
                "count" => arg
                    .parse()
                    .map(Expect::Count)
                    .map_err(|_| format!("`assert count` needs a number, got `{arg}`")),
                _ => Err(format!("unknown assertion `{rest}`")),
            }
        }
        _ => Err(format!("expected `ok`, `error <Kind>` or `assert ...`, got `{text}`")),
    }
}

pub fn parse(name: &str, text: &str) -> Result<Scenario, ScenarioError> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |reason: String| ScenarioError::Parse { line, reason };
        let (command, expect) = trimmed
            .rsplit_once("=>")
            .ok_or_else(|| err("missing `=> <expectation>`".into()))?;
        let command = command.trim();
        let words = split_words(command).ok_or_else(|| err("unbalanced quotes".into()))?;
        if words.is_empty() {
            return Err(err("empty command".into()));
        }
        steps.push(Step {
            line,
            command: command.to_owned(),
            words,
            expect: parse_expect(expect).map_err(err)?,
        });
    }
    Ok(Scenario {
        name: name.to_owned(),
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepReport {
    pub line: usize,
    pub command: String,
    pub expect: Expect,
    /// `ok`, or `error <Kind>: <message>`.
    pub outcome: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub steps: Vec<StepReport>,
    pub skipped: usize,
    pub violations: Vec<String>,
    pub syslog: ChainStatus,
    pub fs_log: ChainStatus,
    /// 1-based index of the first failing step.
    pub failed_step: Option<usize>,
    pub passed: bool,
}

fn judge(expect: &Expect, result: &Result<crate::commands::Outcome, CommandError>) -> bool {
    match (expect, result) {
        (Expect::Ok, Ok(_)) => true,
        (Expect::Error(kind), Err(e)) => e.kind() == *kind,
        (Expect::Eq(s), Ok(o)) => o.text.trim() == s,
        (Expect::Contains(s), Ok(o)) => o.text.contains(s.as_str()),
        (Expect::Count(n), Ok(o)) => o.text.lines().filter(|l| !l.trim().is_empty()).count() == *n,
        _ => false,
    }
}

fn describe(result: &Result<crate::commands::Outcome, CommandError>) -> String {
    match result {
        Ok(o) => {
            let first = o.text.lines().next().unwrap_or("");
            if first.is_empty() {
                "ok".into()
            } else {
                format!("ok: {first}")
            }
        }
        Err(e) => {
            let msg = e.to_string();
            format!("error {}: {}", e.kind(), msg.lines().next().unwrap_or(""))
        }
    }
}

pub fn run(platform: &mut Platform, scenario: &Scenario) -> ScenarioReport {
    let mut steps = Vec::new();
    let mut failed_step = None;
    for (i, step) in scenario.steps.iter().enumerate() {
        let result = StepLine::try_parse_from(&step.words)
            .map_err(|e| CommandError::Parse(e.to_string().lines().next().unwrap_or("").to_owned()))
            .and_then(|s| execute(platform, &s.command, true));
        let passed = judge(&step.expect, &result);
        steps.push(StepReport {
            line: step.line,
            command: step.command.clone(),
            expect: step.expect.clone(),
            outcome: describe(&result),
            passed,
        });
        if !passed {
            failed_step = Some(i + 1);
            break;
        }
    }
    let skipped = scenario.steps.len() - steps.len();
    let violations: Vec<String> = platform.verify_isolation().iter().map(|v| v.to_json_line()).collect();
    let (syslog, fs_log) = platform.verify_audit();
    let passed = failed_step.is_none() && violations.is_empty() && syslog.is_ok() && fs_log.is_ok();
    ScenarioReport {
        name: scenario.name.clone(),
        seed: platform.config.seed,
        steps,
        skipped,
        violations,
        syslog,
        fs_log,
        failed_step,
        passed,
    }
}

/// Reads, parses and runs a scenario file against a fresh platform.
pub fn run_file(path: &Path, config: PlatformConfig) -> Result<ScenarioReport, CommandError> {
    let text = std::fs::read_to_string(path).map_err(|e| CommandError::Io(format!("{}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let scenario = parse(&name, &text).map_err(|e| CommandError::Parse(format!("{}: {e}", path.display())))?;
    let mut platform = Platform::new(config)?;
    Ok(run(&mut platform, &scenario))
}

impl ScenarioReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "scenario {} (seed {})", self.name, self.seed).unwrap();
        for (i, s) in self.steps.iter().enumerate() {
            let mark = if s.passed { "pass" } else { "FAIL" };
            writeln!(out, "[{:>3}] {mark} line {}: {}", i + 1, s.line, s.command).unwrap();
            writeln!(out, "      expect {}; got {}", s.expect, s.outcome).unwrap();
        }
        if self.skipped > 0 {
            writeln!(out, "skipped {} step(s)", self.skipped).unwrap();
        }
        if self.violations.is_empty() {
            writeln!(out, "isolation: ok").unwrap();
        } else {
            writeln!(out, "isolation: {} violation(s)", self.violations.len()).unwrap();
            for v in &self.violations {
                writeln!(out, "  {v}").unwrap();
            }
        }
        writeln!(out, "audit: syslog {}, fs {}", self.syslog, self.fs_log).unwrap();
        match (self.passed, self.failed_step) {
            (true, _) => writeln!(out, "result: pass").unwrap(),
            (false, Some(n)) => writeln!(out, "result: FAIL at step {n}").unwrap(),
            (false, None) => writeln!(out, "result: FAIL at final checks").unwrap(),
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "name": self.name,
            "seed": self.seed,
            "steps": self.steps.iter().map(|s| json!({
                "line": s.line,
                "command": s.command,
                "expect": s.expect.to_string(),
                "outcome": s.outcome,
                "passed": s.passed,
            })).collect::<Vec<_>>(),
            "skipped": self.skipped,
            "violations": self.violations,
            "syslog": self.syslog.to_string(),
            "fs_log": self.fs_log.to_string(),
            "failed_step": self.failed_step,
            "passed": self.passed,
        })
    }
}
