//! Job and DAG description validation.
//!
//! A valid description comes back normalized: defaults are written into the
//! ad itself so that validating the result again is a no-op.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classad::{parse_ad, parse_expr, ClassAd, Expr, MatchContext, Value};

pub const DEFAULT_REQUIREMENTS: &str = "other.Status == \"Production\"";
pub const DEFAULT_RANK: &str = "other.FreeCPUs";
pub const DEFAULT_LISTENER_HOST: &str = "127.0.0.1";

/// Attributes the validator understands. Anything else is kept but warned about.
const KNOWN_JOB_ATTRS: &[&str] = &[
    "Type",
    "JobType",
    "Executable",
    "Arguments",
    "StdInput",
    "StdOutput",
    "StdError",
    "InputSandbox",
    "OutputSandbox",
    "Requirements",
    "Rank",
    "UserTags",
    "RetryCount",
    "JobSteps",
    "SubJobs",
    "ListenerHost",
    "ListenerPort",
    "SubmitTo",
    "ChosenSE",
    "ExcludedCEs",
    "AggregateFrom",
    "JobId",
    "Owner",
    "Attempt",
    "RestoreState",
    "StepFirst",
    "StepLast",
    "SandboxFrom",
];

const KNOWN_DAG_ATTRS: &[&str] = &["Type", "Nodes", "Dependencies", "Aggregator", "UserTags"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    Syntax,
    Missing,
    Type,
    Range,
    Path,
    Constraint,
    Unsupported,
    UnknownNode,
    Cycle,
    UnknownAttribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub attribute: String,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, attribute: &str, message: impl Into<String>) -> Violation {
        Violation {
            code,
            attribute: attribute.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.attribute, self.message)
    }
}

/// Every violation found in a description, not just the first.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{} violation(s): {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct Violations(pub Vec<Violation>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JobType {
    Normal,
    Interactive,
    Checkpointable,
    Partitionable,
}

impl JobType {
    pub fn as_str(self) -> &'static str {
        match self {
            JobType::Normal => "Normal",
            JobType::Interactive => "Interactive",
            JobType::Checkpointable => "Checkpointable",
            JobType::Partitionable => "Partitionable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Listener {
    pub host: String,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobDescription {
    /// The normalized ad, defaults included.
    pub ad: ClassAd,
    pub job_type: JobType,
    pub executable: String,
    pub arguments: String,
    pub std_input: Option<String>,
    pub std_output: Option<String>,
    pub std_error: Option<String>,
    pub input_sandbox: Vec<String>,
    pub output_sandbox: Vec<String>,
    pub requirements: Expr,
    pub rank: Expr,
    pub user_tags: BTreeMap<String, String>,
    pub retry_count: u32,
    pub job_steps: Option<u32>,
    pub sub_jobs: Option<u32>,
    pub listener: Option<Listener>,
    /// Non-fatal findings, e.g. unknown attributes.
    pub warnings: Vec<Violation>,
}

impl JobDescription {
    pub fn to_jdl(&self) -> String {
        self.ad.to_pretty()
    }

    /// Resource chosen by the broker, once resolved.
    pub fn submit_to(&self) -> Option<String> {
        self.ad.get_text("SubmitTo")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagDescription {
    pub ad: ClassAd,
    pub nodes: BTreeMap<String, JobDescription>,
    /// (parent, child) pairs.
    pub dependencies: Vec<(String, String)>,
    pub aggregator: Option<String>,
    pub warnings: Vec<Violation>,
}

impl DagDescription {
    pub fn user_tags(&self) -> BTreeMap<String, String> {
        user_tags(&self.ad, &mut Vec::new())
    }

    pub fn parents(&self, node: &str) -> Vec<&str> {
        self.dependencies
            .iter()
            .filter(|(_, c)| c == node)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn children(&self, node: &str) -> Vec<&str> {
        self.dependencies
            .iter()
            .filter(|(p, _)| p == node)
            .map(|(_, c)| c.as_str())
            .collect()
    }

    /// All nodes reachable from `node` along dependency edges.
    pub fn descendants(&self, node: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![node.to_string()];
        while let Some(n) = stack.pop() {
            for c in self.children(&n) {
                if out.insert(c.to_string()) {
                    stack.push(c.to_string());
                }
            }
        }
        out
    }
}

fn eval(ad: &ClassAd, expr: &Expr) -> Value {
    crate::classad::evaluate(expr, &MatchContext::new(ad))
}

fn opt_text(ad: &ClassAd, name: &str, out: &mut Vec<Violation>) -> Option<String> {
    let expr = ad.get(name)?;
    match eval(ad, expr) {
        Value::Text(s) => Some(s),
        other => {
            out.push(Violation::new(
                ViolationCode::Type,
                name,
                format!("must be a string, got {}", other.type_name()),
            ));
            None
        }
    }
}

fn opt_int(ad: &ClassAd, name: &str, min: i64, out: &mut Vec<Violation>) -> Option<i64> {
    let expr = ad.get(name)?;
    match eval(ad, expr) {
        Value::Integer(i) if i >= min => Some(i),
        Value::Integer(i) => {
            out.push(Violation::new(
                ViolationCode::Range,
                name,
                format!("must be >= {min}, got {i}"),
            ));
            None
        }
        other => {
            out.push(Violation::new(
                ViolationCode::Type,
                name,
                format!("must be an integer, got {}", other.type_name()),
            ));
            None
        }
    }
}

fn sandbox_list(ad: &ClassAd, name: &str, out: &mut Vec<Violation>) -> Vec<String> {
    let Some(expr) = ad.get(name) else {
        return Vec::new();
    };
    let items = match eval(ad, expr) {
        Value::List(items) => items,
        Value::Text(s) => vec![Value::Text(s)],
        other => {
            out.push(Violation::new(
                ViolationCode::Type,
                name,
                format!("must be a list of strings, got {}", other.type_name()),
            ));
            return Vec::new();
        }
    };
    let mut paths = Vec::new();
    for item in items {
        match item {
            Value::Text(p) => match check_relative_path(&p) {
                Ok(()) => paths.push(p),
                Err(msg) => out.push(Violation::new(ViolationCode::Path, name, msg)),
            },
            other => out.push(Violation::new(
                ViolationCode::Type,
                name,
                format!("entries must be strings, got {}", other.type_name()),
            )),
        }
    }
    paths
}

/// Sandbox entries are relative paths that stay inside the sandbox.
pub fn check_relative_path(p: &str) -> Result<(), String> {
    if p.is_empty() {
        return Err("empty path".to_string());
    }
    if p.starts_with('/') {
        return Err(format!("'{p}' is absolute; path escapes sandbox"));
    }
    if p.split('/').any(|seg| seg == "..") {
        return Err(format!("'{p}' contains '..'; path escapes sandbox"));
    }
    Ok(())
}

fn user_tags(ad: &ClassAd, out: &mut Vec<Violation>) -> BTreeMap<String, String> {
    let mut tags = BTreeMap::new();
    match ad.get("UserTags") {
        None => {}
        Some(Expr::Record(inner)) => {
            for (name, e) in inner.iter() {
                match eval(inner, e) {
                    Value::Text(s) => {
                        tags.insert(name.to_string(), s);
                    }
                    v @ (Value::Integer(_) | Value::Real(_) | Value::Boolean(_)) => {
                        tags.insert(name.to_string(), v.to_string());
                    }
                    other => out.push(Violation::new(
                        ViolationCode::Type,
                        &format!("UserTags.{name}"),
                        format!("tag values must be scalars, got {}", other.type_name()),
                    )),
                }
            }
        }
        Some(_) => out.push(Violation::new(
            ViolationCode::Type,
            "UserTags",
            "must be a nested ad of name = value pairs",
        )),
    }
    tags
}

fn warn_unknown(ad: &ClassAd, known: &[&str]) -> Vec<Violation> {
    ad.iter()
        .filter(|(n, _)| !known.iter().any(|k| k.eq_ignore_ascii_case(n)))
        .map(|(n, _)| {
            Violation::new(
                ViolationCode::UnknownAttribute,
                n,
                "unknown attribute preserved as-is",
            )
        })
        .collect()
}

/// Parses and validates JDL text as a single job.
pub fn validate_job_text(text: &str) -> Result<JobDescription, Violations> {
    let ad = parse_ad(text).map_err(|e| {
        Violations(vec![Violation::new(ViolationCode::Syntax, "", e.to_string())])
    })?;
    validate_job(&ad)
}

/// Checks a job ad and returns its normalized description.
pub fn validate_job(ad: &ClassAd) -> Result<JobDescription, Violations> {
    let mut v = Vec::new();
    let mut ad = ad.clone();

    if let Some(t) = opt_text(&ad, "Type", &mut v) {
        if !t.eq_ignore_ascii_case("Job") {
            v.push(Violation::new(
                ViolationCode::Type,
                "Type",
                format!("expected \"Job\", got \"{t}\""),
            ));
        }
    }

    let job_type = match opt_text(&ad, "JobType", &mut v).as_deref() {
        None => Some(JobType::Normal),
        Some(t) => match t.to_ascii_lowercase().as_str() {
            "normal" => Some(JobType::Normal),
            "interactive" => Some(JobType::Interactive),
            "checkpointable" => Some(JobType::Checkpointable),
            "partitionable" => Some(JobType::Partitionable),
            "mpich" => {
                v.push(Violation::new(
                    ViolationCode::Unsupported,
                    "JobType",
                    "MPICH jobs are unsupported",
                ));
                None
            }
            _ => {
                v.push(Violation::new(
                    ViolationCode::Type,
                    "JobType",
                    format!("unknown job type \"{t}\""),
                ));
                None
            }
        },
    };

    let executable = match opt_text(&ad, "Executable", &mut v) {
        Some(e) if !e.is_empty() => e,
        Some(_) => {
            v.push(Violation::new(
                ViolationCode::Missing,
                "Executable",
                "executable must be non-empty",
            ));
            String::new()
        }
        None => {
            if !ad.contains("Executable") {
                v.push(Violation::new(
                    ViolationCode::Missing,
                    "Executable",
                    "executable is required",
                ));
            }
            String::new()
        }
    };
    let arguments = opt_text(&ad, "Arguments", &mut v).unwrap_or_default();
    if shlex::split(&arguments).is_none() {
        v.push(Violation::new(
            ViolationCode::Syntax,
            "Arguments",
            "unbalanced quotes in arguments",
        ));
    }
    let std_input = opt_text(&ad, "StdInput", &mut v);
    let std_output = opt_text(&ad, "StdOutput", &mut v);
    let std_error = opt_text(&ad, "StdError", &mut v);
    for (name, p) in [
        ("StdInput", &std_input),
        ("StdOutput", &std_output),
        ("StdError", &std_error),
    ] {
        if let Some(p) = p {
            if let Err(msg) = check_relative_path(p) {
                v.push(Violation::new(ViolationCode::Path, name, msg));
            }
        }
    }
    let input_sandbox = sandbox_list(&ad, "InputSandbox", &mut v);
    let output_sandbox = sandbox_list(&ad, "OutputSandbox", &mut v);
    let tags = user_tags(&ad, &mut v);
    let retry_count = opt_int(&ad, "RetryCount", 0, &mut v).unwrap_or(0);
    let job_steps = opt_int(&ad, "JobSteps", 1, &mut v);
    let sub_jobs = opt_int(&ad, "SubJobs", 1, &mut v);

    match job_type {
        Some(JobType::Checkpointable | JobType::Partitionable) if job_steps.is_none() => {
            if !ad.contains("JobSteps") {
                v.push(Violation::new(
                    ViolationCode::Missing,
                    "JobSteps",
                    "checkpointable and partitionable jobs need JobSteps",
                ));
            }
        }
        _ => {}
    }
    if job_type == Some(JobType::Partitionable) {
        match (sub_jobs, job_steps) {
            (None, _) if !ad.contains("SubJobs") => v.push(Violation::new(
                ViolationCode::Missing,
                "SubJobs",
                "partitionable jobs need SubJobs",
            )),
            (Some(s), Some(n)) if s > n => v.push(Violation::new(
                ViolationCode::Constraint,
                "SubJobs",
                format!("subJobs ≤ jobSteps violated ({s} > {n})"),
            )),
            _ => {}
        }
    }

    let mut listener = None;
    let port = opt_int(&ad, "ListenerPort", 1, &mut v);
    let host = opt_text(&ad, "ListenerHost", &mut v);
    if let Some(p) = port {
        if p > u16::MAX as i64 {
            v.push(Violation::new(
                ViolationCode::Range,
                "ListenerPort",
                format!("port {p} out of range"),
            ));
        } else {
            listener = Some(Listener {
                host: host.unwrap_or_else(|| DEFAULT_LISTENER_HOST.to_string()),
                port: p as u16,
            });
        }
    }
    if job_type == Some(JobType::Interactive) && listener.is_none() && !ad.contains("ListenerPort")
    {
        v.push(Violation::new(
            ViolationCode::Missing,
            "ListenerPort",
            "interactive jobs need a listener port",
        ));
    }

    let requirements = match ad.get("Requirements") {
        Some(e) => e.clone(),
        None => {
            let e = parse_expr(DEFAULT_REQUIREMENTS).expect("default requirements parse");
            ad.set("Requirements", e.clone());
            e
        }
    };
    let rank = match ad.get("Rank") {
        Some(e) => e.clone(),
        None => {
            let e = parse_expr(DEFAULT_RANK).expect("default rank parse");
            ad.set("Rank", e.clone());
            e
        }
    };

    if !v.is_empty() {
        return Err(Violations(v));
    }
    let job_type = job_type.expect("job type checked above");
    if !ad.contains("RetryCount") {
        ad.set_int("RetryCount", 0);
    }
    if !ad.contains("JobType") {
        ad.set_text("JobType", job_type.as_str());
    }

    Ok(JobDescription {
        warnings: warn_unknown(&ad, KNOWN_JOB_ATTRS),
        ad,
        job_type,
        executable,
        arguments,
        std_input,
        std_output,
        std_error,
        input_sandbox,
        output_sandbox,
        requirements,
        rank,
        user_tags: tags,
        retry_count: retry_count as u32,
        job_steps: job_steps.map(|n| n as u32),
        sub_jobs: sub_jobs.map(|n| n as u32),
        listener,
    })
}

/// Input sandbox files a submission needs before it can proceed: the job's
/// own list, or the union over the nodes of a DAG.
pub fn input_manifest(text: &str) -> Vec<String> {
    let Ok(ad) = parse_ad(text) else {
        return Vec::new();
    };
    let mut out = BTreeSet::new();
    if is_dag(&ad) {
        if let Ok(dag) = validate_dag(&ad) {
            for n in dag.nodes.values() {
                out.extend(n.input_sandbox.iter().cloned());
            }
        }
    } else if let Ok(job) = validate_job(&ad) {
        out.extend(job.input_sandbox);
    }
    out.into_iter().collect()
}

pub fn validate_dag_text(text: &str) -> Result<DagDescription, Violations> {
    let ad = parse_ad(text).map_err(|e| {
        Violations(vec![Violation::new(ViolationCode::Syntax, "", e.to_string())])
    })?;
    validate_dag(&ad)
}

/// True when the ad declares itself a DAG (`Type = "DAG"`).
pub fn is_dag(ad: &ClassAd) -> bool {
    ad.get_text("Type")
        .is_some_and(|t| t.eq_ignore_ascii_case("dag"))
}

/// Checks a DAG ad: every node validates as a job, every dependency names
/// existing nodes, and the graph is acyclic.
pub fn validate_dag(ad: &ClassAd) -> Result<DagDescription, Violations> {
    let mut v = Vec::new();
    if !is_dag(ad) {
        v.push(Violation::new(
            ViolationCode::Type,
            "Type",
            "a DAG needs Type = \"DAG\"",
        ));
    }

    let mut nodes = BTreeMap::new();
    let mut canonical: HashMap<String, String> = HashMap::new();
    match ad.get("Nodes") {
        Some(Expr::Record(inner)) if !inner.is_empty() => {
            for (name, e) in inner.iter() {
                canonical.insert(name.to_ascii_lowercase(), name.to_string());
                match e {
                    Expr::Record(node_ad) => match validate_job(node_ad) {
                        Ok(job) => {
                            nodes.insert(name.to_string(), job);
                        }
                        Err(Violations(inner_v)) => {
                            v.extend(inner_v.into_iter().map(|mut x| {
                                x.attribute = format!("Nodes.{name}.{}", x.attribute);
                                x
                            }));
                        }
                    },
                    _ => v.push(Violation::new(
                        ViolationCode::Type,
                        &format!("Nodes.{name}"),
                        "each node must be a nested job ad",
                    )),
                }
            }
        }
        Some(Expr::Record(_)) | None => v.push(Violation::new(
            ViolationCode::Missing,
            "Nodes",
            "a DAG needs at least one node",
        )),
        Some(_) => v.push(Violation::new(
            ViolationCode::Type,
            "Nodes",
            "must be a nested ad of node = [ job ]",
        )),
    }

    let mut deps = Vec::new();
    if let Some(expr) = ad.get("Dependencies") {
        match eval(ad, expr) {
            Value::List(pairs) => {
                for pair in pairs {
                    let names: Option<Vec<String>> = pair.as_list().and_then(|l| {
                        l.iter().map(|x| x.as_str().map(str::to_string)).collect()
                    });
                    match names.as_deref() {
                        Some([p, c]) => {
                            let mut ok = true;
                            for n in [p, c] {
                                if !canonical.contains_key(&n.to_ascii_lowercase()) {
                                    ok = false;
                                    v.push(Violation::new(
                                        ViolationCode::UnknownNode,
                                        "Dependencies",
                                        format!("dependency references unknown node \"{n}\""),
                                    ));
                                }
                            }
                            if ok {
                                deps.push((
                                    canonical[&p.to_ascii_lowercase()].clone(),
                                    canonical[&c.to_ascii_lowercase()].clone(),
                                ));
                            }
                        }
                        _ => v.push(Violation::new(
                            ViolationCode::Type,
                            "Dependencies",
                            "each dependency must be {\"parent\", \"child\"}",
                        )),
                    }
                }
            }
            other => v.push(Violation::new(
                ViolationCode::Type,
                "Dependencies",
                format!("must be a list of pairs, got {}", other.type_name()),
            )),
        }
    }
    deps.sort();
    deps.dedup();

    let names: Vec<String> = canonical.values().cloned().collect();
    if let Some(cycle) = find_cycle(&names, &deps) {
        v.push(Violation::new(
            ViolationCode::Cycle,
            "Dependencies",
            format!("dependency cycle: {}", cycle.join(" -> ")),
        ));
    }

    let aggregator = match opt_text(ad, "Aggregator", &mut v) {
        Some(a) => match canonical.get(&a.to_ascii_lowercase()) {
            Some(c) => Some(c.clone()),
            None => {
                v.push(Violation::new(
                    ViolationCode::UnknownNode,
                    "Aggregator",
                    format!("aggregator names unknown node \"{a}\""),
                ));
                None
            }
        },
        None => None,
    };

    if !v.is_empty() {
        return Err(Violations(v));
    }
    Ok(DagDescription {
        warnings: warn_unknown(ad, KNOWN_DAG_ATTRS),
        ad: ad.clone(),
        nodes,
        dependencies: deps,
        aggregator,
    })
}

/// Returns one cycle as a closed walk (first node repeated at the end).
fn find_cycle(nodes: &[String], edges: &[(String, String)]) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut sorted: Vec<&String> = nodes.iter().collect();
    sorted.sort();
    let mut mark: HashMap<&str, Mark> = sorted.iter().map(|n| (n.as_str(), Mark::White)).collect();
    let adj = |n: &str| -> Vec<&str> {
        edges
            .iter()
            .filter(|(p, _)| p == n)
            .map(|(_, c)| c.as_str())
            .collect()
    };

    for start in sorted {
        if mark[start.as_str()] != Mark::White {
            continue;
        }
        // iterative DFS keeping the current path
        let mut path: Vec<&str> = vec![start];
        let mut iters: Vec<std::vec::IntoIter<&str>> = vec![adj(start).into_iter()];
        mark.insert(start, Mark::Grey);
        while let Some(it) = iters.last_mut() {
            match it.next() {
                Some(next) => match mark[next] {
                    Mark::Grey => {
                        let from = path.iter().position(|n| *n == next).unwrap();
                        let mut cycle: Vec<String> =
                            path[from..].iter().map(|s| s.to_string()).collect();
                        cycle.push(next.to_string());
                        return Some(cycle);
                    }
                    Mark::White => {
                        mark.insert(next, Mark::Grey);
                        path.push(next);
                        iters.push(adj(next).into_iter());
                    }
                    Mark::Black => {}
                },
                None => {
                    let done = path.pop().unwrap();
                    mark.insert(done, Mark::Black);
                    iters.pop();
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_job_gets_defaults() {
        let job = validate_job_text(r#"[ Executable="/bin/a"; ]"#).unwrap();
        assert_eq!(job.job_type, JobType::Normal);
        assert_eq!(job.requirements, parse_expr(DEFAULT_REQUIREMENTS).unwrap());
        assert_eq!(job.rank, parse_expr(DEFAULT_RANK).unwrap());
        assert_eq!(job.retry_count, 0);
        assert!(job.warnings.is_empty());
    }

    #[test]
    fn partition_bound_violation() {
        let err = validate_job_text(
            r#"[ Executable="a"; JobType="Partitionable"; JobSteps=10; SubJobs=12 ]"#,
        )
        .unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert!(err.0[0].message.contains("subJobs ≤ jobSteps"));
    }

    #[test]
    fn sandbox_escape_is_rejected() {
        let err = validate_job_text(r#"[ Executable="a"; InputSandbox={"../etc/x"} ]"#).unwrap_err();
        assert_eq!(err.0[0].code, ViolationCode::Path);
        assert!(err.0[0].message.contains("path escapes sandbox"));
    }

    #[test]
    fn all_violations_are_reported() {
        let err = validate_job_text(
            r#"[ JobType = "Checkpointable"; RetryCount = -1; OutputSandbox = {"/abs"} ]"#,
        )
        .unwrap_err();
        let codes: Vec<_> = err.0.iter().map(|v| v.code).collect();
        assert!(codes.contains(&ViolationCode::Missing));
        assert!(codes.contains(&ViolationCode::Range));
        assert!(codes.contains(&ViolationCode::Path));
        assert!(err.0.len() >= 4, "{err}");
    }

    #[test]
    fn mpich_is_unsupported() {
        let err = validate_job_text(r#"[ Executable="a"; JobType="MPICH" ]"#).unwrap_err();
        assert_eq!(err.0[0].code, ViolationCode::Unsupported);
    }

    #[test]
    fn arguments_need_balanced_quotes() {
        assert!(validate_job_text(r#"[ Executable="a"; Arguments="-c 'exit 3'" ]"#).is_ok());
        let err = validate_job_text(r#"[ Executable="a"; Arguments="-c 'exit 3" ]"#).unwrap_err();
        assert_eq!(err.0[0].attribute, "Arguments");
    }

    #[test]
    fn unknown_attributes_warn_but_pass() {
        let job = validate_job_text(r#"[ Executable="a"; Colour = "blue" ]"#).unwrap();
        assert_eq!(job.warnings.len(), 1);
        assert_eq!(job.ad.get_text("Colour").as_deref(), Some("blue"));
    }

    #[test]
    fn user_tags_and_listener() {
        let job = validate_job_text(
            r#"[ Executable="cat"; JobType="Interactive"; ListenerPort=4000;
                UserTags = [ production = "xyz"; run = 7 ] ]"#,
        )
        .unwrap();
        assert_eq!(job.user_tags["production"], "xyz");
        assert_eq!(job.user_tags["run"], "7");
        assert_eq!(
            job.listener,
            Some(Listener {
                host: "127.0.0.1".into(),
                port: 4000
            })
        );
        let err = validate_job_text(r#"[ Executable="cat"; JobType="Interactive" ]"#).unwrap_err();
        assert_eq!(err.0[0].attribute, "ListenerPort");
    }

    #[test]
    fn validation_is_idempotent() {
        let job = validate_job_text(r#"[ Executable="/bin/a"; JobType="Checkpointable"; JobSteps=3 ]"#)
            .unwrap();
        let again = validate_job(&job.ad).unwrap();
        assert_eq!(job, again);
    }

    #[test]
    fn two_node_dag() {
        let dag = validate_dag_text(
            r#"[ Type="DAG"; Nodes = [ A = [ Executable="a" ]; B = [ Executable="b" ] ];
                 Dependencies = { {"A", "B"} } ]"#,
        )
        .unwrap();
        assert_eq!(dag.dependencies, vec![("A".into(), "B".into())]);
        assert_eq!(dag.parents("B"), vec!["A"]);
    }

    #[test]
    fn cyclic_dag_reports_witness() {
        let err = validate_dag_text(
            r#"[ Type="DAG"; Nodes = [ A = [ Executable="a" ]; B = [ Executable="b" ] ];
                 Dependencies = { {"A", "B"}, {"B", "A"} } ]"#,
        )
        .unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert_eq!(err.0[0].code, ViolationCode::Cycle);
        assert!(err.0[0].message.contains("A -> B -> A"), "{}", err.0[0].message);
    }

    #[test]
    fn unknown_parent_is_reported() {
        let err = validate_dag_text(
            r#"[ Type="DAG"; Nodes = [ A = [ Executable="a" ] ]; Dependencies = { {"Z", "A"} } ]"#,
        )
        .unwrap_err();
        assert_eq!(err.0[0].code, ViolationCode::UnknownNode);
        assert!(err.0[0].message.contains("\"Z\""));
    }

    #[test]
    fn node_violations_are_prefixed() {
        let err = validate_dag_text(r#"[ Type="DAG"; Nodes = [ A = [ Arguments="x" ] ] ]"#)
            .unwrap_err();
        assert_eq!(err.0[0].attribute, "Nodes.A.Executable");
    }
}
