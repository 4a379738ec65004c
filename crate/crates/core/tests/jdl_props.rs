use perm::permutations;
use proptest::prelude::*;
use wms_core::classad::{parse_ad, ClassAd};
use wms_core::jdl::{check_relative_path, validate_dag_text, validate_job, JobDescription, JobType};

mod perm {
    /// Heap's algorithm; returns every ordering of `items`.
    pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        let mut a = items.to_vec();
        let n = a.len();
        let mut out = vec![a.clone()];
        let mut c = vec![0usize; n];
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    a.swap(0, i);
                } else {
                    a.swap(c[i], i);
                }
                out.push(a.clone());
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        out
    }
}

/// Brute-force oracle: some ordering of the nodes respects every edge.
fn topo_sort_exists(n: usize, edges: &[(usize, usize)]) -> bool {
    let nodes: Vec<usize> = (0..n).collect();
    permutations(&nodes).into_iter().any(|order| {
        let pos: Vec<usize> = {
            let mut p = vec![0; n];
            for (i, x) in order.iter().enumerate() {
                p[*x] = i;
            }
            p
        };
        edges.iter().all(|(a, b)| pos[*a] < pos[*b])
    })
}

fn dag_text(n: usize, edges: &[(usize, usize)]) -> String {
    let nodes: Vec<String> = (0..n)
        .map(|i| format!("N{i} = [ Executable = \"/bin/true\" ]"))
        .collect();
    let deps: Vec<String> = edges
        .iter()
        .map(|(a, b)| format!("{{\"N{a}\", \"N{b}\"}}"))
        .collect();
    format!(
        "[ Type = \"DAG\"; Nodes = [ {} ]; Dependencies = {{ {} }} ]",
        nodes.join("; "),
        deps.join(", ")
    )
}

fn audit(job: &JobDescription) {
    assert!(!job.executable.is_empty());
    if matches!(job.job_type, JobType::Checkpointable | JobType::Partitionable) {
        assert!(job.job_steps.is_some_and(|s| s >= 1));
    }
    if job.job_type == JobType::Partitionable {
        assert!(job.sub_jobs.unwrap() <= job.job_steps.unwrap());
    }
    for p in job.input_sandbox.iter().chain(&job.output_sandbox) {
        assert!(check_relative_path(p).is_ok());
    }
}

fn job_ad() -> impl Strategy<Value = ClassAd> {
    (
        prop::sample::select(vec!["", "Normal", "Checkpointable", "Partitionable", "Interactive"]),
        prop::option::of(0i64..4),
        prop::option::of(-1i64..12),
        prop::option::of(0i64..12),
        prop::collection::vec(prop::sample::select(vec!["a.txt", "../x", "/abs", "d/b", "d/../e"]), 0..3),
        prop::option::of(1i64..70000),
        any::<bool>(),
    )
        .prop_map(|(jt, retry, steps, subs, sandbox, port, exe)| {
            let mut s = String::from("[ ");
            if exe {
                s.push_str("Executable = \"/bin/job\"; ");
            }
            if !jt.is_empty() {
                s.push_str(&format!("JobType = \"{jt}\"; "));
            }
            if let Some(r) = retry {
                s.push_str(&format!("RetryCount = {r}; "));
            }
            if let Some(n) = steps {
                s.push_str(&format!("JobSteps = {n}; "));
            }
            if let Some(n) = subs {
                s.push_str(&format!("SubJobs = {n}; "));
            }
            if let Some(p) = port {
                s.push_str(&format!("ListenerPort = {p}; "));
            }
            let items: Vec<String> = sandbox.iter().map(|p| format!("\"{p}\"")).collect();
            s.push_str(&format!("InputSandbox = {{ {} }}; ]", items.join(", ")));
            parse_ad(&s).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn dag_accepted_iff_topological_order_exists(
        n in 1usize..=8,
        raw in prop::collection::vec((0usize..8, 0usize..8), 0..12),
    ) {
        let edges: Vec<(usize, usize)> = raw.into_iter().map(|(a, b)| (a % n, b % n)).collect();
        let accepted = validate_dag_text(&dag_text(n, &edges)).is_ok();
        prop_assert_eq!(accepted, topo_sort_exists(n, &edges));
    }

    #[test]
    fn valid_jobs_pass_the_audit_and_revalidate_unchanged(ad in job_ad()) {
        if let Ok(job) = validate_job(&ad) {
            audit(&job);
            let again = validate_job(&job.ad).unwrap();
            prop_assert_eq!(again, job);
        }
    }
}
