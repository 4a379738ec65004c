use std::collections::BTreeMap;

use proptest::prelude::*;
use wms_core::lb::{derive_state, Event, EventKind, JobState, LbStore, Query, Source};

fn kind() -> impl Strategy<Value = EventKind> {
    prop::sample::select(EventKind::ALL.to_vec())
}

/// Events with distinct (src, sseq), random attempt tags and exit codes.
fn events(max: usize) -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((kind(), prop::option::of(1u32..4), any::<bool>()), 0..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (k, att, ok))| {
                let mut e = Event::new("j", Source::WM, i as u64 + 1, k);
                e.ts = 1000 + i as u64;
                if k == EventKind::Done {
                    e = e.with("exitCode", if ok { 0 } else { 3 });
                }
                match att {
                    Some(a) => e.attempt(a),
                    None => e,
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn derived_state_ignores_delivery_order(evs in events(12), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut shuffled = evs.clone();
        shuffled.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
        prop_assert_eq!(derive_state(&evs), derive_state(&shuffled));
    }

    #[test]
    fn cleared_absorbs_everything(evs in events(8), more in events(6)) {
        let mut all = evs.clone();
        all.push(Event::new("j", Source::Gateway, 999, EventKind::Cleared));
        let (s, _) = derive_state(&all);
        prop_assert_eq!(s, JobState::Cleared);
        all.extend(more.into_iter().filter(|e| e.kind != EventKind::Resubmitted));
        prop_assert_eq!(derive_state(&all).0, JobState::Cleared);
    }

    #[test]
    fn aborted_is_left_only_by_resubmission(evs in events(8), more in events(8)) {
        let base: Vec<Event> = evs.into_iter().filter(|e| e.kind != EventKind::Cleared).collect();
        let (_, attempt) = derive_state(&base);
        let mut all = base.clone();
        all.push(Event::new("j", Source::WM, 500, EventKind::Aborted).attempt(attempt));
        prop_assert_eq!(derive_state(&all), (JobState::Aborted, attempt));
        all.extend(
            more.into_iter()
                .filter(|e| !matches!(e.kind, EventKind::Resubmitted | EventKind::Cleared))
                .map(|mut e| { e.sseq += 1000; e }),
        );
        prop_assert_eq!(derive_state(&all), (JobState::Aborted, attempt));
    }
}

const OWNERS: [&str; 3] = ["alice", "bob", "carol"];
const CES: [&str; 3] = ["CE1", "CE2", "CE3"];

#[derive(Debug, Clone)]
struct Spec {
    owner: usize,
    tag: Option<usize>,
    ce: Option<usize>,
    progress: usize,
}

fn spec() -> impl Strategy<Value = Spec> {
    (0..3usize, prop::option::of(0..3usize), prop::option::of(0..3usize), 0..6usize)
        .prop_map(|(owner, tag, ce, progress)| Spec { owner, tag, ce, progress })
}

/// The expected state of a job built by [`log_job`], computed by hand.
fn expected_state(s: &Spec) -> JobState {
    [
        JobState::Submitted,
        JobState::Waiting,
        JobState::Ready,
        JobState::Running,
        JobState::DoneOk,
        JobState::Aborted,
    ][s.progress]
}

fn job_events(id: &str, s: &Spec) -> Vec<Event> {
    let mut v = vec![Event::new(id, Source::Gateway, 1, EventKind::Registered)
        .with("owner", OWNERS[s.owner])
        .with("jdl", "[ Executable = \"/bin/true\"; ]")];
    if let Some(t) = s.tag {
        v.push(
            Event::new(id, Source::Gateway, 10, EventKind::UserTag)
                .with("name", "color")
                .with("value", ["red", "green", "blue"][t]),
        );
    }
    let steps = [EventKind::Accepted, EventKind::Matched, EventKind::Running];
    for (i, k) in steps.iter().enumerate().take(s.progress.min(3)) {
        let mut e = Event::new(id, Source::WM, 20 + i as u64, *k).attempt(1);
        if *k == EventKind::Matched {
            if let Some(ce) = s.ce {
                e = e.with("destination", CES[ce]);
            }
        }
        v.push(e);
    }
    match s.progress {
        4 => v.push(Event::new(id, Source::LogMonitor, 50, EventKind::Done).with("exitCode", 0).attempt(1)),
        5 => v.push(Event::new(id, Source::WM, 50, EventKind::Aborted).with("reason", "x").attempt(1)),
        _ => {}
    }
    v
}

fn query() -> impl Strategy<Value = Vec<(String, Vec<String>)>> {
    let field = prop_oneof![
        prop::sample::subsequence(OWNERS.to_vec(), 1..=2).prop_map(|v| ("owner".to_string(), v)),
        prop::sample::subsequence(vec!["SUBMITTED", "WAITING", "READY", "RUNNING", "DONE_OK", "ABORTED"], 1..=3)
            .prop_map(|v| ("state".to_string(), v)),
        prop::sample::subsequence(CES.to_vec(), 1..=2).prop_map(|v| ("destination".to_string(), v)),
        prop::sample::subsequence(vec!["red", "green", "blue"], 1..=2).prop_map(|v| ("tag:color".to_string(), v)),
    ];
    prop::collection::vec(field, 1..=3)
        .prop_map(|v| v.into_iter().map(|(f, vals)| (f, vals.into_iter().map(str::to_string).collect())).collect())
}

fn oracle_match(s: &Spec, preds: &[(String, Vec<String>)]) -> bool {
    preds.iter().all(|(f, vals)| {
        let have: Option<String> = match f.as_str() {
            "owner" => Some(OWNERS[s.owner].into()),
            "state" => Some(expected_state(s).to_string()),
            "destination" => s.ce.filter(|_| s.progress >= 2).map(|c| CES[c].into()),
            _ => s.tag.map(|t| ["red", "green", "blue"][t].into()),
        };
        have.is_some_and(|h| vals.contains(&h))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn queries_match_a_brute_force_filter_and_survive_replay(
        specs in prop::collection::vec(spec(), 1..15),
        queries in prop::collection::vec(query(), 1..6),
    ) {
        let d = tempfile::tempdir().unwrap();
        let lb = LbStore::open(d.path().join("lb")).unwrap();
        let mut all = Vec::new();
        for (i, s) in specs.iter().enumerate() {
            let id = format!("job-{i:02}");
            for e in job_events(&id, s) {
                prop_assert!(lb.log_event(&e).unwrap());
                all.push(e);
            }
            prop_assert_eq!(lb.state(&id).unwrap().0, expected_state(s));
        }
        let answer = |lb: &LbStore| -> Vec<Vec<String>> {
            queries.iter().map(|preds| {
                let q = preds.iter().fold(Query::new(), |q, (f, v)| q.with(f, v));
                lb.query(&q).unwrap()
            }).collect()
        };
        let first = answer(&lb);
        for (preds, got) in queries.iter().zip(&first) {
            let want: Vec<String> = specs.iter().enumerate()
                .filter(|(_, s)| oracle_match(s, preds))
                .map(|(i, _)| format!("job-{i:02}"))
                .collect();
            prop_assert_eq!(got, &want, "query {:?}", preds);
        }
        let records: BTreeMap<String, _> = lb.records().unwrap().into_iter().map(|r| (r.job_id.clone(), r)).collect();

        // replaying the whole log is a no-op
        for e in &all {
            prop_assert!(!lb.log_event(e).unwrap());
        }
        // and a cold store rebuilt from the event files agrees
        let cold = LbStore::open(d.path().join("lb")).unwrap();
        cold.clear_cache();
        prop_assert_eq!(answer(&cold), first);
        let again: BTreeMap<String, _> = cold.records().unwrap().into_iter().map(|r| (r.job_id.clone(), r)).collect();
        prop_assert_eq!(again, records);
    }

    #[test]
    fn checkpoint_seqs_are_gap_free(n in 1usize..20) {
        let d = tempfile::tempdir().unwrap();
        let lb = LbStore::open(d.path()).unwrap();
        lb.log_event(&Event::new("j", Source::Gateway, 1, EventKind::Registered).with("owner", "a")).unwrap();
        for i in 0..n {
            let seq = lb.save_state("j", &[("i".into(), i.to_string())], None).unwrap();
            prop_assert_eq!(seq, i as u64 + 1);
        }
        let rec = lb.job("j").unwrap();
        let seqs: Vec<u64> = rec.checkpoint_states.iter().map(|c| c.seq).collect();
        prop_assert_eq!(seqs, (1..=n as u64).collect::<Vec<_>>());
        prop_assert_eq!(lb.get_state("j", None).unwrap().pairs, vec![("i".to_string(), (n - 1).to_string())]);
    }
}

#[test]
fn concurrent_writers_to_one_job_keep_every_event() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path().join("lb");
    let lb = LbStore::open(&root).unwrap();
    lb.log_event(&Event::new("j", Source::Gateway, 1, EventKind::Registered).with("owner", "a")).unwrap();
    let handles: Vec<_> = (0..4u64)
        .map(|t| {
            let root = root.clone();
            std::thread::spawn(move || {
                let lb = LbStore::open(root).unwrap();
                for i in 0..25 {
                    lb.save_state("j", &[("t".into(), t.to_string())], None).unwrap();
                    let e = Event::new("j", Source::WM, 100 + t * 100 + i, EventKind::UserTag)
                        .with("name", format!("t{t}i{i}"))
                        .with("value", "x");
                    assert!(lb.log_event(&e).unwrap());
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let rec = lb.job("j").unwrap();
    assert_eq!(rec.user_tags.len(), 100);
    let seqs: Vec<u64> = rec.checkpoint_states.iter().map(|c| c.seq).collect();
    assert_eq!(seqs, (1..=100).collect::<Vec<_>>());
}
