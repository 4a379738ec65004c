use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use wms_core::fsq::{Disposition, Queue};
use wms_core::lb::{derive_state, Event, EventKind, LbStore, Query, Source};

fn lifecycle(job: &str) -> Vec<Event> {
    let mut v = vec![Event::new(job, Source::Gateway, 1, EventKind::Registered)
        .with("owner", "alice")
        .with("jdl", "[ Executable = \"/bin/true\"; ]")];
    v.push(Event::new(job, Source::Gateway, 10, EventKind::UserTag).with("name", "batch").with("value", "b1"));
    for (i, k) in [EventKind::Accepted, EventKind::Matched, EventKind::Committed, EventKind::Running]
        .into_iter()
        .enumerate()
    {
        v.push(Event::new(job, Source::WM, 100 + i as u64, k).attempt(1));
    }
    v.push(Event::new(job, Source::LogMonitor, 500, EventKind::Done).with("exitCode", 0).attempt(1));
    v
}

fn bookkeeping(c: &mut Criterion) {
    let evs = lifecycle("j");
    c.bench_function("derive_state/7_events", |b| b.iter(|| derive_state(&evs)));

    c.bench_function("lb/log_job_lifecycle", |b| {
        let d = tempfile::tempdir().unwrap();
        let lb = LbStore::open(d.path()).unwrap();
        let mut n = 0u64;
        b.iter(|| {
            n += 1;
            for e in lifecycle(&format!("job-{n}")) {
                lb.log_event(&e).unwrap();
            }
        })
    });

    let d = tempfile::tempdir().unwrap();
    let lb = LbStore::open(d.path()).unwrap();
    for n in 0..500 {
        for e in lifecycle(&format!("job-{n:04}")) {
            lb.log_event(&e).unwrap();
        }
    }
    let q = Query::new().with("tag:batch", &["b1"]).with("state", &["DONE_OK"]);
    c.bench_function("lb/query_500_jobs_warm", |b| b.iter(|| lb.query(&q).unwrap()));
    c.bench_function("lb/query_500_jobs_cold", |b| {
        b.iter_batched(|| lb.clear_cache(), |_| lb.query(&q).unwrap(), BatchSize::PerIteration)
    });

    c.bench_function("fsq/enqueue_claim_ack", |b| {
        let d = tempfile::tempdir().unwrap();
        let q = Queue::open(d.path()).unwrap();
        b.iter(|| {
            q.enqueue(br#"{"kind":"submit","job":"j"}"#).unwrap();
            let it = q.claim("bench").unwrap().unwrap();
            q.settle(it.seq, Disposition::Ack).unwrap();
        })
    });
}

criterion_group!(benches, bookkeeping);
criterion_main!(benches);
