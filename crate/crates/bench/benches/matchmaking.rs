use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wms_core::broker::{find_matches, rank_matches, Broker, Registry};
use wms_core::classad::parse_ad;
use wms_core::jdl::validate_job_text;

fn registry(ces: usize) -> Registry {
    let r = Registry::new(Duration::from_secs(3600));
    for i in 0..ces {
        let ad = format!(
            "[ Type = \"CE\"; Id = \"CE{i:04}\"; Status = \"Production\"; OwnerGroup = \"g\"; FreeCPUs = {}; \
             TotalCPUs = 8; PricePerCpuSecond = {}; Arch = \"{}\"; CloseSEs = {{ \"SE{:03}\" }}; ]",
            i % 9 % 8,
            i % 5,
            if i % 3 == 0 { "arm64" } else { "x86_64" },
            i % 50
        );
        r.upsert_fixed(parse_ad(&ad).unwrap()).unwrap();
    }
    for s in 0..50.min(ces) {
        let ad = format!("[ Type = \"SE\"; Id = \"SE{s:03}\"; AvailableSpace = {}; ]", s * 997 % 5000);
        r.upsert_fixed(parse_ad(&ad).unwrap()).unwrap();
    }
    r
}

fn matching(c: &mut Criterion) {
    let job = validate_job_text(
        "[ Executable = \"/bin/true\"; Requirements = other.Arch == \"x86_64\" && other.FreeCPUs >= 2 && \
           other.PricePerCpuSecond <= 3; Rank = other.FreeCPUs * 10 - other.PricePerCpuSecond; ]",
    )
    .unwrap();
    let gang = validate_job_text(
        "[ Executable = \"/bin/true\"; Requirements = ce.FreeCPUs >= 1 && se.AvailableSpace >= 1000; \
           Rank = se.AvailableSpace; ]",
    )
    .unwrap();
    let mut g = c.benchmark_group("matchmaking");
    for n in [10, 100, 1000] {
        let reg = registry(n);
        let snap = reg.snapshot();
        let broker = Broker::new(reg);
        g.bench_with_input(BenchmarkId::new("find_and_rank", n), &n, |b, _| {
            b.iter(|| {
                let m = find_matches(&job, &snap);
                rank_matches(&job, &m, &snap)
            })
        });
        g.bench_with_input(BenchmarkId::new("select_best", n), &n, |b, _| {
            b.iter(|| broker.select_resource(&job, "best", None))
        });
        g.bench_with_input(BenchmarkId::new("gang_match", n), &n, |b, _| {
            b.iter(|| broker.gang_match(&gang, "best", None))
        });
    }
    g.finish();
}

criterion_group!(benches, matching);
criterion_main!(benches);
