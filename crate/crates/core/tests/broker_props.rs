use std::time::Duration;

use proptest::prelude::*;
use wms_core::broker::{find_matches, Broker, BrokerError, Registry};
use wms_core::classad::parse_ad;
use wms_core::jdl::validate_job_text;

#[derive(Debug, Clone)]
struct Ce {
    free: i64,
    price: i64,
    mem: i64,
    age_s: u64,
}

fn ces() -> impl Strategy<Value = Vec<Ce>> {
    prop::collection::vec(
        (0i64..8, 0i64..6, 0i64..4096, 0u64..300).prop_map(|(free, price, mem, age_s)| Ce { free, price, mem, age_s }),
        0..10,
    )
}

fn ad(i: usize, c: &Ce) -> String {
    format!(
        "[ Type = \"CE\"; Id = \"CE{i:02}\"; Status = \"Production\"; OwnerGroup = \"g\"; FreeCPUs = {}; TotalCPUs = 8; \
         PricePerCpuSecond = {}; Memory = {}; Arch = \"x86_64\"; ]",
        c.free, c.price, c.mem
    )
}

fn rank_expr() -> impl Strategy<Value = String> {
    (-3i64..4, -3i64..4, -2i64..3).prop_map(|(a, b, c)| {
        format!("{a} * other.FreeCPUs + {b} * other.PricePerCpuSecond + {c} * other.Memory")
    })
}

fn registry(cs: &[Ce]) -> Registry {
    let r = Registry::new(Duration::from_secs(3600));
    for (i, c) in cs.iter().enumerate() {
        r.upsert_fixed(parse_ad(&ad(i, c)).unwrap()).unwrap();
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn best_choice_is_invariant_under_positive_rank_scaling(cs in ces(), rank in rank_expr(), k in 1i64..50, min_free in 0i64..4) {
        let b = Broker::new(registry(&cs));
        let jdl = |r: &str| format!("[ Executable = \"/bin/true\"; Requirements = other.FreeCPUs >= {min_free}; Rank = {r}; ]");
        let plain = validate_job_text(&jdl(&rank)).unwrap();
        let scaled = validate_job_text(&jdl(&format!("{k} * ({rank})"))).unwrap();
        let a = b.select_resource(&plain, "best", None).map(|m| m.ce_id);
        let s = b.select_resource(&scaled, "best", None).map(|m| m.ce_id);
        match (a, s) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            (Err(BrokerError::NoMatchingResources), Err(BrokerError::NoMatchingResources)) => {
                prop_assert!(cs.iter().all(|c| c.free < min_free));
            }
            (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
        }
    }

    #[test]
    fn helper_output_revalidates_with_the_selected_ce(cs in ces(), rank in rank_expr()) {
        let b = Broker::new(registry(&cs));
        let jdl = format!("[ Executable = \"/bin/true\"; Arguments = \"a b\"; Rank = {rank}; ]");
        match b.helper_resolve(&jdl) {
            Ok(out) => {
                let job = validate_job_text(&out).unwrap();
                let chosen = b.select_resource(&validate_job_text(&jdl).unwrap(), "best", None).unwrap().ce_id;
                prop_assert_eq!(job.submit_to(), Some(chosen));
                // already resolved text passes through unchanged
                prop_assert_eq!(b.helper_resolve(&out).unwrap(), out);
            }
            Err(_) => prop_assert!(cs.is_empty()),
        }
    }

    #[test]
    fn stale_resources_are_not_matched(cs in ces(), ttl_s in 1u64..200) {
        let r = Registry::new(Duration::from_secs(ttl_s));
        let now = 1_000_000_000u64;
        for (i, c) in cs.iter().enumerate() {
            r.upsert_at(parse_ad(&ad(i, c)).unwrap(), now - c.age_s * 1000).unwrap();
        }
        let job = validate_job_text("[ Executable = \"/bin/true\"; Requirements = true; ]").unwrap();
        let got = find_matches(&job, &r.snapshot_at(now));
        let want: Vec<String> = cs.iter().enumerate().filter(|(_, c)| c.age_s <= ttl_s).map(|(i, _)| format!("CE{i:02}")).collect();
        prop_assert_eq!(got, want);
    }
}
